"""Bounded exhaustive exploration of a tester's choices."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from protocol_testbed.domain.compiler import CompiledSpec, enabled_transitions
from protocol_testbed.domain.errors import RunawayError, TimeOverflowError
from protocol_testbed.domain.fuzzer import CRASH, RUNAWAY, SimFactory
from protocol_testbed.domain.monitor import check_trace
from protocol_testbed.domain.prng import Prng
from protocol_testbed.domain.simulation import Action, Idle, Observation, Send
from protocol_testbed.domain.tester import Tester, TesterEndpoint, TesterPolicy
from protocol_testbed.domain.value_objects import Message, Trace, Verdict, ms

logger = logging.getLogger(__name__)

WAIT = "wait"
TAKE = "take"
STRAY = "stray"


class ChoiceScript:
    """
    Answers choice points from a fixed prefix, then with option 0. Records
    every decision and the number of options it had; points beyond max_depth
    are recorded as having a single option so they are never branched on.
    """

    def __init__(self, prefix: Sequence[int], max_depth: int):
        self.prefix = list(prefix)
        self.max_depth = max_depth
        self.made: List[int] = []
        self.arities: List[int] = []

    def next(self, arity: int) -> int:
        if arity <= 1:
            return 0
        index = len(self.made)
        choice = self.prefix[index] if index < len(self.prefix) else 0
        if choice >= arity:
            # the prefix came from a run that diverged here
            choice = 0
        self.made.append(choice)
        self.arities.append(arity if index < self.max_depth else 1)
        return choice


class ExplorerEndpoint(TesterEndpoint):
    """
    Tester endpoint whose choices come from a script instead of the Prng.
    At each instant the options are the enabled spontaneous transitions, a
    stray send of every message type the role may send while strays remain,
    and waiting when no spontaneous transition is enabled.
    """

    def __init__(self, tester: Tester, peer: str, script: ChoiceScript, stray_budget: int = 1):
        super().__init__(tester, peer)
        self.script = script
        self.strays_left = stray_budget
        self.strays: List[Tuple[int, str]] = []

    def handle(self, observation: Observation, now: int) -> List[Action]:
        actions: List[Action] = [] if isinstance(observation, Idle) else self._step(observation, now)
        for _ in range(self.MAX_IDLE_ROUNDS):
            if self.tester.stopped:
                return actions
            move = self._decide(now)
            if move is None:
                return actions
            actions.extend(move)
        raise RuntimeError(f"{self.tester.played_role} explorer keeps acting at t={now}ns")

    def options(self) -> List[Tuple[str, object]]:
        tester = self.tester
        candidates = enabled_transitions(tester.compiled, tester.played_role, tester.state, tester.own.variables)
        options: List[Tuple[str, object]] = [(TAKE, t) for t in candidates]
        if not candidates:
            options.append((WAIT, None))
        if self.strays_left > 0:
            options.extend((STRAY, msg_type) for msg_type in tester.compiled.sendable(tester.played_role))
        return options

    def _decide(self, now: int) -> Optional[List[Action]]:
        tester = self.tester
        options = self.options()
        if options == [(WAIT, None)] and tester.in_final_state():
            return self._step(Idle(), now)
        kind, value = options[self.script.next(len(options))]
        if kind == WAIT:
            return None
        if kind == TAKE:
            return self.collect(lambda: tester.take(value, now), now)  # type: ignore[arg-type]
        self.strays_left -= 1
        self.strays.append((now, str(value)))
        logger.debug("stray %s at t=%dns", value, now)
        return [Send(self._stray(str(value)), dst=self.peer)]

    def _stray(self, msg_type: str) -> Message:
        schema = self.tester.compiled.schema(msg_type)
        assert schema is not None, msg_type
        fields = {decl.name: self.tester.fill(decl) for decl in schema.fields}
        return Message(
            protocol=self.tester.compiled.name,
            msg_type=msg_type,
            fields=fields,
            size_bytes=schema.size_of(fields),
        )


@dataclass
class ExplorationRun:
    """One explored path: the decisions taken and the offline verdict."""

    choices: List[int]
    verdict: Verdict
    trace: Trace = field(repr=False)
    strays: List[Tuple[int, str]] = field(default_factory=list)


@dataclass
class ExplorationReport:
    runs: int = 0
    truncated: bool = False
    failures: List[ExplorationRun] = field(default_factory=list)
    default_path: Optional[ExplorationRun] = None

    @property
    def failed_properties(self) -> List[str]:
        """Distinct failing property ids in discovery order."""
        seen: List[str] = []
        for run in self.failures:
            if run.verdict.reason not in seen:
                seen.append(run.verdict.reason)
        return seen


@dataclass
class ExplorationConfig:
    role: str = "client"
    tester_endpoint: str = "explorer"
    max_depth: int = 12
    stray_budget: int = 1
    max_runs: int = 10_000
    horizon: int = ms(10_000)
    seed: int = 0
    command: str = "explorer"


class Explorer:
    """
    Depth-first enumeration of every script up to max_depth choice points.
    Each script runs on a fresh simulation from sim_factory(seed) and is
    judged offline without an observer role.
    """

    def __init__(
        self,
        compiled: CompiledSpec,
        target_endpoint: str,
        sim_factory: SimFactory,
        config: Optional[ExplorationConfig] = None,
    ):
        self.compiled = compiled
        self.target_endpoint = target_endpoint
        self.sim_factory = sim_factory
        self.config = config or ExplorationConfig()
        if self.config.max_depth < 0:
            raise ValueError("max_depth must not be negative")

    def explore(self) -> ExplorationReport:
        report = ExplorationReport()
        pending: List[List[int]] = [[]]
        while pending:
            if report.runs >= self.config.max_runs:
                report.truncated = True
                logger.warning("exploration of %s stopped after %d runs", self.compiled.name, report.runs)
                break
            prefix = pending.pop()
            run, script = self.run_script(prefix)
            report.runs += 1
            if report.default_path is None:
                report.default_path = run
            if run.verdict.is_fail:
                report.failures.append(run)
            branches = [
                script.made[:index] + [choice]
                for index in range(len(prefix), len(script.made))
                for choice in range(1, script.arities[index])
            ]
            pending.extend(reversed(branches))
        logger.info(
            "explored %d paths of %s: %d failing", report.runs, self.compiled.name, len(report.failures)
        )
        return report

    def run_script(self, prefix: Sequence[int]) -> Tuple[ExplorationRun, ChoiceScript]:
        script = ChoiceScript(prefix, self.config.max_depth)
        sim = self.sim_factory(self.config.seed)
        tester = Tester(
            self.compiled,
            self.config.role,
            TesterPolicy.UNIFORM_RANDOM,
            prng=Prng(self.config.seed),
            strict=False,
            online_monitoring=False,
        )
        endpoint = ExplorerEndpoint(tester, self.target_endpoint, script, self.config.stray_budget)
        sim.attach(self.config.tester_endpoint, endpoint)
        sim.log(
            self.config.tester_endpoint,
            self.config.command,
            attrs={"role": self.config.role, "command": self.config.command},
        )
        try:
            sim.inject(self.config.tester_endpoint, Idle())
            trace = sim.run_until(self.config.horizon)
        except (RunawayError, TimeOverflowError):
            sim.trace.end_time = sim.clock
            verdict = Verdict.fail(RUNAWAY, None, sim.trace)
            return ExplorationRun(list(script.made), verdict, sim.trace, endpoint.strays), script
        if sim.errored:
            last = trace.events[-1].seq if trace.events else None
            verdict = Verdict.fail(CRASH, last, trace)
        else:
            peer_role = self.compiled.peer_roles(self.config.role)[0]
            role_map = {self.config.tester_endpoint: self.config.role, self.target_endpoint: peer_role}
            verdict = check_trace(self.compiled, trace, role_map, judged_role=peer_role)
        return ExplorationRun(list(script.made), verdict, trace, endpoint.strays), script


def explore(
    compiled: CompiledSpec,
    target_endpoint: str,
    sim_factory: SimFactory,
    max_depth: int = 12,
    stray_budget: int = 1,
    role: str = "client",
) -> ExplorationReport:
    config = ExplorationConfig(role=role, max_depth=max_depth, stray_budget=stray_budget)
    return Explorer(compiled, target_endpoint, sim_factory, config).explore()
