"""Tester plugins: how one test iteration is driven against its target."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional

from protocol_testbed.application.environments import DetSimNetwork, InProcessEnvironment
from protocol_testbed.domain.compiler import CompiledSpec
from protocol_testbed.domain.errors import MinimizationError, RunawayError, TimeOverflowError
from protocol_testbed.domain.exploration import ExplorationConfig, Explorer
from protocol_testbed.domain.fuzzer import (
    CRASH,
    RUNAWAY,
    Finding,
    FuzzConfig,
    FuzzSession,
    PeerTracker,
    StrayingEndpoint,
    minimize,
)
from protocol_testbed.domain.monitor import check_trace
from protocol_testbed.domain.prng import Prng, derive_seed
from protocol_testbed.domain.simulation import Idle, Reactor, Simulation
from protocol_testbed.domain.tester import Tester, TesterEndpoint, TesterPolicy
from protocol_testbed.domain.value_objects import Trace, Verdict

logger = logging.getLogger(__name__)

INCOMPLETE = "incomplete"

TESTER_SEED_INDEX = 1
IUT_SEED_INDEX = 2
STRAY_SEED_INDEX = 3


@dataclass
class IterationContext:
    """Everything a tester plugin needs to run one iteration."""

    test_name: str
    iteration: int
    seed: int
    timeout: int
    compiled: CompiledSpec
    network: DetSimNetwork
    environment: InProcessEnvironment
    tester_endpoint: str
    target_endpoint: str
    make_target: Callable[[int], Reactor]
    commands: Dict[str, str] = field(default_factory=dict)
    experiment: str = ""

    def peer_role(self, role: str) -> str:
        if role not in self.compiled.roles:
            raise ValueError(f"Unknown role '{role}' for {self.compiled.name} (roles: {', '.join(self.compiled.roles)})")
        return self.compiled.peer_roles(role)[0]

    def role_map(self, role: str) -> Dict[str, str]:
        return {self.tester_endpoint: role, self.target_endpoint: self.peer_role(role)}

    def simulation(self, seed: int, tester_role: str) -> Simulation:
        """Fresh simulation with the target attached and its launch command logged at t=0."""
        sim = self.network.create(seed, experiment=self.experiment)
        target = self.environment.wrap(self.target_endpoint, self.make_target(derive_seed(seed, IUT_SEED_INDEX)))
        sim.attach(self.target_endpoint, target)
        self.log_provenance(sim, self.target_endpoint, self.peer_role(tester_role))
        return sim

    def log_provenance(self, sim: Simulation, endpoint: str, role: str) -> None:
        command = self.commands.get(endpoint, endpoint)
        sim.log(endpoint, command, attrs={"role": role, "command": command})


@dataclass
class DriverResult:
    verdict: Verdict
    trace: Trace
    online: Optional[Verdict] = None
    tester_steps: int = 0
    findings: List[Finding] = field(default_factory=list)


def combine_verdicts(offline: Verdict, online: Optional[Verdict], completed: bool) -> Verdict:
    """Offline Fail, online Fail, offline Inconclusive, Inconclusive("incomplete"), then Pass."""
    if offline.is_fail:
        return offline
    if online is not None and online.is_fail:
        return online
    if offline.is_inconclusive:
        return offline
    if not completed:
        return Verdict.inconclusive(INCOMPLETE)
    return offline


def _abnormal_end(sim: Simulation, exc: Optional[Exception] = None) -> Optional[Verdict]:
    if exc is not None:
        sim.trace.end_time = sim.clock
        logger.warning("simulation aborted: %s", exc)
        return Verdict.fail(RUNAWAY, None, sim.trace)
    if sim.errored:
        last = sim.trace.events[-1].seq if sim.trace.events else None
        logger.warning("service %s failed: %s", sim.error_endpoint, sim.error)
        return Verdict.fail(CRASH, last, sim.trace)
    return None


@dataclass(frozen=True)
class SpecTesterDriver:
    """
    A strict tester derived from the protocol specification, judged online and
    offline. With stray_rate above 0 it also sends message types the target
    cannot accept in its current state, and only the target is judged.
    """

    role: str = "client"
    policy: TesterPolicy = TesterPolicy.UNIFORM_RANDOM
    max_steps: int = 100_000
    stray_rate: float = 0.0

    @staticmethod
    def from_params(params: Mapping[str, Any]) -> "SpecTesterDriver":
        return SpecTesterDriver(
            role=str(params.get("role", "client")),
            policy=TesterPolicy(params.get("policy", TesterPolicy.UNIFORM_RANDOM.value)),
            max_steps=int(params.get("max_steps", 100_000)),
            stray_rate=float(params.get("stray_rate", 0.0)),
        )

    def _endpoint(self, tester: Tester, context: IterationContext, sim: Simulation, peer_role: str) -> TesterEndpoint:
        if self.stray_rate <= 0:
            return TesterEndpoint(tester, context.target_endpoint)
        return StrayingEndpoint(
            tester,
            context.target_endpoint,
            PeerTracker(context.compiled, peer_role, context.target_endpoint, sim.trace),
            Prng(derive_seed(context.seed, STRAY_SEED_INDEX)),
            self.stray_rate,
        )

    def run(self, context: IterationContext) -> DriverResult:
        sim = context.simulation(context.seed, self.role)
        peer_role = context.compiled.peer_roles(self.role)[0]
        tester = Tester(
            context.compiled,
            self.role,
            self.policy,
            prng=Prng(derive_seed(context.seed, TESTER_SEED_INDEX)),
            strict=True,
        )
        endpoint = self._endpoint(tester, context, sim, peer_role)
        sim.attach(context.tester_endpoint, context.environment.wrap(context.tester_endpoint, endpoint))
        context.log_provenance(sim, context.tester_endpoint, self.role)
        try:
            sim.inject(context.tester_endpoint, Idle())
            trace = sim.run_until(context.timeout, max_steps=self.max_steps)
        except (RunawayError, TimeOverflowError) as exc:
            return DriverResult(_abnormal_end(sim, exc) or Verdict.fail(RUNAWAY), sim.trace, tester.verdict, tester.steps)
        crashed = _abnormal_end(sim)
        if crashed is not None:
            return DriverResult(crashed, trace, tester.verdict, tester.steps)
        offline = check_trace(
            context.compiled,
            trace,
            context.role_map(self.role),
            observer_role=self.role,
            judged_role=peer_role if self.stray_rate > 0 else None,
        )
        verdict = combine_verdicts(offline, tester.verdict, completed=tester.stopped)
        logger.info(
            "%s[%d]: %s %s after %d tester steps",
            context.test_name,
            context.iteration,
            verdict.status.value,
            verdict.reason,
            tester.steps,
        )
        return DriverResult(verdict, trace, tester.verdict, tester.steps)


@dataclass(frozen=True)
class FuzzerDriver:
    """Stateful fuzzing session; the iteration fails with the first finding's property."""

    role: str = "client"
    mutation_rate: float = 0.3
    budget_steps: int = 1000
    minimize: bool = True

    @staticmethod
    def from_params(params: Mapping[str, Any]) -> "FuzzerDriver":
        return FuzzerDriver(
            role=str(params.get("role", "client")),
            mutation_rate=float(params.get("mutation_rate", 0.3)),
            budget_steps=int(params.get("budget_steps", 1000)),
            minimize=bool(params.get("minimize", True)),
        )

    def run(self, context: IterationContext) -> DriverResult:
        config = FuzzConfig(
            role=self.role,
            tester_endpoint=context.tester_endpoint,
            mutation_rate=self.mutation_rate,
            budget_steps=self.budget_steps,
            horizon=context.timeout,
            command=context.commands.get(context.tester_endpoint, context.tester_endpoint),
        )
        session = FuzzSession(
            context.compiled,
            context.target_endpoint,
            lambda round_seed: context.simulation(round_seed, self.role),
            context.seed,
            config,
        )
        findings = session.run()
        if self.minimize:
            findings = [self._minimized(finding, session) for finding in findings]
        logger.info(
            "%s[%d]: %d findings in %d rounds", context.test_name, context.iteration, len(findings), session.rounds_run
        )
        if findings:
            first = findings[0]
            return DriverResult(first.verdict, first.trace, tester_steps=session.steps_used, findings=findings)
        trace = session.last_result.trace if session.last_result else Trace()
        return DriverResult(Verdict.passed(), trace, tester_steps=session.steps_used)

    @staticmethod
    def _minimized(finding: Finding, session: FuzzSession) -> Finding:
        try:
            return minimize(finding, session.replay)
        except MinimizationError as exc:
            logger.warning("keeping %s unminimized: %s", finding.id, exc)
            return finding


@dataclass(frozen=True)
class ExplorerDriver:
    """Exhaustive exploration of the tester's choices; fails with the first failing path."""

    role: str = "client"
    max_depth: int = 12
    stray_budget: int = 1
    max_runs: int = 10_000

    @staticmethod
    def from_params(params: Mapping[str, Any]) -> "ExplorerDriver":
        return ExplorerDriver(
            role=str(params.get("role", "client")),
            max_depth=int(params.get("max_depth", 12)),
            stray_budget=int(params.get("stray_budget", 1)),
            max_runs=int(params.get("max_runs", 10_000)),
        )

    def run(self, context: IterationContext) -> DriverResult:
        config = ExplorationConfig(
            role=self.role,
            tester_endpoint=context.tester_endpoint,
            max_depth=self.max_depth,
            stray_budget=self.stray_budget,
            max_runs=self.max_runs,
            horizon=context.timeout,
            seed=context.seed,
            command=context.commands.get(context.tester_endpoint, context.tester_endpoint),
        )
        explorer = Explorer(
            context.compiled,
            context.target_endpoint,
            lambda seed: context.simulation(seed, self.role),
            config,
        )
        report = explorer.explore()
        if report.failures:
            first = report.failures[0]
            return DriverResult(first.verdict, first.trace, tester_steps=report.runs)
        if report.truncated:
            return DriverResult(Verdict.inconclusive("truncated"), Trace(), tester_steps=report.runs)
        trace = report.default_path.trace if report.default_path else Trace()
        return DriverResult(Verdict.passed(), trace, tester_steps=report.runs)
