"""Stateful fuzzing: a conforming tester whose sends are occasionally mutated."""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from protocol_testbed.domain.compiler import CompiledSpec
from protocol_testbed.domain.errors import MinimizationError, RunawayError, TimeOverflowError
from protocol_testbed.domain.monitor import RoleReplay, check_trace
from protocol_testbed.domain.prng import Prng, derive_seed
from protocol_testbed.domain.protocol_spec import FieldDecl, MessageSchema
from protocol_testbed.domain.simulation import (
    Action,
    Idle,
    Observation,
    Send,
    SetTimer,
    Simulation,
    TimerFired,
)
from protocol_testbed.domain.tester import Tester, TesterEndpoint, TesterPolicy
from protocol_testbed.domain.value_objects import EventKind, FieldValue, Message, Trace, Verdict, ms

logger = logging.getLogger(__name__)

DEFAULT_MUTATION_RATE = 0.3
DELAY_TIMER_PREFIX = "__fuzz_delay_"
CRASH = "crash"
RUNAWAY = "runaway"


class MutationOperator(Enum):
    """Mutation operators; declaration order is the order prng_below(8) indexes."""

    FIELD_BOUNDARY = "FieldBoundary"
    FIELD_RANDOM = "FieldRandom"
    BYTE_NOISE = "ByteNoise"
    TRUNCATE = "Truncate"
    DUPLICATE = "Duplicate"
    DELAY = "Delay"
    REPLAY = "Replay"
    WRONG_STATE = "WrongState"


OPERATORS = list(MutationOperator)


@dataclass(frozen=True)
class InjectionPlan:
    """Messages to send in order, optionally held back by delay nanoseconds first."""

    operator: MutationOperator
    sends: tuple
    delay: int = 0


@dataclass(frozen=True)
class MutationContext:
    """What the stateful operators need to know about the session so far."""

    history: Sequence[Message] = ()
    wrong_state_types: Sequence[str] = ()
    delay: int = ms(200)


@dataclass(frozen=True)
class AppliedMutation:
    """One operator applied to the send_index-th send of a round."""

    send_index: int
    operator: MutationOperator

    def to_dict(self) -> Dict[str, object]:
        return {"step": self.send_index, "operator": self.operator.value}


@dataclass
class Finding:
    """
    A failing property or crash with everything needed to reproduce it.
    step_index counts simulation steps within the failing round, at most max_steps.
    """

    id: str
    seed: int
    round_index: int
    round_seed: int
    step_index: int
    operators_applied: List[AppliedMutation]
    verdict: Verdict
    trace: Trace = field(repr=False)
    detail: str = ""
    max_steps: Optional[int] = None

    @property
    def property_id(self) -> str:
        return self.verdict.reason


# Operators


def _pick(candidates: Sequence[FieldDecl], prng: Prng) -> FieldDecl:
    return candidates[prng.below(len(candidates))] if len(candidates) > 1 else candidates[0]


def _random_value(decl: FieldDecl, current: Optional[FieldValue], prng: Prng) -> FieldValue:
    if decl.is_integer:
        low, high = decl.bounds
        return low + prng.below(high - low + 1)
    size = len(current) if isinstance(current, (bytes, str)) and current else decl.length
    if decl.type == "bytes":
        return bytes(prng.below(256) for _ in range(size))
    return "".join(chr(ord("a") + prng.below(26)) for _ in range(size))


def _with_fields(message: Message, schema: MessageSchema, fields: Dict[str, FieldValue]) -> Message:
    return replace(message, fields=fields, size_bytes=schema.size_of(fields))


def _field_random(message: Message, schema: MessageSchema, prng: Prng) -> Message:
    if not schema.fields:
        return message
    decl = _pick(schema.fields, prng)
    fields = dict(message.fields)
    fields[decl.name] = _random_value(decl, fields.get(decl.name), prng)
    return _with_fields(message, schema, fields)


def _first_field_random(message: Message, schema: MessageSchema, prng: Prng) -> Message:
    """Degraded form shared by operators that do not apply to a message."""
    if not schema.fields:
        return message
    decl = schema.fields[0]
    fields = dict(message.fields)
    fields[decl.name] = _random_value(decl, fields.get(decl.name), prng)
    return _with_fields(message, schema, fields)


def mutate(
    message: Message,
    op: MutationOperator,
    compiled: CompiledSpec,
    prng: Prng,
    context: Optional[MutationContext] = None,
) -> Union[Message, InjectionPlan]:
    """
    Apply op to message. Payload operators return the edited message with its
    size recomputed; Duplicate, Delay, Replay and WrongState return a plan.
    An operator that does not apply degrades to FieldRandom on the first field.
    """
    context = context or MutationContext()
    schema = compiled.schema(message.msg_type) or MessageSchema(message.msg_type)

    if op == MutationOperator.FIELD_BOUNDARY:
        integers = [decl for decl in schema.fields if decl.is_integer]
        if not integers:
            return _first_field_random(message, schema, prng)
        decl = _pick(integers, prng)
        low, high = decl.bounds
        # max + 1 wraps back to the bottom of the range
        fields = dict(message.fields)
        fields[decl.name] = (low, high, low)[prng.below(3)]
        return _with_fields(message, schema, fields)

    if op == MutationOperator.FIELD_RANDOM:
        return _field_random(message, schema, prng)

    if op == MutationOperator.BYTE_NOISE:
        targets = [d for d in schema.fields if d.type == "bytes" and message.fields.get(d.name)]
        if not targets:
            return _first_field_random(message, schema, prng)
        decl = _pick(targets, prng)
        data = bytearray(message.fields[decl.name])  # type: ignore[arg-type]
        index = prng.below(len(data))
        data[index] ^= 1 + prng.below(255)
        fields = dict(message.fields)
        fields[decl.name] = bytes(data)
        return _with_fields(message, schema, fields)

    if op == MutationOperator.TRUNCATE:
        if not schema.fields:
            return message
        last = schema.fields[-1]
        fields = dict(message.fields)
        fields[last.name] = last.zero()
        return _with_fields(message, schema, fields)

    if op == MutationOperator.DUPLICATE:
        return InjectionPlan(op, (message, message))

    if op == MutationOperator.DELAY:
        return InjectionPlan(op, (message,), delay=context.delay)

    if op == MutationOperator.REPLAY:
        if not context.history:
            return InjectionPlan(MutationOperator.DUPLICATE, (message, message))
        previous = context.history[prng.below(len(context.history))]
        return InjectionPlan(op, (message, previous))

    candidates = list(context.wrong_state_types)
    if not candidates:
        return _first_field_random(message, schema, prng)
    msg_type = candidates[prng.below(len(candidates))]
    wrong_schema = compiled.schema(msg_type) or MessageSchema(msg_type)
    fields = {decl.name: _random_value(decl, None, prng) for decl in wrong_schema.fields}
    wrong = Message(protocol=message.protocol, msg_type=msg_type, fields=fields, size_bytes=wrong_schema.size_of(fields))
    return InjectionPlan(op, (wrong,))


# Session


class PeerTracker:
    """Replays the peer's spec state from the shared trace as it grows."""

    def __init__(self, compiled: CompiledSpec, role: str, endpoint: str, trace: Trace):
        self.compiled = compiled
        self.endpoint = endpoint
        self.trace = trace
        self.replay = RoleReplay.initial(compiled, role)
        self._cursor = 0

    def current(self) -> RoleReplay:
        events = self.trace.events
        while self._cursor < len(events):
            event = events[self._cursor]
            self._cursor += 1
            if event.endpoint == self.endpoint and event.kind in (
                EventKind.DELIVERED,
                EventKind.TIMER_FIRED,
                EventKind.SENT,
            ):
                self.replay.replay(self.compiled, event)
        return self.replay


def wrong_state_types(compiled: CompiledSpec, role: str, peer: RoleReplay) -> List[str]:
    """Message types role sends somewhere that the peer cannot receive in its current state."""
    accepted = compiled.receivable(peer.role, peer.state)
    return [msg_type for msg_type in compiled.sendable(role) if msg_type not in accepted]


class FuzzingEndpoint(TesterEndpoint):
    """
    Tester endpoint that, before each send k, draws bernoulli(rate) from a
    Prng derived for k and on a hit applies the operator picked by below(8)
    with a second derived Prng. allowed restricts which send indexes may be
    mutated, so a filtered schedule replays exactly.
    """

    def __init__(
        self,
        tester: Tester,
        peer: str,
        round_seed: int,
        mutation_rate: float,
        peer_tracker: PeerTracker,
        delay: int,
        allowed: Optional[FrozenSet[int]] = None,
    ):
        super().__init__(tester, peer)
        self.round_seed = round_seed
        self.mutation_rate = mutation_rate
        self.peer_tracker = peer_tracker
        self.delay = delay
        self.allowed = allowed
        self.applied: List[AppliedMutation] = []
        self.history: List[Message] = []
        self._send_index = 0
        self._held: Dict[str, List[Message]] = {}

    def handle(self, observation: Observation, now: int) -> List[Action]:
        if isinstance(observation, TimerFired) and observation.timer_id.startswith(DELAY_TIMER_PREFIX):
            return [Send(m, dst=self.peer) for m in self._held.pop(observation.timer_id, [])]
        return super().handle(observation, now)

    def route(self, actions: List[Action], now: int) -> List[Action]:
        routed: List[Action] = []
        for action in actions:
            if isinstance(action, Send):
                routed.extend(self._maybe_mutate(action.message))
            else:
                routed.append(action)
        return routed

    def _maybe_mutate(self, message: Message) -> List[Action]:
        index = self._send_index
        self._send_index += 1
        decision = Prng(derive_seed(self.round_seed, 2 * index))
        if not decision.bernoulli(self.mutation_rate):
            return self._emit([message])
        op = OPERATORS[decision.below(len(OPERATORS))]
        if self.allowed is not None and index not in self.allowed:
            return self._emit([message])
        wrong = wrong_state_types(self.tester.compiled, self.tester.played_role, self.peer_tracker.current())
        context = MutationContext(history=tuple(self.history), wrong_state_types=wrong, delay=self.delay)
        result = mutate(message, op, self.tester.compiled, Prng(derive_seed(self.round_seed, 2 * index + 1)), context)
        self.applied.append(AppliedMutation(index, op))
        logger.debug("send %d: %s on %s", index, op.value, message.msg_type)
        if isinstance(result, Message):
            return self._emit([result])
        if result.delay > 0:
            timer_id = f"{DELAY_TIMER_PREFIX}{index}"
            self._held[timer_id] = list(result.sends)
            self.history.extend(result.sends)
            return [SetTimer(timer_id, result.delay)]
        return self._emit(list(result.sends))

    def _emit(self, messages: List[Message]) -> List[Action]:
        self.history.extend(messages)
        return [Send(m, dst=self.peer) for m in messages]


class StrayingEndpoint(TesterEndpoint):
    """
    Adversarial tester endpoint. Ahead of each batch of the tester's sends it
    slips in message types the peer cannot accept in its replayed state, each
    eligible one with probability rate. A (peer state, type) pair goes out at
    most once per session.
    """

    def __init__(self, tester: Tester, peer: str, peer_tracker: PeerTracker, prng: Prng, rate: float):
        super().__init__(tester, peer)
        self.peer_tracker = peer_tracker
        self.prng = prng
        self.rate = rate
        self.strays: List[Tuple[int, str]] = []
        self._sent: Set[Tuple[str, str]] = set()

    def route(self, actions: List[Action], now: int) -> List[Action]:
        routed = super().route(actions, now)
        if not any(isinstance(action, Send) for action in routed):
            return routed
        return self._strays(now) + routed

    def _strays(self, now: int) -> List[Action]:
        compiled = self.tester.compiled
        peer = self.peer_tracker.current()
        out: List[Action] = []
        for msg_type in wrong_state_types(compiled, self.tester.played_role, peer):
            key = (peer.state, msg_type)
            if key in self._sent or not self.prng.bernoulli(self.rate):
                continue
            self._sent.add(key)
            schema = compiled.schema(msg_type) or MessageSchema(msg_type)
            fields = {decl.name: _random_value(decl, None, self.prng) for decl in schema.fields}
            message = Message(protocol=compiled.name, msg_type=msg_type, fields=fields, size_bytes=schema.size_of(fields))
            self.strays.append((now, msg_type))
            logger.debug("stray %s to %s in %s at t=%dns", msg_type, self.peer, peer.state, now)
            out.append(Send(message, dst=self.peer))
        return out


SimFactory = Callable[[int], Simulation]


@dataclass
class FuzzConfig:
    """Session parameters."""

    role: str = "client"
    tester_endpoint: str = "fuzzer"
    mutation_rate: float = DEFAULT_MUTATION_RATE
    budget_steps: int = 1000
    horizon: int = ms(10_000)
    delay: Optional[int] = None
    command: str = "fuzzer"


@dataclass
class RoundResult:
    verdict: Verdict
    trace: Trace
    applied: List[AppliedMutation]
    steps: int
    detail: str = ""


class FuzzSession:
    """
    Runs fuzz rounds against the implementation attached at target_endpoint
    by sim_factory, each round on a fresh simulation seeded from the session
    seed, until the step budget is spent or the implementation crashes.
    """

    def __init__(
        self,
        compiled: CompiledSpec,
        target_endpoint: str,
        sim_factory: SimFactory,
        seed: int,
        config: Optional[FuzzConfig] = None,
    ):
        self.compiled = compiled
        self.target_endpoint = target_endpoint
        self.sim_factory = sim_factory
        self.seed = seed
        self.config = config or FuzzConfig()
        if self.config.budget_steps < 1:
            raise ValueError("budget_steps must be at least 1")
        self.rounds_run = 0
        self.steps_used = 0
        self.last_result: Optional[RoundResult] = None

    def role_map(self) -> Dict[str, str]:
        peer = self.compiled.peer_roles(self.config.role)[0]
        return {self.config.tester_endpoint: self.config.role, self.target_endpoint: peer}

    def run(self) -> List[Finding]:
        """Findings in discovery order, at most one per property id."""
        findings: List[Finding] = []
        seen = set()
        round_index = 0
        while self.steps_used < self.config.budget_steps:
            round_seed = derive_seed(self.seed, round_index)
            max_steps = self.config.budget_steps - self.steps_used
            result = self.run_round(round_seed, max_steps=max_steps)
            self.last_result = result
            self.steps_used += max(result.steps, 1)
            self.rounds_run += 1
            if result.verdict.is_fail and result.verdict.reason not in seen:
                seen.add(result.verdict.reason)
                finding = Finding(
                    id=f"{result.verdict.reason}-{self.seed}-{round_index}",
                    seed=self.seed,
                    round_index=round_index,
                    round_seed=round_seed,
                    step_index=result.steps,
                    operators_applied=list(result.applied),
                    verdict=result.verdict,
                    trace=result.trace,
                    detail=result.detail,
                    max_steps=max_steps,
                )
                logger.info("finding %s after %d steps", finding.id, self.steps_used)
                findings.append(finding)
            if result.verdict.reason in (CRASH, RUNAWAY):
                break
            round_index += 1
        return findings

    def run_round(
        self,
        round_seed: int,
        allowed: Optional[FrozenSet[int]] = None,
        max_steps: Optional[int] = None,
    ) -> RoundResult:
        """One round: fresh simulation, lenient tester, mutated sends, offline check."""
        sim = self.sim_factory(round_seed)
        peer_role = self.compiled.peer_roles(self.config.role)[0]
        tester = Tester(
            self.compiled,
            self.config.role,
            TesterPolicy.UNIFORM_RANDOM,
            prng=Prng(round_seed),
            strict=False,
            online_monitoring=False,
        )
        delay = self.config.delay if self.config.delay is not None else self.compiled.constants.get("rto", ms(200))
        endpoint = FuzzingEndpoint(
            tester,
            self.target_endpoint,
            round_seed,
            self.config.mutation_rate,
            PeerTracker(self.compiled, peer_role, self.target_endpoint, sim.trace),
            delay,
            allowed,
        )
        sim.attach(self.config.tester_endpoint, endpoint)
        sim.log(
            self.config.tester_endpoint,
            self.config.command,
            attrs={"role": self.config.role, "command": self.config.command},
        )
        start = sim.steps
        try:
            sim.inject(self.config.tester_endpoint, Idle())
            trace = sim.run_until(self.config.horizon, max_steps=max_steps)
        except (RunawayError, TimeOverflowError) as exc:
            sim.trace.end_time = sim.clock
            return RoundResult(Verdict.fail(RUNAWAY, None, sim.trace), sim.trace, endpoint.applied, sim.steps - start, str(exc))
        if sim.errored:
            last = trace.events[-1].seq if trace.events else None
            return RoundResult(Verdict.fail(CRASH, last, trace), trace, endpoint.applied, sim.steps - start, sim.error or "")
        verdict = check_trace(self.compiled, trace, self.role_map(), judged_role=peer_role)
        return RoundResult(verdict, trace, endpoint.applied, sim.steps - start)

    def replay(self, finding: Finding, operators: Sequence[AppliedMutation]) -> Optional[Finding]:
        """Re-run the finding's round with only the given operators allowed; None when nothing fails."""
        allowed = frozenset(op.send_index for op in operators)
        result = self.run_round(finding.round_seed, allowed=allowed, max_steps=finding.max_steps)
        if not result.verdict.is_fail:
            return None
        return Finding(
            id=finding.id,
            seed=finding.seed,
            round_index=finding.round_index,
            round_seed=finding.round_seed,
            step_index=result.steps,
            operators_applied=list(result.applied),
            verdict=result.verdict,
            trace=result.trace,
            detail=result.detail,
            max_steps=finding.max_steps,
        )


def fuzz_session(
    compiled: CompiledSpec,
    target_endpoint: str,
    sim_factory: SimFactory,
    seed: int,
    budget_steps: int,
    mutation_rate: float = DEFAULT_MUTATION_RATE,
    role: str = "client",
) -> List[Finding]:
    """Run a session and return its findings."""
    config = FuzzConfig(role=role, mutation_rate=mutation_rate, budget_steps=budget_steps)
    return FuzzSession(compiled, target_endpoint, sim_factory, seed, config).run()


Replay = Callable[[Finding, Sequence[AppliedMutation]], Optional[Finding]]


def minimize(finding: Finding, replay: Replay) -> Finding:
    """
    Greedily drop applied operators, latest first, keeping a removal only when
    the same property still fails. Loops until no single removal is kept.
    """
    reproduced = replay(finding, finding.operators_applied)
    if reproduced is None or reproduced.property_id != finding.property_id:
        raise MinimizationError(
            f"finding {finding.id} does not reproduce ({finding.property_id} expected, "
            f"got {'pass' if reproduced is None else reproduced.property_id})"
        )
    best = reproduced
    current = list(best.operators_applied)
    changed = True
    while changed:
        changed = False
        for index in reversed(range(len(current))):
            candidate = current[:index] + current[index + 1 :]
            attempt = replay(finding, candidate)
            if attempt is not None and attempt.property_id == finding.property_id:
                best = attempt
                current = list(attempt.operators_applied)
                changed = True
                break
    logger.info("minimized %s from %d to %d operators", finding.id, len(finding.operators_applied), len(current))
    return best
