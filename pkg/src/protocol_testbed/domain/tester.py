"""Adversarial testers derived from a compiled specification."""

import logging
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from protocol_testbed.domain.compiler import CompiledSpec, Firing, enabled_transitions, fire
from protocol_testbed.domain.errors import GuardEvaluationError
from protocol_testbed.domain.monitor import UNEXPECTED_MESSAGE, PropertyMonitor, RoleReplay
from protocol_testbed.domain.prng import Prng
from protocol_testbed.domain.protocol_spec import FieldDecl, Transition
from protocol_testbed.domain.simulation import (
    Action,
    Annotate,
    Delivered,
    Idle,
    Observation,
    Send,
    Stop,
    TimerFired,
)
from protocol_testbed.domain.value_objects import Event, EventKind, FieldValue, Message, Verdict

logger = logging.getLogger(__name__)

ACTION_EVAL = "action-eval"


class TesterPolicy(Enum):
    """How a tester picks among enabled spontaneous transitions."""

    UNIFORM_RANDOM = "UniformRandom"
    COVERAGE_GREEDY = "CoverageGreedy"


class Tester:
    """
    Plays one role of a compiled spec against an implementation. Controls the
    role's spontaneous and timer transitions and the free fields of its sends;
    judges every delivery against the role's receive transitions.

    A strict tester stops with Fail("unexpected-message") on a delivery no
    transition accepts; a lenient one ignores it.
    """

    def __init__(
        self,
        compiled: CompiledSpec,
        played_role: str,
        policy: TesterPolicy = TesterPolicy.UNIFORM_RANDOM,
        prng: Optional[Prng] = None,
        strict: bool = True,
        online_monitoring: bool = True,
    ):
        if played_role not in compiled.roles:
            raise ValueError(f"Unknown role '{played_role}' (roles: {', '.join(compiled.roles)})")
        self.compiled = compiled
        self.played_role = played_role
        self.peer_role = compiled.peer_roles(played_role)[0]
        self.policy = policy
        self.prng = prng or Prng(0)
        self.strict = strict
        self.own = RoleReplay.initial(compiled, played_role)
        self.coverage: Dict[str, int] = {t.id: 0 for t in compiled.all_transitions(played_role)}
        self.stopped = False
        self.verdict: Optional[Verdict] = None
        self.steps = 0
        self.last_move: Optional[Tuple[str, str, str]] = None
        self._event_seq = 0
        self._monitor: Optional[PropertyMonitor] = None
        if online_monitoring:
            self._monitor = PropertyMonitor.for_role(
                compiled, played_role, {played_role: played_role, self.peer_role: self.peer_role}
            )

    @property
    def state(self) -> str:
        return self.own.state

    @property
    def variables(self) -> Dict[str, object]:
        return dict(self.own.variables)

    def in_final_state(self) -> bool:
        return self.compiled.is_final(self.played_role, self.own.state)

    def covered(self) -> int:
        """Number of distinct transitions taken at least once."""
        return sum(1 for count in self.coverage.values() if count > 0)

    def fill(self, decl: FieldDecl) -> FieldValue:
        """Uniform draw within the field's declared range."""
        if decl.is_integer:
            low, high = decl.bounds
            return low + self.prng.below(high - low + 1)
        if decl.type == "bytes":
            return bytes(self.prng.below(256) for _ in range(decl.length))
        return "".join("abcdefghijklmnopqrstuvwxyz"[self.prng.below(26)] for _ in range(decl.length))

    # Stepping

    def step(self, observation: Observation, now: int = 0) -> List[Action]:
        """React to one observation; see tester_step."""
        if self.stopped:
            return []
        self.steps += 1
        overdue = self._monitor.expire(now) if self._monitor else None
        if overdue is not None:
            return self._stop(overdue)
        if isinstance(observation, Delivered):
            return self._on_delivered(observation.message, now)
        if isinstance(observation, TimerFired):
            return self._on_timer(observation.timer_id, now)
        return self._on_idle(now)

    def _on_delivered(self, message: Message, now: int) -> List[Action]:
        matches = enabled_transitions(self.compiled, self.played_role, self.own.state, self.own.variables, message)
        actions: List[Action] = []
        if matches:
            fired = self._execute(matches[0], received=message)
            if fired is None:
                return self._stop(Verdict.fail(ACTION_EVAL))
            actions = fired.actions
        event = self._observe(EventKind.DELIVERED, now, src=self.peer_role, dst=self.played_role, message=message)
        violation = self._check_safety(event)
        if violation is not None:
            return self._stop(violation)
        if not matches:
            if self.strict:
                logger.info("%s tester: unexpected %s in %s", self.played_role, message.msg_type, self.own.state)
                return self._stop(Verdict.fail(UNEXPECTED_MESSAGE, event.seq))
            logger.debug("%s tester ignores %s in %s", self.played_role, message.msg_type, self.own.state)
        self._track(event)
        return self._after_sends(actions, now)

    def _on_timer(self, timer_id: str, now: int) -> List[Action]:
        matches = enabled_transitions(
            self.compiled, self.played_role, self.own.state, self.own.variables, TimerFired(timer_id)
        )
        if not matches:
            return []
        fired = self._execute(matches[0])
        if fired is None:
            return self._stop(Verdict.fail(ACTION_EVAL))
        return self._after_sends(fired.actions, now)

    def _on_idle(self, now: int) -> List[Action]:
        candidates = enabled_transitions(self.compiled, self.played_role, self.own.state, self.own.variables)
        if not candidates:
            if self.in_final_state():
                return self._stop(Verdict.passed())
            return []
        return self.take(self.choose(candidates), now)

    def choose(self, candidates: List[Transition]) -> Transition:
        """Pick one enabled spontaneous transition according to the policy."""
        if self.policy == TesterPolicy.COVERAGE_GREEDY:
            least = min(self.coverage.get(t.id, 0) for t in candidates)
            ties = [t for t in candidates if self.coverage.get(t.id, 0) == least]
            return ties[self.prng.below(len(ties))] if len(ties) > 1 else ties[0]
        return candidates[self.prng.below(len(candidates))]

    def take(self, transition: Transition, now: int = 0) -> List[Action]:
        """Execute a chosen spontaneous transition with freshly filled free fields."""
        fired = self._execute(transition)
        if fired is None:
            return self._stop(Verdict.fail(ACTION_EVAL))
        return self._after_sends(fired.actions, now)

    def _execute(self, transition: Transition, received: Optional[Message] = None) -> Optional[Firing]:
        try:
            firing = fire(self.compiled, transition, self.own.variables, received=received, fill=self.fill)
        except GuardEvaluationError as exc:
            logger.warning("%s tester: actions of %s failed: %s", self.played_role, transition.id, exc)
            return None
        logger.debug("%s tester: %s %s -> %s", self.played_role, transition.id, self.own.state, transition.to_state)
        self.last_move = (transition.id, self.own.state, transition.to_state)
        self.own.apply(transition, firing)
        self.coverage[transition.id] = self.coverage.get(transition.id, 0) + 1
        return firing

    def _after_sends(self, actions: List[Action], now: int) -> List[Action]:
        for action in actions:
            if isinstance(action, Send):
                event = self._observe(EventKind.SENT, now, src=self.played_role, dst=self.peer_role, message=action.message)
                violation = self._check_safety(event)
                if violation is not None:
                    return list(actions) + self._stop(violation)
                self._track(event)
        return list(actions)

    # Online monitoring

    def _observe(self, kind: EventKind, now: int, src: str, dst: str, message: Message) -> Event:
        event = Event(seq=self._event_seq, time=now, kind=kind, src=src, dst=dst, payload=message)
        self._event_seq += 1
        return event

    def _check_safety(self, event: Event) -> Optional[Verdict]:
        if self._monitor is None:
            return None
        return self._monitor.check_safety(event, {self.played_role: self.own})

    def _track(self, event: Event) -> None:
        if self._monitor is not None:
            self._monitor.track_timed(event, {self.played_role: self.own})

    def _stop(self, verdict: Verdict) -> List[Action]:
        self.stopped = True
        self.verdict = verdict
        logger.info("%s tester stops: %s %s", self.played_role, verdict.status.value, verdict.reason)
        return [Stop(verdict)]


def derive_tester(
    compiled: CompiledSpec,
    played_role: str,
    policy: TesterPolicy = TesterPolicy.UNIFORM_RANDOM,
    seed: int = 0,
    strict: bool = True,
) -> Tester:
    """Tester at the role's initial state with a seeded Prng and zero coverage."""
    return Tester(compiled, played_role, policy=policy, prng=Prng(seed), strict=strict)


def tester_step(tester: Tester, observation: Observation, now: int = 0) -> List[Action]:
    """
    Delivered: take the first matching receive or stop on an unexpected message.
    TimerFired: take the matching timer transition, if any. Idle: take an
    enabled spontaneous transition chosen by policy, stop with Pass in a final
    state, otherwise wait.
    """
    return tester.step(observation, now)


class TesterEndpoint:
    """
    Reactor that plays a Tester inside a Simulation: addresses its sends to
    the peer endpoint, records taken transitions as StateTransition events and
    keeps offering Idle until the tester has nothing more to do at this instant.
    """

    MAX_IDLE_ROUNDS = 10_000

    def __init__(self, tester: Tester, peer: str):
        self.tester = tester
        self.peer = peer

    def handle(self, observation: Observation, now: int) -> List[Action]:
        actions = self._step(observation, now)
        for _ in range(self.MAX_IDLE_ROUNDS):
            if self.tester.stopped:
                return actions
            taken = self.tester.own.transitions_taken
            more = self._step(Idle(), now)
            actions.extend(more)
            if not more and self.tester.own.transitions_taken == taken:
                return actions
        raise RuntimeError(f"{self.tester.played_role} tester keeps acting at t={now}ns")

    def _step(self, observation: Observation, now: int) -> List[Action]:
        return self.collect(lambda: self.tester.step(observation, now), now)

    def collect(self, produce: Callable[[], List[Action]], now: int) -> List[Action]:
        """Run one tester move, annotating the transition it took and routing its sends."""
        taken = self.tester.own.transitions_taken
        produced = produce()
        actions: List[Action] = []
        if self.tester.own.transitions_taken != taken and self.tester.last_move is not None:
            transition_id, source, target = self.tester.last_move
            actions.append(
                Annotate(
                    EventKind.STATE_TRANSITION,
                    {"role": self.tester.played_role, "transition": transition_id, "from": source, "to": target},
                )
            )
        actions.extend(self.route(produced, now))
        return actions

    def route(self, actions: List[Action], now: int) -> List[Action]:
        """Address sends to the peer; subclasses may rewrite what goes out."""
        return [Send(a.message, dst=self.peer) if isinstance(a, Send) and a.dst is None else a for a in actions]
