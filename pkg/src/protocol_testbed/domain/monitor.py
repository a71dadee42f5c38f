"""Offline trace checking: replays role machines and evaluates safety and timed properties."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

from protocol_testbed.domain.compiler import CompiledSpec, Firing, enabled_transitions, fire
from protocol_testbed.domain.errors import GuardEvaluationError
from protocol_testbed.domain.guard import Value, evaluate
from protocol_testbed.domain.protocol_spec import EventPattern, SafetyProperty, TimedProperty, Transition
from protocol_testbed.domain.simulation import TimerFired
from protocol_testbed.domain.value_objects import Event, EventKind, Trace, Verdict, checked_add

logger = logging.getLogger(__name__)

UNEXPECTED_MESSAGE = "unexpected-message"
UNKNOWN_MESSAGE = "unknown-message"
HORIZON = "horizon"


@dataclass
class RoleReplay:
    """Spec-level state of one role reconstructed from trace events."""

    role: str
    state: str
    variables: Dict[str, Value]
    pending_sends: List[str] = field(default_factory=list)
    transitions_taken: int = 0

    @staticmethod
    def initial(compiled: CompiledSpec, role: str) -> "RoleReplay":
        return RoleReplay(
            role=role,
            state=compiled.initial_state(role),
            variables=dict(compiled.initial_vars[role]),
        )

    def apply(self, transition: Transition, firing: Firing) -> None:
        """Commit a fired transition."""
        self.variables = firing.variables
        self.state = transition.to_state
        self.transitions_taken += 1

    def replay(self, compiled: CompiledSpec, event: Event) -> bool:
        """
        Advance over one event at this role. Returns False only for a delivery
        no transition accepts.
        """
        if event.kind == EventKind.DELIVERED and event.payload is not None:
            matches = enabled_transitions(compiled, self.role, self.state, self.variables, event.payload)
            if not matches:
                return False
            self._fire(compiled, matches[0], received=event.payload)
        elif event.kind == EventKind.TIMER_FIRED:
            matches = enabled_transitions(
                compiled, self.role, self.state, self.variables, TimerFired(event.attrs.get("timer_id", ""))
            )
            if matches:
                self._fire(compiled, matches[0])
        elif event.kind == EventKind.SENT and event.payload is not None:
            msg_type = event.payload.msg_type
            if msg_type in self.pending_sends:
                self.pending_sends.remove(msg_type)
                return True
            for transition in enabled_transitions(compiled, self.role, self.state, self.variables):
                first = transition.first_send()
                if first is not None and first.msg_type == msg_type:
                    self._fire(compiled, transition, sent=event.payload, skip_first_send=True)
                    break
        return True

    def _fire(self, compiled: CompiledSpec, transition: Transition, received=None, sent=None, skip_first_send=False) -> None:
        try:
            firing = fire(compiled, transition, self.variables, received=received, sent=sent)
        except GuardEvaluationError as exc:
            logger.warning("replay of %s at %s failed: %s", transition.id, self.role, exc)
            return
        sends = firing.sends[1:] if skip_first_send else firing.sends
        self.pending_sends.extend(message.msg_type for message in sends)
        self.apply(transition, firing)


@dataclass
class _Obligation:
    prop: TimedProperty
    trigger_seq: int
    trigger_time: int
    deadline_at: int
    trigger_fields: Dict[str, Value]


class PropertyMonitor:
    """
    Evaluates safety and timed properties event by event over replayed role
    state. Used offline by check_trace and online by testers.
    """

    def __init__(
        self,
        compiled: CompiledSpec,
        role_map: Mapping[str, str],
        safety: Optional[List[SafetyProperty]] = None,
        timed: Optional[List[TimedProperty]] = None,
    ):
        self.compiled = compiled
        self.role_map = dict(role_map)
        self.safety = list(compiled.spec.safety_properties if safety is None else safety)
        self.timed = list(compiled.spec.timed_properties if timed is None else timed)
        self.obligations: List[_Obligation] = []

    @staticmethod
    def for_role(compiled: CompiledSpec, role: str, role_map: Mapping[str, str]) -> "PropertyMonitor":
        """Monitor restricted to the properties that only read the given role."""
        own = {prop_id for prop_id, roles in compiled.property_roles.items() if roles <= {role}}
        return PropertyMonitor(
            compiled,
            role_map,
            safety=[p for p in compiled.spec.safety_properties if p.id in own],
            timed=[p for p in compiled.spec.timed_properties if p.id in own],
        )

    @staticmethod
    def judging(compiled: CompiledSpec, role_map: Mapping[str, str], role: str) -> "PropertyMonitor":
        """Monitor restricted to the properties whose scoped or answering events the given role produces."""
        return PropertyMonitor(
            compiled,
            role_map,
            safety=[p for p in compiled.spec.safety_properties if producing_role(compiled, p.scope) in (role, None)],
            timed=[p for p in compiled.spec.timed_properties if producing_role(compiled, p.response) in (role, None)],
        )

    def property_ids(self) -> List[str]:
        return [p.id for p in self.safety] + [p.id for p in self.timed]

    def expire(self, now: int, trace: Optional[Trace] = None) -> Optional[Verdict]:
        """Fail for the earliest obligation whose deadline lies before now."""
        overdue = [o for o in self.obligations if o.deadline_at < now]
        if not overdue:
            return None
        first = min(overdue, key=lambda o: (o.deadline_at, o.trigger_seq))
        return Verdict.fail(first.prop.id, first.trigger_seq, trace)

    def check_safety(
        self, event: Event, replays: Mapping[str, RoleReplay], trace: Optional[Trace] = None
    ) -> Optional[Verdict]:
        """Fail for the first safety property, in declaration order, violated at event."""
        for prop in self.safety:
            if not self._matches(prop.scope, event, replays, None):
                continue
            env = self._env(event, replays, None)
            if not self._holds(prop.predicate, env, prop.id):
                logger.info("property %s violated at event %d", prop.id, event.seq)
                return Verdict.fail(prop.id, event.seq, trace)
        return None

    def track_timed(self, event: Event, replays: Mapping[str, RoleReplay]) -> None:
        """Discharge obligations answered or excused by event, then open new ones it triggers."""
        remaining = []
        for obligation in self.obligations:
            prop = obligation.prop
            if event.time > obligation.trigger_time and self._matches(prop.response, event, replays, obligation.trigger_fields):
                continue
            if prop.excuse is not None and event.seq > obligation.trigger_seq and self._matches(
                prop.excuse, event, replays, obligation.trigger_fields
            ):
                continue
            remaining.append(obligation)
        self.obligations = remaining
        for prop in self.timed:
            if self._matches(prop.trigger, event, replays, None):
                self.obligations.append(
                    _Obligation(
                        prop=prop,
                        trigger_seq=event.seq,
                        trigger_time=event.time,
                        deadline_at=checked_add(event.time, self.compiled.deadlines[prop.id]),
                        trigger_fields=dict(event.payload.fields) if event.payload else {},
                    )
                )

    def finish(self, end_time: int, trace: Optional[Trace] = None) -> Verdict:
        """Verdict for obligations still open when observation ends at end_time."""
        if not self.obligations:
            return Verdict.passed()
        due = [o for o in self.obligations if end_time >= o.deadline_at]
        if due:
            first = min(due, key=lambda o: (o.deadline_at, o.trigger_seq))
            return Verdict.fail(first.prop.id, first.trigger_seq, trace)
        return Verdict.inconclusive(HORIZON)

    # Matching

    def _matches(
        self,
        pattern: EventPattern,
        event: Event,
        replays: Mapping[str, RoleReplay],
        trigger_fields: Optional[Mapping[str, Value]],
    ) -> bool:
        if event.kind != pattern.kind:
            return False
        if pattern.src is not None and self.role_map.get(event.src or "") != pattern.src:
            return False
        if pattern.dst is not None and self.role_map.get(event.dst or "") != pattern.dst:
            return False
        if pattern.msg_type is not None and (event.payload is None or event.payload.msg_type != pattern.msg_type):
            return False
        if pattern.where is None:
            return True
        return self._holds(pattern.where, self._env(event, replays, trigger_fields), "pattern")

    def _env(
        self,
        event: Event,
        replays: Mapping[str, RoleReplay],
        trigger_fields: Optional[Mapping[str, Value]],
    ) -> Dict[str, Value]:
        env: Dict[str, Value] = dict(self.compiled.spec.constants)
        for role, replay in replays.items():
            env[f"{role}.state"] = replay.state
            for name, value in replay.variables.items():
                env[f"{role}.{name}"] = value
        if event.payload is not None:
            for name, value in event.payload.fields.items():
                env[f"msg.{name}"] = value
        for name, value in (trigger_fields or {}).items():
            env[f"trigger.{name}"] = value
        return env

    @staticmethod
    def _holds(expr, env: Mapping[str, Value], label: str) -> bool:
        try:
            return bool(evaluate(expr, env))
        except GuardEvaluationError as exc:
            logger.warning("%s treated as false: %s", label, exc)
            return False


def infer_role_map(compiled: CompiledSpec, trace: Trace) -> Dict[str, str]:
    """
    Endpoint to role mapping. Provenance ServiceLog events at t=0 carry the
    role an endpoint plays; endpoints named after a role map to it.
    """
    role_map: Dict[str, str] = {}
    for event in trace.events:
        if event.time > 0:
            break
        if event.kind == EventKind.SERVICE_LOG and event.src and event.attrs.get("role") in compiled.roles:
            role_map[event.src] = event.attrs["role"]
    for role in compiled.roles:
        role_map.setdefault(role, role)
    return role_map


def producing_role(compiled: CompiledSpec, pattern: EventPattern) -> Optional[str]:
    """Role that emits the events pattern matches, when the pattern pins it down."""
    if pattern.src is not None:
        return pattern.src
    if pattern.dst is not None:
        peers = compiled.peer_roles(pattern.dst)
        return peers[0] if len(peers) == 1 else None
    return None


def check_trace(
    compiled: CompiledSpec,
    trace: Trace,
    role_map: Optional[Mapping[str, str]] = None,
    observer_role: Optional[str] = None,
    judged_role: Optional[str] = None,
) -> Verdict:
    """
    Replay every role over the trace and judge it. Unmatched deliveries fail
    only at observer_role; elsewhere the implementation may drop input.
    With judged_role, properties whose events another role produces are skipped.
    """
    roles = dict(role_map) if role_map is not None else infer_role_map(compiled, trace)
    replays = {role: RoleReplay.initial(compiled, role) for role in compiled.roles}
    if judged_role is None:
        monitor = PropertyMonitor(compiled, roles)
    else:
        monitor = PropertyMonitor.judging(compiled, roles, judged_role)

    for event in trace.events:
        if event.payload is not None and compiled.schema(event.payload.msg_type) is None:
            return Verdict.fail(UNKNOWN_MESSAGE, event.seq, trace)
        overdue = monitor.expire(event.time, trace)
        if overdue is not None:
            return overdue
        role = roles.get(event.endpoint or "")
        matched = True
        if role in replays and event.kind in (EventKind.DELIVERED, EventKind.TIMER_FIRED, EventKind.SENT):
            matched = replays[role].replay(compiled, event)
        violation = monitor.check_safety(event, replays, trace)
        if violation is not None:
            return violation
        if not matched and role == observer_role:
            logger.info("unexpected %s at %s (event %d)", event.payload.msg_type if event.payload else "?", role, event.seq)
            return Verdict.fail(UNEXPECTED_MESSAGE, event.seq, trace)
        monitor.track_timed(event, replays)

    verdict = monitor.finish(trace.observed_until(), trace)
    logger.debug("check of %s over %d events: %s", compiled.name, len(trace), verdict.status.value)
    return verdict
