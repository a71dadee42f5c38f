"""Static validation of protocol specifications and the indexed form testers run on."""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

from protocol_testbed.domain.errors import (
    GuardEvaluationError,
    GuardTypeError,
    SpecCompileError,
    SpecIssue,
)
from protocol_testbed.domain.guard import (
    GuardExpr,
    Value,
    ValueType,
    evaluate,
    infer_type,
    referenced_names,
)
from protocol_testbed.domain.protocol_spec import (
    Assign,
    CancelTimerAction,
    EventPattern,
    FieldDecl,
    MessageSchema,
    ProtocolSpec,
    SendMsg,
    SetTimerAction,
    Transition,
    TriggerKind,
)
from protocol_testbed.domain.simulation import Action, CancelTimer, Idle, Send, SetTimer, TimerFired
from protocol_testbed.domain.value_objects import FieldValue, Message

logger = logging.getLogger(__name__)

RESERVED_PREFIXES = ("msg", "sent", "trigger")

FieldFiller = Callable[[FieldDecl], FieldValue]


@dataclass
class CompiledSpec:
    """
    Validated, indexed ProtocolSpec. Immutable after compile_spec returns and
    shareable between testers.
    """

    spec: ProtocolSpec
    transitions_by_state: Dict[Tuple[str, str], List[Transition]]
    var_types: Dict[str, Dict[str, ValueType]]
    initial_vars: Dict[str, Dict[str, Value]]
    final_states: Dict[str, Set[str]]
    deadlines: Dict[str, int]
    property_roles: Dict[str, Set[str]]
    warnings: List[SpecIssue] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def roles(self) -> List[str]:
        return list(self.spec.roles)

    @property
    def constants(self) -> Dict[str, int]:
        return dict(self.spec.constants)

    def schema(self, msg_type: str) -> Optional[MessageSchema]:
        return self.spec.message(msg_type)

    def initial_state(self, role: str) -> str:
        return self.spec.initial_state(role)

    def outgoing(self, role: str, state: str) -> List[Transition]:
        return self.transitions_by_state.get((role, state), [])

    def is_final(self, role: str, state: str) -> bool:
        return state in self.final_states.get(role, set())

    def peer_roles(self, role: str) -> List[str]:
        return [other for other in self.spec.roles if other != role]

    def sendable(self, role: str) -> List[str]:
        """Message types the role emits somewhere in its machine, in declaration order."""
        seen: List[str] = []
        for transition in self.spec.transitions:
            if transition.role != role:
                continue
            for send in transition.sends():
                if send.msg_type not in seen:
                    seen.append(send.msg_type)
        return seen

    def receivable(self, role: str, state: str) -> Set[str]:
        """Message types with a Recv transition out of (role, state)."""
        return {
            transition.trigger.name or ""
            for transition in self.outgoing(role, state)
            if transition.trigger.kind == TriggerKind.RECV
        }

    def all_transitions(self, role: Optional[str] = None) -> List[Transition]:
        return [t for t in self.spec.transitions if role is None or t.role == role]


def compile_spec(spec: ProtocolSpec) -> CompiledSpec:
    """
    Validate every reference, type-check every expression and build the
    transition index. Raises SpecCompileError listing every error; unreachable
    states are reported as warnings on the result.
    """
    errors: List[SpecIssue] = []
    warnings: List[SpecIssue] = []
    constants_types = {name: ValueType.INT for name in spec.constants}

    if len(spec.roles) < 2:
        errors.append(SpecIssue("roles", "a protocol needs at least two roles"))
    if len(set(spec.roles)) != len(spec.roles):
        errors.append(SpecIssue("roles", "role names must be unique"))
    for role in spec.roles:
        if role in RESERVED_PREFIXES:
            errors.append(SpecIssue("roles", f"'{role}' is a reserved name"))

    message_names = [schema.msg_type for schema in spec.messages]
    for name in {n for n in message_names if message_names.count(n) > 1}:
        errors.append(SpecIssue(f"messages.{name}", "message declared twice"))
    for schema in spec.messages:
        field_names = [decl.name for decl in schema.fields]
        if len(set(field_names)) != len(field_names):
            errors.append(SpecIssue(f"messages.{schema.msg_type}", "duplicate field"))
        for decl in schema.fields:
            if decl.range is not None and decl.is_integer:
                low, high = decl.range
                width_high = FieldDecl(decl.name, decl.type).bounds[1]
                if not 0 <= low <= high <= width_high:
                    errors.append(SpecIssue(f"messages.{schema.msg_type}.{decl.name}", "range outside the field width"))

    states: Dict[str, List[str]] = {}
    for role in spec.roles:
        names = spec.states.get(role, [])
        if not names:
            errors.append(SpecIssue(f"states.{role}", "role declares no states (the first listed is initial)"))
        if len(set(names)) != len(names):
            errors.append(SpecIssue(f"states.{role}", "duplicate state"))
        states[role] = list(names)
    for role in spec.states:
        if role not in spec.roles:
            errors.append(SpecIssue(f"states.{role}", f"unknown role '{role}'"))

    var_types: Dict[str, Dict[str, ValueType]] = {}
    initial_vars: Dict[str, Dict[str, Value]] = {}
    for role in spec.roles:
        var_types[role] = {}
        initial_vars[role] = {}
        for decl in spec.variables.get(role, []):
            path = f"variables.{role}.{decl.name}"
            if decl.name in var_types[role]:
                errors.append(SpecIssue(path, "variable declared twice"))
                continue
            try:
                value_type = infer_type(decl.initial, constants_types)
                if value_type == ValueType.BOOL:
                    raise GuardTypeError("variables hold integers, byte strings or text")
                initial_vars[role][decl.name] = evaluate(decl.initial, spec.constants)
                var_types[role][decl.name] = value_type
            except (GuardTypeError, GuardEvaluationError) as exc:
                errors.append(SpecIssue(path, str(exc)))

    ids = [t.id for t in spec.transitions]
    for duplicate in sorted({i for i in ids if ids.count(i) > 1}):
        errors.append(SpecIssue("transitions", "duplicate transition id", duplicate))

    index: Dict[Tuple[str, str], List[Transition]] = {}
    for position, transition in enumerate(spec.transitions):
        path = f"transitions[{position}]"
        errors.extend(_check_transition(spec, transition, path, states, var_types, constants_types))
        index.setdefault((transition.role, transition.from_state), []).append(transition)

    property_roles: Dict[str, Set[str]] = {}
    deadlines: Dict[str, int] = {}
    property_ids: List[str] = []
    for position, safety in enumerate(spec.safety_properties):
        path = f"safety[{position}]"
        property_ids.append(safety.id)
        errors.extend(_check_pattern(spec, safety.scope, f"{path}.scope", var_types, constants_types, None))
        env = _property_types(spec, var_types, constants_types, safety.scope.msg_type, None)
        errors.extend(_expect(safety.predicate, env, ValueType.BOOL, f"{path}.predicate"))
        property_roles[safety.id] = _roles_read(spec, [safety.predicate, safety.scope.where]) | {
            role for role in (safety.scope.src, safety.scope.dst) if role
        }
    for position, timed in enumerate(spec.timed_properties):
        path = f"timed[{position}]"
        property_ids.append(timed.id)
        errors.extend(_check_pattern(spec, timed.trigger, f"{path}.trigger", var_types, constants_types, None))
        errors.extend(_check_pattern(spec, timed.response, f"{path}.response", var_types, constants_types, timed.trigger.msg_type))
        if timed.excuse is not None:
            errors.extend(_check_pattern(spec, timed.excuse, f"{path}.excuse", var_types, constants_types, timed.trigger.msg_type))
        deadline_errors = _expect(timed.deadline, constants_types, ValueType.INT, f"{path}.deadline")
        errors.extend(deadline_errors)
        if not deadline_errors:
            try:
                deadline = int(evaluate(timed.deadline, spec.constants))
                if deadline <= 0:
                    errors.append(SpecIssue(f"{path}.deadline", "deadline must be positive"))
                deadlines[timed.id] = deadline
            except GuardEvaluationError as exc:
                errors.append(SpecIssue(f"{path}.deadline", str(exc)))
        patterns = [timed.trigger, timed.response] + ([timed.excuse] if timed.excuse else [])
        property_roles[timed.id] = _roles_read(spec, [p.where for p in patterns]) | {
            role for p in patterns for role in (p.src, p.dst) if role
        }
    for duplicate in sorted({i for i in property_ids if property_ids.count(i) > 1}):
        errors.append(SpecIssue("properties", f"duplicate property id '{duplicate}'"))

    if errors:
        raise SpecCompileError(errors)

    final_states: Dict[str, Set[str]] = {}
    for role in spec.roles:
        final_states[role] = {state for state in states[role] if not index.get((role, state))}
        reachable = _reachable(role, states[role][0], index)
        for state in states[role]:
            if state not in reachable:
                warnings.append(SpecIssue(f"states.{role}.{state}", "state is unreachable from the initial state"))
    for issue in warnings:
        logger.warning("spec %s: %s", spec.name, issue)

    return CompiledSpec(
        spec=spec,
        transitions_by_state=index,
        var_types=var_types,
        initial_vars=initial_vars,
        final_states=final_states,
        deadlines=deadlines,
        property_roles=property_roles,
        warnings=warnings,
    )


def _expect(expr: Optional[GuardExpr], env: Mapping[str, ValueType], expected: ValueType, path: str, transition_id: Optional[str] = None) -> List[SpecIssue]:
    if expr is None:
        return []
    try:
        actual = infer_type(expr, env)
    except GuardTypeError as exc:
        return [SpecIssue(path, str(exc), transition_id)]
    if actual != expected:
        return [SpecIssue(path, f"expected {expected.value}, got {actual.value}", transition_id)]
    return []


def _message_types(prefix: str, schema: Optional[MessageSchema]) -> Dict[str, ValueType]:
    if schema is None:
        return {}
    return {f"{prefix}.{decl.name}": decl.value_type for decl in schema.fields}


def _check_transition(
    spec: ProtocolSpec,
    transition: Transition,
    path: str,
    states: Mapping[str, List[str]],
    var_types: Mapping[str, Dict[str, ValueType]],
    constants_types: Mapping[str, ValueType],
) -> List[SpecIssue]:
    tid = transition.id
    issues: List[SpecIssue] = []
    if transition.role not in spec.roles:
        return [SpecIssue(f"{path}.role", f"unknown role '{transition.role}'", tid)]
    role_states = states.get(transition.role, [])
    if transition.from_state not in role_states:
        issues.append(SpecIssue(f"{path}.from", f"undefined state '{transition.from_state}'", tid))
    if transition.to_state not in role_states:
        issues.append(SpecIssue(f"{path}.to", f"undefined state '{transition.to_state}'", tid))

    env: Dict[str, ValueType] = dict(constants_types)
    env.update(var_types.get(transition.role, {}))
    if transition.trigger.kind == TriggerKind.RECV:
        schema = spec.message(transition.trigger.name or "")
        if schema is None:
            issues.append(SpecIssue(f"{path}.on", f"undefined message '{transition.trigger.name}'", tid))
        env.update(_message_types("msg", schema))
    issues.extend(_expect(transition.guard, env, ValueType.BOOL, f"{path}.guard", tid))

    first_send_seen = False
    for position, action in enumerate(transition.actions):
        action_path = f"{path}.actions[{position}]"
        if isinstance(action, SendMsg):
            schema = spec.message(action.msg_type)
            if schema is None:
                issues.append(SpecIssue(action_path, f"undefined message '{action.msg_type}'", tid))
                continue
            for field_name, expr in action.assignments:
                decl = schema.field(field_name)
                if decl is None:
                    issues.append(SpecIssue(f"{action_path}.{field_name}", f"{action.msg_type} has no field '{field_name}'", tid))
                    continue
                issues.extend(_expect(expr, env, decl.value_type, f"{action_path}.{field_name}", tid))
            if not first_send_seen and transition.trigger.kind == TriggerKind.SPONTANEOUS:
                env.update(_message_types("sent", schema))
            first_send_seen = True
        elif isinstance(action, SetTimerAction):
            issues.extend(_expect(action.delay, env, ValueType.INT, f"{action_path}.delay", tid))
        elif isinstance(action, CancelTimerAction):
            continue
        elif isinstance(action, Assign):
            target = var_types.get(transition.role, {}).get(action.variable)
            if target is None:
                issues.append(SpecIssue(action_path, f"undefined variable '{action.variable}'", tid))
                continue
            issues.extend(_expect(action.expr, env, target, action_path, tid))
    return issues


def _property_types(
    spec: ProtocolSpec,
    var_types: Mapping[str, Dict[str, ValueType]],
    constants_types: Mapping[str, ValueType],
    msg_type: Optional[str],
    trigger_msg_type: Optional[str],
) -> Dict[str, ValueType]:
    env: Dict[str, ValueType] = dict(constants_types)
    for role in spec.roles:
        env[f"{role}.state"] = ValueType.TEXT
        for name, value_type in var_types.get(role, {}).items():
            env[f"{role}.{name}"] = value_type
    if msg_type:
        env.update(_message_types("msg", spec.message(msg_type)))
    if trigger_msg_type:
        env.update(_message_types("trigger", spec.message(trigger_msg_type)))
    return env


def _check_pattern(
    spec: ProtocolSpec,
    pattern: EventPattern,
    path: str,
    var_types: Mapping[str, Dict[str, ValueType]],
    constants_types: Mapping[str, ValueType],
    trigger_msg_type: Optional[str],
) -> List[SpecIssue]:
    issues: List[SpecIssue] = []
    for attr in ("src", "dst"):
        role = getattr(pattern, attr)
        if role is not None and role not in spec.roles:
            issues.append(SpecIssue(f"{path}.{attr}", f"unknown role '{role}'"))
    if pattern.msg_type is not None and spec.message(pattern.msg_type) is None:
        issues.append(SpecIssue(f"{path}.msg_type", f"undefined message '{pattern.msg_type}'"))
    env = _property_types(spec, var_types, constants_types, pattern.msg_type, trigger_msg_type)
    issues.extend(_expect(pattern.where, env, ValueType.BOOL, f"{path}.where"))
    return issues


def _roles_read(spec: ProtocolSpec, exprs: Sequence[Optional[GuardExpr]]) -> Set[str]:
    roles: Set[str] = set()
    for expr in exprs:
        if expr is None:
            continue
        for name in referenced_names(expr):
            head = name.split(".", 1)[0]
            if head in spec.roles:
                roles.add(head)
    return roles


def _reachable(role: str, initial: str, index: Mapping[Tuple[str, str], List[Transition]]) -> Set[str]:
    seen = {initial}
    frontier = deque([initial])
    while frontier:
        state = frontier.popleft()
        for transition in index.get((role, state), []):
            if transition.to_state not in seen:
                seen.add(transition.to_state)
                frontier.append(transition.to_state)
    return seen


# Runtime helpers shared by testers and trace replay


def transition_env(
    compiled: CompiledSpec,
    variables: Mapping[str, Value],
    message: Optional[Message] = None,
) -> Dict[str, Value]:
    """Names visible to a transition guard: constants, own variables, msg fields."""
    env: Dict[str, Value] = dict(compiled.spec.constants)
    env.update(variables)
    if message is not None:
        for name, value in message.fields.items():
            env[f"msg.{name}"] = value
    return env


def _guard_holds(transition: Transition, env: Mapping[str, Value]) -> bool:
    try:
        return bool(evaluate(transition.guard, env))
    except GuardEvaluationError as exc:
        logger.warning("guard of %s treated as failed: %s", transition.id, exc)
        return False


def enabled_transitions(
    compiled: CompiledSpec,
    role: str,
    state: str,
    variables: Mapping[str, Value],
    observation: Union[None, Idle, Message, TimerFired] = None,
) -> List[Transition]:
    """
    Declaration-ordered transitions out of (role, state) matching the
    observation class with a true guard. A concrete received message yields at
    most the first match.
    """
    if isinstance(observation, Message):
        env = transition_env(compiled, variables, observation)
        for transition in compiled.outgoing(role, state):
            if transition.trigger.kind == TriggerKind.RECV and transition.trigger.name == observation.msg_type:
                if _guard_holds(transition, env):
                    return [transition]
        return []
    env = transition_env(compiled, variables)
    if isinstance(observation, TimerFired):
        wanted = TriggerKind.TIMER
        name: Optional[str] = observation.timer_id
    else:
        wanted = TriggerKind.SPONTANEOUS
        name = None
    return [
        transition
        for transition in compiled.outgoing(role, state)
        if transition.trigger.kind == wanted
        and (name is None or transition.trigger.name == name)
        and _guard_holds(transition, env)
    ]


@dataclass
class Firing:
    """Effects of executing one transition's actions."""

    variables: Dict[str, Value]
    actions: List[Action] = field(default_factory=list)

    @property
    def sends(self) -> List[Message]:
        return [action.message for action in self.actions if isinstance(action, Send)]


def fire(
    compiled: CompiledSpec,
    transition: Transition,
    variables: Mapping[str, Value],
    received: Optional[Message] = None,
    fill: Optional[FieldFiller] = None,
    sent: Optional[Message] = None,
) -> Firing:
    """
    Execute the actions of transition in order. Free fields come from fill
    (zero values when absent). When sent is given it stands for the message of
    the first send and is bound as sent.<field>. Raises GuardEvaluationError.
    """
    env = transition_env(compiled, variables, received)
    result = Firing(variables=dict(variables))
    first = True
    for action in transition.actions:
        if isinstance(action, SendMsg):
            if first and sent is not None:
                message = sent
            else:
                message = build_message(compiled, action, env, fill)
            if first and transition.trigger.kind == TriggerKind.SPONTANEOUS:
                for name, value in message.fields.items():
                    env[f"sent.{name}"] = value
            first = False
            result.actions.append(Send(message))
        elif isinstance(action, SetTimerAction):
            result.actions.append(SetTimer(action.timer_id, int(evaluate(action.delay, env))))
        elif isinstance(action, CancelTimerAction):
            result.actions.append(CancelTimer(action.timer_id))
        elif isinstance(action, Assign):
            value = evaluate(action.expr, env)
            result.variables[action.variable] = value
            env[action.variable] = value
    return result


def build_message(
    compiled: CompiledSpec,
    action: SendMsg,
    env: Mapping[str, Value],
    fill: Optional[FieldFiller] = None,
) -> Message:
    """Evaluate assigned fields, fill the free ones, size the result."""
    schema = compiled.schema(action.msg_type)
    assert schema is not None, action.msg_type
    assigned = dict(action.assignments)
    values: Dict[str, FieldValue] = {}
    for decl in schema.fields:
        if decl.name in assigned:
            value = evaluate(assigned[decl.name], env)
            if decl.is_integer:
                low, high = decl.bounds
                if not low <= int(value) <= high:
                    raise GuardEvaluationError(f"{action.msg_type}.{decl.name}={value} outside [{low}, {high}]")
            values[decl.name] = value  # type: ignore[assignment]
        else:
            values[decl.name] = fill(decl) if fill else decl.zero()
    return Message(
        protocol=compiled.name,
        msg_type=action.msg_type,
        fields=values,
        size_bytes=schema.size_of(values),
    )
