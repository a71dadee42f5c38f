"""Protocol specification entities: guarded state machines with safety and timed properties."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

from protocol_testbed.domain.guard import GuardExpr, Literal, ValueType
from protocol_testbed.domain.value_objects import EventKind, FieldValue, U64_MAX

_INTEGER_WIDTHS = {"u8": 8, "u16": 16, "u32": 32, "u64": 64}
FIELD_TYPES = tuple(_INTEGER_WIDTHS) + ("bytes", "text")
TRUE = Literal(True)


class TriggerKind(Enum):
    """What makes a transition fire."""

    RECV = "recv"
    TIMER = "timer"
    SPONTANEOUS = "spontaneous"


@dataclass(frozen=True)
class Trigger:
    """Recv(msg_type), Timer(timer_id) or Spontaneous."""

    kind: TriggerKind
    name: Optional[str] = None

    @staticmethod
    def recv(msg_type: str) -> "Trigger":
        return Trigger(TriggerKind.RECV, msg_type)

    @staticmethod
    def timer(timer_id: str) -> "Trigger":
        return Trigger(TriggerKind.TIMER, timer_id)

    @staticmethod
    def spontaneous() -> "Trigger":
        return Trigger(TriggerKind.SPONTANEOUS)

    def __str__(self) -> str:
        return self.kind.value if self.name is None else f"{self.kind.value}({self.name})"


@dataclass(frozen=True)
class FieldDecl:
    """
    One message field. Integer fields are u8/u16/u32/u64 with an optional
    narrower range; byte fields carry the length used when they are filled freely.
    """

    name: str
    type: str
    range: Optional[Tuple[int, int]] = None
    length: int = 4

    @property
    def value_type(self) -> ValueType:
        if self.type in _INTEGER_WIDTHS:
            return ValueType.INT
        return ValueType.BYTES if self.type == "bytes" else ValueType.TEXT

    @property
    def is_integer(self) -> bool:
        return self.type in _INTEGER_WIDTHS

    @property
    def bounds(self) -> Tuple[int, int]:
        """Inclusive integer bounds."""
        if self.range is not None:
            return self.range
        return 0, (1 << _INTEGER_WIDTHS.get(self.type, 64)) - 1

    def encoded_size(self, value: FieldValue) -> int:
        """Bytes the value occupies on the simulated wire."""
        if self.is_integer:
            return _INTEGER_WIDTHS[self.type] // 8
        if isinstance(value, bytes):
            return len(value)
        return len(str(value).encode("utf-8"))

    def zero(self) -> FieldValue:
        if self.is_integer:
            return self.bounds[0]
        return b"" if self.type == "bytes" else ""


@dataclass(frozen=True)
class MessageSchema:
    """Declared message type."""

    msg_type: str
    fields: Tuple[FieldDecl, ...] = ()

    def field(self, name: str) -> Optional[FieldDecl]:
        for decl in self.fields:
            if decl.name == name:
                return decl
        return None

    def size_of(self, values: Dict[str, FieldValue]) -> int:
        """One type byte plus the encoded fields."""
        size = 1
        for decl in self.fields:
            if decl.name in values:
                size += decl.encoded_size(values[decl.name])
        return size


@dataclass(frozen=True)
class VariableDecl:
    """Per-role state variable with its initial value expression."""

    name: str
    initial: GuardExpr


@dataclass(frozen=True)
class SendMsg:
    """Send msg_type; fields not assigned are filled by the tester's PRNG."""

    msg_type: str
    assignments: Tuple[Tuple[str, GuardExpr], ...] = ()


@dataclass(frozen=True)
class SetTimerAction:
    timer_id: str
    delay: GuardExpr


@dataclass(frozen=True)
class CancelTimerAction:
    timer_id: str


@dataclass(frozen=True)
class Assign:
    variable: str
    expr: GuardExpr


SpecAction = Union[SendMsg, SetTimerAction, CancelTimerAction, Assign]


@dataclass(frozen=True)
class Transition:
    """Guarded transition of one role."""

    id: str
    role: str
    from_state: str
    trigger: Trigger
    to_state: str
    guard: GuardExpr = TRUE
    actions: Tuple[SpecAction, ...] = ()

    def sends(self) -> List[SendMsg]:
        return [action for action in self.actions if isinstance(action, SendMsg)]

    def first_send(self) -> Optional[SendMsg]:
        sends = self.sends()
        return sends[0] if sends else None


@dataclass(frozen=True)
class EventPattern:
    """
    Filter over trace events. src and dst name roles; where is evaluated
    after the matched event has been replayed.
    """

    kind: EventKind
    src: Optional[str] = None
    dst: Optional[str] = None
    msg_type: Optional[str] = None
    where: Optional[GuardExpr] = None


@dataclass(frozen=True)
class SafetyProperty:
    """Predicate that must hold on every event matching scope."""

    id: str
    scope: EventPattern
    predicate: GuardExpr


@dataclass(frozen=True)
class TimedProperty:
    """
    Every trigger match at time t needs a correlated response in (t, t + deadline],
    unless an excuse match discharges it first.
    """

    id: str
    trigger: EventPattern
    response: EventPattern
    deadline: GuardExpr
    excuse: Optional[EventPattern] = None


@dataclass
class ProtocolSpec:
    """
    Guarded state machines for every role of a protocol. The first state
    listed for a role is its initial state.
    """

    name: str
    roles: List[str]
    messages: List[MessageSchema] = field(default_factory=list)
    constants: Dict[str, int] = field(default_factory=dict)
    variables: Dict[str, List[VariableDecl]] = field(default_factory=dict)
    states: Dict[str, List[str]] = field(default_factory=dict)
    transitions: List[Transition] = field(default_factory=list)
    safety_properties: List[SafetyProperty] = field(default_factory=list)
    timed_properties: List[TimedProperty] = field(default_factory=list)

    def initial_state(self, role: str) -> str:
        return self.states[role][0]

    def message(self, msg_type: str) -> Optional[MessageSchema]:
        for schema in self.messages:
            if schema.msg_type == msg_type:
                return schema
        return None

    def with_constants(self, overrides: Dict[str, int]) -> "ProtocolSpec":
        """Copy with some constants replaced."""
        constants = dict(self.constants)
        for key, value in overrides.items():
            if not 0 <= value <= U64_MAX:
                raise ValueError(f"constant {key}={value} is outside the unsigned 64-bit range")
            constants[key] = value
        return ProtocolSpec(
            name=self.name,
            roles=list(self.roles),
            messages=list(self.messages),
            constants=constants,
            variables={role: list(decls) for role, decls in self.variables.items()},
            states={role: list(names) for role, names in self.states.items()},
            transitions=list(self.transitions),
            safety_properties=list(self.safety_properties),
            timed_properties=list(self.timed_properties),
        )
