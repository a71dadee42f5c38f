"""Reads protocol specification documents into ProtocolSpec entities."""

import logging
from typing import Annotated, Any, Dict, List, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PlainValidator, StrictInt, field_validator, model_validator

from protocol_testbed.domain.errors import GuardSyntaxError
from protocol_testbed.domain.guard import GuardExpr, Literal, parse_guard
from protocol_testbed.domain.protocol_spec import (
    FIELD_TYPES,
    TRUE,
    Assign,
    CancelTimerAction,
    EventPattern,
    FieldDecl,
    MessageSchema,
    ProtocolSpec,
    SafetyProperty,
    SendMsg,
    SetTimerAction,
    SpecAction,
    TimedProperty,
    Transition,
    Trigger,
    VariableDecl,
)
from protocol_testbed.domain.value_objects import EventKind, parse_duration
from protocol_testbed.infrastructure.yaml_documents import load_document, validate_document

logger = logging.getLogger(__name__)

TRIGGER_FORMS = "expected 'spontaneous', {recv: TYPE} or {timer: ID}"
ACTION_FORMS = ("send", "set_timer", "cancel_timer", "assign")


def _expression(value: Any) -> GuardExpr:
    """Expression text, a bare integer or boolean, or a duration literal such as '10ms'."""
    if isinstance(value, str):
        try:
            return Literal(parse_duration(value))
        except ValueError:
            pass
    if not isinstance(value, (str, int, bool)):
        raise ValueError("expected an expression")
    try:
        return parse_guard(value)
    except GuardSyntaxError as exc:
        raise ValueError(str(exc)) from exc


Name = Annotated[str, Field(min_length=1)]
Expression = Annotated[Any, PlainValidator(_expression)]
Duration = Annotated[int, PlainValidator(parse_duration)]


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FieldDocument(_Document):
    type: str
    range: Optional[Tuple[StrictInt, StrictInt]] = None
    length: StrictInt = Field(4, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _type_only(cls, value: Any) -> Any:
        return {"type": value} if isinstance(value, str) else value

    @field_validator("type")
    @classmethod
    def _known_type(cls, value: str) -> str:
        if value not in FIELD_TYPES:
            raise ValueError(f"expected one of {', '.join(FIELD_TYPES)}")
        return value


class TriggerDocument(_Document):
    spontaneous: bool = False
    recv: Optional[Name] = None
    timer: Optional[Name] = None

    @model_validator(mode="before")
    @classmethod
    def _keyword(cls, value: Any) -> Any:
        if value == "spontaneous":
            return {"spontaneous": True}
        if isinstance(value, str):
            raise ValueError(TRIGGER_FORMS)
        return value

    @model_validator(mode="after")
    def _exactly_one(self) -> "TriggerDocument":
        if [self.spontaneous, self.recv is not None, self.timer is not None].count(True) != 1:
            raise ValueError(TRIGGER_FORMS)
        return self

    def to_trigger(self) -> Trigger:
        if self.recv is not None:
            return Trigger.recv(self.recv)
        if self.timer is not None:
            return Trigger.timer(self.timer)
        return Trigger.spontaneous()


class ActionDocument(_Document):
    send: Optional[Name] = None
    assignments: Optional[Dict[str, Expression]] = Field(None, alias="fields")
    set_timer: Optional[Name] = None
    delay: Optional[Expression] = None
    cancel_timer: Optional[Name] = None
    assign: Optional[Dict[str, Expression]] = None

    @model_validator(mode="after")
    def _one_action(self) -> "ActionDocument":
        present = [key for key in ACTION_FORMS if getattr(self, key) is not None]
        if len(present) != 1:
            raise ValueError("expected one of send, set_timer, cancel_timer or assign")
        if self.set_timer is not None and self.delay is None:
            raise ValueError("set_timer needs a delay")
        return self

    def to_actions(self) -> List[SpecAction]:
        if self.send is not None:
            return [SendMsg(self.send, tuple((self.assignments or {}).items()))]
        if self.set_timer is not None:
            return [SetTimerAction(self.set_timer, self.delay)]
        if self.cancel_timer is not None:
            return [CancelTimerAction(self.cancel_timer)]
        return [Assign(name, expr) for name, expr in (self.assign or {}).items()]


class TransitionDocument(_Document):
    id: Name
    role: Name
    from_state: Name = Field(alias="from")
    on: TriggerDocument
    to: Name
    guard: Expression = TRUE
    actions: Optional[List[ActionDocument]] = None

    def to_transition(self) -> Transition:
        return Transition(
            id=self.id,
            role=self.role,
            from_state=self.from_state,
            trigger=self.on.to_trigger(),
            to_state=self.to,
            guard=self.guard,
            actions=tuple(action for item in self.actions or [] for action in item.to_actions()),
        )


class PatternDocument(_Document):
    kind: EventKind
    src: Optional[Name] = None
    dst: Optional[Name] = None
    msg_type: Optional[Name] = None
    where: Optional[Expression] = None

    def to_pattern(self) -> EventPattern:
        return EventPattern(kind=self.kind, src=self.src, dst=self.dst, msg_type=self.msg_type, where=self.where)


class SafetyDocument(_Document):
    id: Name
    scope: PatternDocument
    predicate: Expression


class TimedDocument(_Document):
    id: Name
    trigger: PatternDocument
    response: PatternDocument
    deadline: Expression
    excuse: Optional[PatternDocument] = None


class SpecDocument(_Document):
    """Shape of a protocol specification document."""

    name: Name
    roles: List[Name]
    constants: Optional[Dict[str, Duration]] = None
    messages: Optional[Dict[str, Optional[Dict[str, FieldDocument]]]] = None
    variables: Optional[Dict[str, Optional[Dict[str, Expression]]]] = None
    states: Dict[str, List[Name]]
    transitions: List[TransitionDocument]
    safety: Optional[List[SafetyDocument]] = None
    timed: Optional[List[TimedDocument]] = None

    def to_spec(self) -> ProtocolSpec:
        return ProtocolSpec(
            name=self.name,
            roles=list(self.roles),
            messages=[
                MessageSchema(
                    msg_type=msg_type,
                    fields=tuple(
                        FieldDecl(name=name, type=decl.type, range=decl.range, length=decl.length)
                        for name, decl in (fields or {}).items()
                    ),
                )
                for msg_type, fields in (self.messages or {}).items()
            ],
            constants=dict(self.constants or {}),
            variables={
                role: [VariableDecl(name, initial) for name, initial in (decls or {}).items()]
                for role, decls in (self.variables or {}).items()
            },
            states={role: list(names) for role, names in self.states.items()},
            transitions=[item.to_transition() for item in self.transitions],
            safety_properties=[
                SafetyProperty(id=item.id, scope=item.scope.to_pattern(), predicate=item.predicate)
                for item in self.safety or []
            ],
            timed_properties=[
                TimedProperty(
                    id=item.id,
                    trigger=item.trigger.to_pattern(),
                    response=item.response.to_pattern(),
                    deadline=item.deadline,
                    excuse=item.excuse.to_pattern() if item.excuse is not None else None,
                )
                for item in self.timed or []
            ],
        )


def load_spec(text: str, overrides: Optional[Mapping[str, int]] = None) -> ProtocolSpec:
    """
    Build a ProtocolSpec from document text. overrides replace constants
    before any expression is resolved against them.
    """
    spec = validate_document(SpecDocument, load_document(text)).to_spec()
    if overrides:
        spec = spec.with_constants(dict(overrides))
    logger.debug("loaded spec %s: %d transitions", spec.name, len(spec.transitions))
    return spec
