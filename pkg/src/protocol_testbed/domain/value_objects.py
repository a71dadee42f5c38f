"""Value objects for the domain layer."""

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Union

from protocol_testbed.domain.errors import SimulationParameterError, TimeOverflowError

U64_MAX = (1 << 64) - 1

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

FieldValue = Union[int, bytes, str]

_DURATION_PATTERN = re.compile(r"^\s*(\d+)\s*(ns|us|ms|s)\s*$")
_DURATION_UNITS = {"ns": 1, "us": NS_PER_US, "ms": NS_PER_MS, "s": NS_PER_S}


def ms(value: int) -> int:
    """Milliseconds to virtual nanoseconds."""
    return value * NS_PER_MS


def checked_add(*terms: int) -> int:
    """Add durations, refusing to leave the unsigned 64-bit range."""
    total = sum(terms)
    if total < 0 or total > U64_MAX:
        raise TimeOverflowError(f"virtual time {total} ns is outside the unsigned 64-bit range")
    return total


def parse_duration(value: Union[int, str]) -> int:
    """
    Parse a duration given as integer nanoseconds or as text with a unit suffix.
    "200ms" -> 200_000_000.
    """
    if isinstance(value, bool):
        raise ValueError(f"{value!r} is not a duration")
    if isinstance(value, int):
        if value < 0 or value > U64_MAX:
            raise ValueError(f"duration {value} is outside the unsigned 64-bit range")
        return value
    if isinstance(value, str):
        match = _DURATION_PATTERN.match(value)
        if match:
            return checked_add(int(match.group(1)) * _DURATION_UNITS[match.group(2)])
    raise ValueError(f"{value!r} is not a duration (expected nanoseconds or e.g. '200ms')")


def format_duration(nanoseconds: int) -> str:
    """Render a duration with the largest unit that divides it exactly."""
    for suffix, factor in (("s", NS_PER_S), ("ms", NS_PER_MS), ("us", NS_PER_US)):
        if nanoseconds and nanoseconds % factor == 0:
            return f"{nanoseconds // factor}{suffix}"
    return f"{nanoseconds}ns"


@dataclass(frozen=True)
class NetworkParams:
    """
    Link model shared by every endpoint pair of one simulation.
    bandwidth_bps of None means Unlimited.
    """

    latency_base: int = ms(50)
    jitter: int = 0
    bandwidth_bps: Optional[int] = None
    loss_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        """Raise SimulationParameterError when an invariant is violated."""
        for name in ("latency_base", "jitter", "seed"):
            value = getattr(self, name)
            if not 0 <= value <= U64_MAX:
                raise SimulationParameterError(f"{name}={value} is outside the unsigned 64-bit range")
        if not 0 <= self.loss_rate <= 1:
            raise SimulationParameterError(f"loss_rate={self.loss_rate} must lie in [0, 1]")
        if self.bandwidth_bps is not None and not 0 < self.bandwidth_bps <= U64_MAX:
            raise SimulationParameterError(f"bandwidth_bps={self.bandwidth_bps} must be positive when bounded")

    def with_seed(self, seed: int) -> "NetworkParams":
        """Copy with another seed."""
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Message:
    """One protocol message as it travels through the simulated network."""

    protocol: str
    msg_type: str
    fields: Dict[str, FieldValue] = field(default_factory=dict)
    size_bytes: int = 1

    def __post_init__(self):
        if self.size_bytes < 1:
            raise ValueError(f"{self.msg_type}: size_bytes must be at least 1")

    def get(self, name: str) -> Optional[FieldValue]:
        """Field value or None."""
        return self.fields.get(name)


class EventKind(Enum):
    """Kinds of trace events."""

    SENT = "Sent"
    DELIVERED = "Delivered"
    DROPPED = "Dropped"
    TIMER_SET = "TimerSet"
    TIMER_FIRED = "TimerFired"
    TIMER_CANCELLED = "TimerCancelled"
    STATE_TRANSITION = "StateTransition"
    PROPERTY_VIOLATED = "PropertyViolated"
    SERVICE_LOG = "ServiceLog"


@dataclass(frozen=True)
class Event:
    """One entry of the totally ordered event log."""

    seq: int
    time: int
    kind: EventKind
    src: Optional[str] = None
    dst: Optional[str] = None
    payload: Optional[Message] = None
    attrs: Dict[str, str] = field(default_factory=dict)

    @property
    def endpoint(self) -> Optional[str]:
        """Endpoint the event happens at: the receiver for deliveries, the owner for timers and logs."""
        if self.kind == EventKind.DELIVERED:
            return self.dst
        return self.src


@dataclass
class Trace:
    """
    Event log of one simulated run.
    end_time is the virtual time up to which the run was observed; None means
    the time of the last event.
    """

    events: List[Event] = field(default_factory=list)
    params: NetworkParams = field(default_factory=NetworkParams)
    experiment: str = ""
    end_time: Optional[int] = None

    def observed_until(self) -> int:
        """Virtual time through which the trace is complete."""
        if self.end_time is not None:
            return self.end_time
        return self.events[-1].time if self.events else 0

    def __len__(self) -> int:
        return len(self.events)


class VerdictStatus(Enum):
    """Outcome classes of a test."""

    PASS = "Pass"
    FAIL = "Fail"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Verdict:
    """
    Pass, Fail(reason, event_seq, trace) or Inconclusive(reason).
    For Fail, reason is the violated property id or a tester reason.
    """

    status: VerdictStatus
    reason: str = ""
    event_seq: Optional[int] = None
    trace: Optional[Trace] = field(default=None, compare=False, repr=False)

    @staticmethod
    def passed() -> "Verdict":
        return Verdict(VerdictStatus.PASS)

    @staticmethod
    def fail(reason: str, event_seq: Optional[int] = None, trace: Optional[Trace] = None) -> "Verdict":
        return Verdict(VerdictStatus.FAIL, reason, event_seq, trace)

    @staticmethod
    def inconclusive(reason: str) -> "Verdict":
        return Verdict(VerdictStatus.INCONCLUSIVE, reason)

    @property
    def is_pass(self) -> bool:
        return self.status == VerdictStatus.PASS

    @property
    def is_fail(self) -> bool:
        return self.status == VerdictStatus.FAIL

    @property
    def is_inconclusive(self) -> bool:
        return self.status == VerdictStatus.INCONCLUSIVE

    def to_dict(self) -> Mapping[str, object]:
        """Summary form used in result files."""
        summary: Dict[str, object] = {"status": self.status.value}
        if self.reason:
            summary["reason"] = self.reason
        if self.event_seq is not None:
            summary["event_seq"] = self.event_seq
        return summary
