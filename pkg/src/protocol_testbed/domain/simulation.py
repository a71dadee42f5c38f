"""Deterministic discrete-event network simulator running in virtual time."""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple, Union

from protocol_testbed.domain.errors import (
    AddressingError,
    RunawayError,
    SimulationParameterError,
    TimeOverflowError,
)
from protocol_testbed.domain.prng import Prng
from protocol_testbed.domain.value_objects import (
    NS_PER_S,
    Event,
    EventKind,
    Message,
    NetworkParams,
    Trace,
    Verdict,
    checked_add,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 10_000_000


# Observations handed to endpoint reactors


@dataclass(frozen=True)
class Delivered:
    """A message arrived."""

    src: str
    message: Message


@dataclass(frozen=True)
class TimerFired:
    """A timer set by the endpoint expired."""

    timer_id: str


@dataclass(frozen=True)
class Idle:
    """Nothing arrived; the endpoint may act on its own."""


Observation = Union[Delivered, TimerFired, Idle]


# Actions returned by endpoint reactors


@dataclass(frozen=True)
class Send:
    """Send a message; dst None means the endpoint's peer, filled in by adapters."""

    message: Message
    dst: Optional[str] = None


@dataclass(frozen=True)
class SetTimer:
    timer_id: str
    delay: int


@dataclass(frozen=True)
class CancelTimer:
    timer_id: str


@dataclass(frozen=True)
class Log:
    text: str
    level: str = "info"
    attrs: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Annotate:
    """Record a StateTransition or PropertyViolated event."""

    kind: EventKind
    attrs: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Stop:
    verdict: Verdict


Action = Union[Send, SetTimer, CancelTimer, Log, Annotate, Stop]


class Reactor(Protocol):
    """Endpoint behavior attached to a simulation."""

    def handle(self, observation: Observation, now: int) -> List[Action]:
        """React to one observation at virtual time now."""
        ...


@dataclass(frozen=True)
class _Delivery:
    src: str
    dst: str
    message: Message


@dataclass(frozen=True)
class _Expiry:
    endpoint: str
    timer_id: str
    generation: int


class Simulation:
    """
    Virtual-time world: endpoints, one shared link model and an event queue
    ordered by (time, insertion sequence). Single-threaded.
    """

    def __init__(
        self,
        params: NetworkParams,
        experiment: str = "",
        step_limit: int = DEFAULT_STEP_LIMIT,
    ):
        """Validate params and start at virtual time zero."""
        params.validate()
        if step_limit < 1:
            raise SimulationParameterError("step_limit must be at least 1")
        self.params = params
        self.step_limit = step_limit
        self._prng = Prng(params.seed)
        self._clock = 0
        self._queue: List[Tuple[int, int, Union[_Delivery, _Expiry]]] = []
        self._queue_seq = 0
        self._trace = Trace(events=[], params=params, experiment=experiment)
        self._endpoints: Dict[str, Reactor] = {}
        self._last_delivery: Dict[Tuple[str, str], int] = {}
        self._timers: Dict[Tuple[str, str], int] = {}
        self._timer_generation = 0
        self._steps = 0
        self.stopped = False
        self.stop_verdict: Optional[Verdict] = None
        self.stop_endpoint: Optional[str] = None
        self.errored = False
        self.error: Optional[str] = None
        self.error_endpoint: Optional[str] = None

    # Observable state

    @property
    def clock(self) -> int:
        """Current virtual time in nanoseconds."""
        return self._clock

    @property
    def trace(self) -> Trace:
        return self._trace

    @property
    def prng(self) -> Prng:
        return self._prng

    @property
    def steps(self) -> int:
        """Queue entries processed so far."""
        return self._steps

    def endpoints(self) -> List[str]:
        return list(self._endpoints)

    # Wiring

    def attach(self, name: str, reactor: Reactor) -> None:
        """Make an endpoint addressable."""
        if not name:
            raise AddressingError("endpoint name must be non-empty")
        if name in self._endpoints:
            raise AddressingError(f"endpoint '{name}' is already attached")
        self._endpoints[name] = reactor

    def _require(self, name: str) -> None:
        if name not in self._endpoints:
            raise AddressingError(f"endpoint '{name}' is not attached")

    # Primitive operations at the current clock

    def send(self, src: str, dst: str, message: Message) -> None:
        """
        Emit Sent now, then either Dropped now or a Delivered scheduled at
        max(t + serialization + latency + jitter, last delivery on src->dst + 1ns).
        Draw order: loss first, jitter only when not dropped.
        """
        self._require(src)
        self._require(dst)
        now = self._clock
        self._record(EventKind.SENT, src=src, dst=dst, payload=message)
        if self._prng.bernoulli(self.params.loss_rate):
            self._record(EventKind.DROPPED, src=src, dst=dst, payload=message)
            logger.debug("dropped %s %s->%s at %d", message.msg_type, src, dst, now)
            return
        jitter = self._prng.below(self.params.jitter + 1)
        raw = checked_add(now, self._serialization_delay(message), self.params.latency_base, jitter)
        last = self._last_delivery.get((src, dst))
        deliver_at = raw if last is None else max(raw, checked_add(last, 1))
        self._last_delivery[(src, dst)] = deliver_at
        self._schedule(deliver_at, _Delivery(src, dst, message))

    def _serialization_delay(self, message: Message) -> int:
        bandwidth = self.params.bandwidth_bps
        if bandwidth is None:
            return 0
        bits = message.size_bytes * 8 * NS_PER_S
        return -(-bits // bandwidth)

    def set_timer(self, endpoint: str, delay: int, timer_id: str) -> None:
        """Arm a timer; re-arming a pending timer_id replaces it."""
        self._require(endpoint)
        fire_at = checked_add(self._clock, delay)
        key = (endpoint, timer_id)
        attrs = {"timer_id": timer_id, "delay_ns": str(delay)}
        if key in self._timers:
            attrs["replaced"] = "true"
        self._timer_generation += 1
        self._timers[key] = self._timer_generation
        self._record(EventKind.TIMER_SET, src=endpoint, attrs=attrs)
        self._schedule(fire_at, _Expiry(endpoint, timer_id, self._timer_generation))

    def cancel_timer(self, endpoint: str, timer_id: str) -> None:
        """Disarm a timer. Cancelling a timer that is not pending only leaves a warning in the trace."""
        self._require(endpoint)
        attrs = {"timer_id": timer_id}
        if self._timers.pop((endpoint, timer_id), None) is None:
            attrs["warning"] = "not-pending"
            logger.warning("cancel of non-pending timer %s at %s", timer_id, endpoint)
        self._record(EventKind.TIMER_CANCELLED, src=endpoint, attrs=attrs)

    def log(self, endpoint: str, text: str, level: str = "info", attrs: Optional[Dict[str, str]] = None) -> None:
        """Append a ServiceLog event now."""
        merged = {"level": level, "text": text}
        merged.update(attrs or {})
        self._record(EventKind.SERVICE_LOG, src=endpoint, attrs=merged)

    def inject(self, endpoint: str, observation: Observation) -> None:
        """Hand an external stimulus to an endpoint at the current clock."""
        self._require(endpoint)
        self._dispatch(endpoint, observation)

    # Event loop

    def next_time(self) -> Optional[int]:
        """Time of the next live queue entry, or None when idle."""
        while self._queue:
            _, _, entry = self._queue[0]
            if isinstance(entry, _Expiry) and self._timers.get((entry.endpoint, entry.timer_id)) != entry.generation:
                heapq.heappop(self._queue)
                continue
            return self._queue[0][0]
        return None

    def is_idle(self) -> bool:
        return self.next_time() is None

    def step(self) -> Optional[Event]:
        """Process the queue entry with minimal (time, seq); None when idle."""
        if self.next_time() is None:
            return None
        time, _, entry = heapq.heappop(self._queue)
        self._clock = time
        self._steps += 1
        if isinstance(entry, _Delivery):
            event = self._record(EventKind.DELIVERED, src=entry.src, dst=entry.dst, payload=entry.message)
            self._dispatch(entry.dst, Delivered(entry.src, entry.message))
        else:
            del self._timers[(entry.endpoint, entry.timer_id)]
            event = self._record(EventKind.TIMER_FIRED, src=entry.endpoint, attrs={"timer_id": entry.timer_id})
            self._dispatch(entry.endpoint, TimerFired(entry.timer_id))
        return event

    def run_until(self, horizon: int, max_steps: Optional[int] = None) -> Trace:
        """
        Step while the next event is due at or before horizon and nobody stopped
        the run. max_steps bounds the steps taken by this call without raising.
        """
        taken = 0
        cut = False
        while not (self.stopped or self.errored):
            due = self.next_time()
            if due is None or due > horizon:
                break
            if max_steps is not None and taken >= max_steps:
                cut = True
                break
            if self._steps >= self.step_limit:
                last = self._trace.events[-10:]
                raise RunawayError(
                    f"simulation exceeded {self.step_limit} steps at t={self._clock}ns; "
                    f"last events: {[f'{e.seq}:{e.kind.value}' for e in last]}",
                    last,
                )
            self.step()
            taken += 1
        self._trace.end_time = self._clock if (self.stopped or self.errored or cut) else max(horizon, self._clock)
        return self._trace

    # Internals

    def _schedule(self, time: int, entry: Union[_Delivery, _Expiry]) -> None:
        self._queue_seq += 1
        heapq.heappush(self._queue, (time, self._queue_seq, entry))

    def _record(
        self,
        kind: EventKind,
        src: Optional[str] = None,
        dst: Optional[str] = None,
        payload: Optional[Message] = None,
        attrs: Optional[Dict[str, str]] = None,
    ) -> Event:
        event = Event(
            seq=len(self._trace.events),
            time=self._clock,
            kind=kind,
            src=src,
            dst=dst,
            payload=payload,
            attrs=dict(attrs or {}),
        )
        self._trace.events.append(event)
        return event

    def _dispatch(self, endpoint: str, observation: Observation) -> None:
        if self.stopped or self.errored:
            return
        try:
            actions = self._endpoints[endpoint].handle(observation, self._clock)
            for action in actions:
                self._execute(endpoint, action)
                if self.stopped:
                    break
        except (TimeOverflowError, RunawayError):
            raise
        except Exception as exc:  # handler failure is a crash of the service under test
            self.errored = True
            self.error = f"{type(exc).__name__}: {exc}"
            self.error_endpoint = endpoint
            logger.info("endpoint %s crashed: %s", endpoint, self.error)
            self.log(endpoint, "handler failure", level="error", attrs={"error": self.error})

    def _execute(self, endpoint: str, action: Action) -> None:
        if isinstance(action, Send):
            if action.dst is None:
                raise AddressingError(f"endpoint '{endpoint}' sent {action.message.msg_type} without a destination")
            self.send(endpoint, action.dst, action.message)
        elif isinstance(action, SetTimer):
            self.set_timer(endpoint, action.delay, action.timer_id)
        elif isinstance(action, CancelTimer):
            self.cancel_timer(endpoint, action.timer_id)
        elif isinstance(action, Log):
            self.log(endpoint, action.text, action.level, action.attrs)
        elif isinstance(action, Annotate):
            self._record(action.kind, src=endpoint, attrs=action.attrs)
        elif isinstance(action, Stop):
            self.stopped = True
            self.stop_verdict = action.verdict
            self.stop_endpoint = endpoint
        else:
            raise TypeError(f"unknown action {action!r}")
