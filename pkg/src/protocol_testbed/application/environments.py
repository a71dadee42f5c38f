"""Network and execution environment plugins."""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Mapping, Optional

from protocol_testbed.domain.compiler import CompiledSpec
from protocol_testbed.domain.monitor import RoleReplay, infer_role_map
from protocol_testbed.domain.simulation import DEFAULT_STEP_LIMIT, Reactor, Simulation
from protocol_testbed.domain.value_objects import EventKind, NetworkParams, Trace, ms

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetSimNetwork:
    """The deterministic simulator as a network environment; bandwidth_bps 0 is unlimited."""

    latency: int = ms(50)
    jitter: int = 0
    bandwidth_bps: int = 0
    loss_rate: float = 0.0
    step_limit: int = DEFAULT_STEP_LIMIT

    @staticmethod
    def from_params(params: Mapping[str, Any]) -> "DetSimNetwork":
        return DetSimNetwork(
            latency=int(params.get("latency", ms(50))),
            jitter=int(params.get("jitter", 0)),
            bandwidth_bps=int(params.get("bandwidth_bps", 0)),
            loss_rate=float(params.get("loss_rate", 0.0)),
            step_limit=int(params.get("step_limit", DEFAULT_STEP_LIMIT)),
        )

    def params(self, seed: int) -> NetworkParams:
        return NetworkParams(
            latency_base=self.latency,
            jitter=self.jitter,
            bandwidth_bps=self.bandwidth_bps or None,
            loss_rate=self.loss_rate,
            seed=seed,
        )

    def create(self, seed: int, experiment: str = "") -> Simulation:
        return Simulation(self.params(seed), experiment=experiment, step_limit=self.step_limit)


class InProcessEnvironment:
    """Services run as in-process handlers with nothing collected."""

    name = "inproc"

    def wrap(self, endpoint: str, reactor: Reactor) -> Reactor:
        return reactor

    def collect(
        self, trace: Trace, endpoints: Iterable[str], compiled: Optional[CompiledSpec] = None
    ) -> Optional[Dict[str, Dict[str, int]]]:
        return None


class MetricsEnvironment(InProcessEnvironment):
    """
    Counts messages, bytes and state transitions per service from the trace.
    Services that emit no StateTransition events, such as implementations under
    test, have their transitions counted by replaying their events against the
    protocol specification.
    """

    name = "metrics"

    def collect(
        self, trace: Trace, endpoints: Iterable[str], compiled: Optional[CompiledSpec] = None
    ) -> Optional[Dict[str, Dict[str, int]]]:
        counts: Dict[str, Counter] = {endpoint: Counter() for endpoint in endpoints}
        for event in trace.events:
            if event.kind == EventKind.SENT and event.src in counts and event.payload is not None:
                counts[event.src]["messages_sent"] += 1
                counts[event.src]["bytes_sent"] += event.payload.size_bytes
            elif event.kind == EventKind.DELIVERED and event.dst in counts and event.payload is not None:
                counts[event.dst]["messages_received"] += 1
                counts[event.dst]["bytes_received"] += event.payload.size_bytes
            elif event.kind == EventKind.DROPPED and event.src in counts:
                counts[event.src]["messages_dropped"] += 1
            elif event.kind == EventKind.STATE_TRANSITION and event.src in counts:
                counts[event.src]["state_transitions"] += 1
        if compiled is not None:
            silent = [endpoint for endpoint, counter in counts.items() if not counter["state_transitions"]]
            for endpoint, taken in replayed_transitions(compiled, trace, silent).items():
                counts[endpoint]["state_transitions"] = taken
        keys = ("messages_sent", "messages_received", "messages_dropped", "bytes_sent", "bytes_received", "state_transitions")
        metrics = {endpoint: {key: counter[key] for key in keys} for endpoint, counter in counts.items()}
        logger.debug("collected metrics for %s", ", ".join(metrics))
        return metrics


def replayed_transitions(compiled: CompiledSpec, trace: Trace, endpoints: Iterable[str]) -> Dict[str, int]:
    """Spec transitions each endpoint took, reconstructed from its sends, deliveries and timers."""
    role_map = infer_role_map(compiled, trace)
    replays = {endpoint: RoleReplay.initial(compiled, role_map[endpoint]) for endpoint in endpoints if endpoint in role_map}
    for event in trace.events:
        replay = replays.get(event.endpoint or "")
        if replay is not None and event.kind in (EventKind.SENT, EventKind.DELIVERED, EventKind.TIMER_FIRED):
            replay.replay(compiled, event)
    return {endpoint: replay.transitions_taken for endpoint, replay in replays.items()}
