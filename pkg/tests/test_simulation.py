"""Unit tests for the discrete-event network simulator."""

import pytest

from protocol_testbed.domain.errors import (
    AddressingError,
    RunawayError,
    SimulationParameterError,
    TimeOverflowError,
)
from protocol_testbed.domain.simulation import (
    CancelTimer,
    Idle,
    Send,
    SetTimer,
    Simulation,
    Stop,
    TimerFired,
)
from protocol_testbed.domain.value_objects import (
    U64_MAX,
    EventKind,
    Message,
    NetworkParams,
    Verdict,
    checked_add,
    ms,
)


def message(size=1, seq=0):
    return Message(protocol="test", msg_type="PING", fields={"seq": seq}, size_bytes=size)


class Sink:
    def __init__(self):
        self.seen = []

    def handle(self, observation, now):
        self.seen.append((now, observation))
        return []


class Pinger:
    """Sends one message per period to peer until count messages are out."""

    def __init__(self, peer, count, period=ms(100), size=1):
        self.peer = peer
        self.count = count
        self.period = period
        self.size = size
        self.sent = 0

    def handle(self, observation, now):
        if isinstance(observation, (Idle, TimerFired)) and self.sent < self.count:
            self.sent += 1
            return [Send(message(self.size, self.sent), dst=self.peer), SetTimer("tick", self.period)]
        return []


class Burst:
    """Sends count messages to peer at once."""

    def __init__(self, peer, count):
        self.peer = peer
        self.count = count

    def handle(self, observation, now):
        if isinstance(observation, Idle):
            return [Send(message(seq=i), dst=self.peer) for i in range(self.count)]
        return []


def run_pair(params, sender, horizon=ms(1_000_000)):
    sim = Simulation(params)
    sim.attach("a", sender)
    sim.attach("b", Sink())
    sim.inject("a", Idle())
    sim.run_until(horizon)
    return sim


def delays(trace):
    sent = [e.time for e in trace.events if e.kind == EventKind.SENT]
    delivered = [e.time for e in trace.events if e.kind == EventKind.DELIVERED]
    return [d - s for s, d in zip(sent, delivered)]


class TestDelivery:
    """Tests for message delivery timing."""

    def test_fixed_latency(self):
        """Test a message arrives exactly latency_base after it is sent."""
        sim = run_pair(NetworkParams(latency_base=ms(50)), Pinger("b", 1))
        delivered = [e for e in sim.trace.events if e.kind == EventKind.DELIVERED]
        assert [e.time for e in delivered] == [ms(50)]
        assert delivered[0].src == "a" and delivered[0].dst == "b"

    def test_serialization_delay(self):
        """Test 1000 bytes over 8000 bit/s take one second on the wire."""
        params = NetworkParams(latency_base=0, bandwidth_bps=8000)
        sim = run_pair(params, Pinger("b", 1, size=1000))
        assert delays(sim.trace) == [1_000_000_000]

    def test_total_loss_drops_everything(self):
        """Test loss_rate 1 turns every send into Sent then Dropped."""
        sim = run_pair(NetworkParams(loss_rate=1.0), Pinger("b", 5))
        kinds = [e.kind for e in sim.trace.events if e.kind in (EventKind.SENT, EventKind.DROPPED, EventKind.DELIVERED)]
        assert kinds == [EventKind.SENT, EventKind.DROPPED] * 5

    def test_fifo_per_pair(self):
        """Test messages sent together on one pair arrive in order, 1ns apart at least."""
        sim = run_pair(NetworkParams(jitter=ms(20), seed=11), Burst("b", 50))
        delivered = [e for e in sim.trace.events if e.kind == EventKind.DELIVERED]
        assert [e.payload.fields["seq"] for e in delivered] == list(range(50))
        times = [e.time for e in delivered]
        assert all(later > earlier for earlier, later in zip(times, times[1:]))

    def test_jitter_mean(self):
        """Test uniform jitter over [0, 10ms] averages close to 5ms."""
        sim = run_pair(NetworkParams(latency_base=0, jitter=ms(10), seed=5), Pinger("b", 10_000), ms(2_000_000))
        observed = delays(sim.trace)
        assert len(observed) == 10_000
        assert all(0 <= d <= ms(10) for d in observed)
        mean = sum(observed) / len(observed)
        assert 4.7e6 <= mean <= 5.3e6

    def test_loss_rate_within_three_sigma(self):
        """Test the drop count of 10,000 sends at 30% loss is within three standard deviations."""
        sim = run_pair(NetworkParams(loss_rate=0.3, seed=123), Pinger("b", 10_000), ms(2_000_000))
        dropped = sum(1 for e in sim.trace.events if e.kind == EventKind.DROPPED)
        assert 2863 <= dropped <= 3137

    def test_same_seed_same_trace(self):
        """Test runs with equal parameters produce equal event logs."""
        params = NetworkParams(jitter=ms(10), loss_rate=0.2, seed=77)
        first = run_pair(params, Pinger("b", 100))
        second = run_pair(params, Pinger("b", 100))
        assert first.trace.events == second.trace.events


class TestTimers:
    """Tests for timers."""

    def test_timer_fires_after_delay(self):
        """Test a timer fires at set time plus delay."""

        class Once:
            def handle(self, observation, now):
                return [SetTimer("t", ms(30))] if isinstance(observation, Idle) else []

        sim = Simulation(NetworkParams())
        sim.attach("a", Once())
        sim.inject("a", Idle())
        sim.run_until(ms(100))
        fired = [e for e in sim.trace.events if e.kind == EventKind.TIMER_FIRED]
        assert [(e.time, e.attrs["timer_id"]) for e in fired] == [(ms(30), "t")]

    def test_rearm_replaces(self):
        """Test re-arming a pending timer leaves a single expiry at the new time."""

        class Twice:
            def handle(self, observation, now):
                if isinstance(observation, Idle):
                    return [SetTimer("t", ms(30)), SetTimer("t", ms(60))]
                return []

        sim = Simulation(NetworkParams())
        sim.attach("a", Twice())
        sim.inject("a", Idle())
        sim.run_until(ms(100))
        fired = [e.time for e in sim.trace.events if e.kind == EventKind.TIMER_FIRED]
        assert fired == [ms(60)]
        replaced = [e for e in sim.trace.events if e.kind == EventKind.TIMER_SET and e.attrs.get("replaced")]
        assert len(replaced) == 1

    def test_cancel(self):
        """Test a cancelled timer never fires and a second cancel warns."""

        class Cancelling:
            def handle(self, observation, now):
                if isinstance(observation, Idle):
                    return [SetTimer("t", ms(30)), CancelTimer("t"), CancelTimer("t")]
                return []

        sim = Simulation(NetworkParams())
        sim.attach("a", Cancelling())
        sim.inject("a", Idle())
        sim.run_until(ms(100))
        assert not [e for e in sim.trace.events if e.kind == EventKind.TIMER_FIRED]
        cancels = [e for e in sim.trace.events if e.kind == EventKind.TIMER_CANCELLED]
        assert "warning" not in cancels[0].attrs
        assert cancels[1].attrs["warning"] == "not-pending"


class TestRunControl:
    """Tests for run_until, stopping and failures."""

    def test_horizon_sets_end_time(self):
        """Test an idle run is observed until its horizon."""
        sim = Simulation(NetworkParams())
        sim.attach("a", Sink())
        trace = sim.run_until(ms(500))
        assert trace.end_time == ms(500)
        assert trace.events == []

    def test_stop_halts_run(self):
        """Test a Stop action ends the run at the current clock."""

        class Stopper:
            def handle(self, observation, now):
                if isinstance(observation, TimerFired):
                    return [Stop(Verdict.passed())]
                return [SetTimer("t", ms(10))]

        sim = Simulation(NetworkParams())
        sim.attach("a", Stopper())
        sim.inject("a", Idle())
        trace = sim.run_until(ms(1000))
        assert sim.stopped and sim.stop_verdict.is_pass
        assert trace.end_time == ms(10)

    def test_step_limit(self):
        """Test a run that never settles raises RunawayError."""

        class Forever:
            def handle(self, observation, now):
                return [SetTimer("t", 1)]

        sim = Simulation(NetworkParams(), step_limit=100)
        sim.attach("a", Forever())
        sim.inject("a", Idle())
        with pytest.raises(RunawayError):
            sim.run_until(U64_MAX)

    def test_handler_crash_is_recorded(self):
        """Test an exception in a handler marks the run errored with an error log."""

        class Broken:
            def handle(self, observation, now):
                raise KeyError("boom")

        sim = Simulation(NetworkParams())
        sim.attach("a", Broken())
        sim.inject("a", Idle())
        assert sim.errored and sim.error_endpoint == "a"
        assert sim.trace.events[-1].kind == EventKind.SERVICE_LOG
        assert sim.trace.events[-1].attrs["level"] == "error"

    def test_addressing(self):
        """Test duplicate and unknown endpoints are rejected."""
        sim = Simulation(NetworkParams())
        sim.attach("a", Sink())
        with pytest.raises(AddressingError):
            sim.attach("a", Sink())
        with pytest.raises(AddressingError):
            sim.send("a", "nowhere", message())

    def test_invalid_parameters(self):
        """Test out-of-range link parameters are refused."""
        with pytest.raises(SimulationParameterError):
            Simulation(NetworkParams(loss_rate=1.5))
        with pytest.raises(SimulationParameterError):
            Simulation(NetworkParams(bandwidth_bps=0))

    def test_time_overflow(self):
        """Test arithmetic past 2^64 - 1 nanoseconds raises."""
        with pytest.raises(TimeOverflowError):
            checked_add(U64_MAX, 1)
