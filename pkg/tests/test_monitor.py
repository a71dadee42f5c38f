"""Unit tests for offline trace checking over hand-built MiniP traces."""

import pytest

from protocol_testbed.application.drivers import INCOMPLETE, combine_verdicts
from protocol_testbed.domain.monitor import (
    HORIZON,
    UNEXPECTED_MESSAGE,
    UNKNOWN_MESSAGE,
    check_trace,
    infer_role_map,
    producing_role,
)
from protocol_testbed.domain.value_objects import Event, EventKind, Message, Trace, Verdict, ms


class TraceBuilder:
    """Appends events with consecutive sequence numbers; times in milliseconds."""

    def __init__(self):
        self.events = []

    def add(self, at, kind, src=None, dst=None, msg_type=None, attrs=None, **fields):
        payload = Message("minip", msg_type, fields) if msg_type else None
        self.events.append(Event(len(self.events), ms(at), kind, src, dst, payload, attrs or {}))
        return self

    def exchange(self, at, src, dst, msg_type, **fields):
        """Sent at `at`, delivered 50ms later."""
        self.add(at, EventKind.SENT, src, dst, msg_type, **fields)
        return self.add(at + 50, EventKind.DELIVERED, src, dst, msg_type, **fields)

    def trace(self):
        return Trace(events=list(self.events))


def handshake():
    return TraceBuilder().exchange(0, "client", "server", "HELLO", ver=1).exchange(50, "server", "client", "HELLO_ACK", ver=1)


def with_data(ack_seq=0):
    return handshake().exchange(100, "client", "server", "DATA", seq=0).exchange(150, "server", "client", "ACK", seq=ack_seq)


def lost_ack():
    """DATA delivered at 150ms and its ACK dropped; events 0..7."""
    builder = handshake().exchange(100, "client", "server", "DATA", seq=0)
    builder.add(150, EventKind.SENT, "server", "client", "ACK", seq=0)
    return builder.add(150, EventKind.DROPPED, "server", "client", "ACK", seq=0)


class TestSafety:
    """Tests for safety properties."""

    def test_conforming_exchange_passes(self, minip_compiled):
        assert check_trace(minip_compiled, with_data().trace()).is_pass

    def test_wrong_ack_fails_at_the_send(self, minip_compiled):
        """Test an ACK for another sequence number fails where it is sent."""
        verdict = check_trace(minip_compiled, with_data(ack_seq=5).trace())
        assert verdict.is_fail
        assert verdict.reason == "ack-matches-seq"
        assert verdict.event_seq == 6

    def test_version_echo(self, minip_compiled):
        trace = TraceBuilder().exchange(0, "client", "server", "HELLO", ver=1)
        trace.add(50, EventKind.SENT, "server", "client", "HELLO_ACK", ver=2)
        assert check_trace(minip_compiled, trace.trace()).reason == "version-echo"

    def test_ack_before_handshake(self, minip_compiled):
        """Test acknowledging DATA before any HELLO fails."""
        trace = TraceBuilder().exchange(0, "client", "server", "DATA", seq=0)
        trace.add(50, EventKind.SENT, "server", "client", "ACK", seq=0)
        assert check_trace(minip_compiled, trace.trace()).reason == "no-data-before-handshake"


class TestTimed:
    """Tests for timed properties and the observation horizon."""

    def test_missed_deadline(self, minip_compiled):
        """Test a DATA left unanswered past the deadline fails at its delivery."""
        builder = handshake().exchange(100, "client", "server", "DATA", seq=0)
        builder.add(300, EventKind.SENT, "client", "server", "DATA", seq=0)
        verdict = check_trace(minip_compiled, builder.trace())
        assert verdict.reason == "ack-deadline"
        assert verdict.event_seq == 5

    def test_drop_excuses_and_horizon_is_inconclusive(self, minip_compiled):
        """Test a dropped ACK excuses the deadline and an open retransmission obligation is inconclusive."""
        builder = lost_ack().add(300, EventKind.SENT, "client", "server", "DATA", seq=0)
        verdict = check_trace(minip_compiled, builder.trace())
        assert verdict.is_inconclusive
        assert verdict.reason == HORIZON

    def test_end_time_extends_observation(self, minip_compiled):
        """Test an obligation due before end_time fails even without later events."""
        trace = lost_ack().add(300, EventKind.SENT, "client", "server", "DATA", seq=0).trace()
        trace.end_time = ms(1000)
        assert check_trace(minip_compiled, trace).reason == "retx-deadline"


class TestJudgedRole:
    """Tests for restricting the check to one role's properties."""

    def test_producers(self, minip_compiled):
        timed = {p.id: p for p in minip_compiled.spec.timed_properties}
        safety = {p.id: p for p in minip_compiled.spec.safety_properties}
        assert producing_role(minip_compiled, timed["retx-deadline"].response) == "client"
        assert producing_role(minip_compiled, timed["ack-deadline"].response) == "server"
        assert producing_role(minip_compiled, safety["ack-matches-seq"].scope) == "server"

    def test_tester_obligations_are_skipped(self, minip_compiled):
        """Test a missing retransmission fails the full check but not the server's."""
        trace = lost_ack().add(400, EventKind.SERVICE_LOG, "server").trace()
        assert check_trace(minip_compiled, trace).reason == "retx-deadline"
        assert check_trace(minip_compiled, trace, judged_role="server").is_pass


class TestMessages:
    """Tests for undeclared and unexpected messages."""

    def test_unknown_message(self, minip_compiled):
        trace = TraceBuilder().add(0, EventKind.SENT, "client", "server", "BOGUS").trace()
        verdict = check_trace(minip_compiled, trace)
        assert verdict.reason == UNKNOWN_MESSAGE and verdict.event_seq == 0

    def test_unexpected_only_at_observer(self, minip_compiled):
        """Test an unmatched delivery fails only at the observer role."""
        builder = TraceBuilder().exchange(0, "client", "server", "HELLO", ver=1)
        builder.add(100, EventKind.DELIVERED, "server", "client", "FIN_ACK")
        assert check_trace(minip_compiled, builder.trace()).is_pass
        verdict = check_trace(minip_compiled, builder.trace(), observer_role="client")
        assert verdict.reason == UNEXPECTED_MESSAGE
        assert verdict.event_seq == 2


class TestRoleMap:
    """Tests for infer_role_map."""

    def test_provenance_and_defaults(self, minip_compiled):
        builder = TraceBuilder()
        builder.add(0, EventKind.SERVICE_LOG, "iut", attrs={"role": "server", "command": "serve"})
        builder.add(0, EventKind.SERVICE_LOG, "watcher", attrs={"role": "observer"})
        builder.add(1, EventKind.SERVICE_LOG, "late", attrs={"role": "client"})
        assert infer_role_map(minip_compiled, builder.trace()) == {"iut": "server", "client": "client", "server": "server"}


class TestCombineVerdicts:
    """Tests for combining offline and online verdicts."""

    @pytest.mark.parametrize(
        "offline, online, completed, expected",
        [
            (Verdict.fail("a"), Verdict.fail("b"), True, Verdict.fail("a")),
            (Verdict.passed(), Verdict.fail("b"), True, Verdict.fail("b")),
            (Verdict.inconclusive(HORIZON), Verdict.fail("b"), True, Verdict.fail("b")),
            (Verdict.inconclusive(HORIZON), None, False, Verdict.inconclusive(HORIZON)),
            (Verdict.passed(), None, False, Verdict.inconclusive(INCOMPLETE)),
            (Verdict.passed(), Verdict.passed(), True, Verdict.passed()),
        ],
    )
    def test_priority(self, offline, online, completed, expected):
        assert combine_verdicts(offline, online, completed) == expected
