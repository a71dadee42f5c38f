"""Unit tests for the stateful fuzzer."""

import pytest

from protocol_testbed.application.environments import DetSimNetwork
from protocol_testbed.domain.errors import MinimizationError
from protocol_testbed.domain.fuzzer import (
    FuzzConfig,
    FuzzSession,
    InjectionPlan,
    MutationContext,
    MutationOperator,
    fuzz_session,
    minimize,
    mutate,
    wrong_state_types,
)
from protocol_testbed.domain.monitor import RoleReplay
from protocol_testbed.domain.prng import Prng
from protocol_testbed.domain.value_objects import Message
from protocol_testbed.infrastructure.trace_store import trace_lines
from protocol_testbed.protocols import minip

PREHANDSHAKE = minip.BugId.BUG_PREHANDSHAKE_DATA


def server_factory(bug=None):
    def make(seed):
        sim = DetSimNetwork().create(seed)
        sim.attach("server", minip.minip_server(bug))
        return sim

    return make


def data(seq=5):
    return Message("minip", "DATA", {"seq": seq}, size_bytes=5)


def prehandshake_findings(compiled):
    """(session, finding) pairs from the seeds 0..9 sweep against the early-DATA bug."""
    found = []
    for seed in range(10):
        session = FuzzSession(compiled, "server", server_factory(PREHANDSHAKE), seed, FuzzConfig(budget_steps=1000))
        found.extend((session, finding) for finding in session.run())
    return found


class TestMutate:
    """Tests for the mutation operators."""

    def test_field_boundary(self, minip_compiled):
        """Test boundary mutation picks a range end."""
        result = mutate(data(), MutationOperator.FIELD_BOUNDARY, minip_compiled, Prng(1))
        assert isinstance(result, Message)
        assert result.fields["seq"] in (0, 0xFFFFFFFF)

    def test_field_random_stays_in_range(self, minip_compiled):
        """Test random values respect the declared width."""
        prng = Prng(2)
        for _ in range(50):
            result = mutate(data(), MutationOperator.FIELD_RANDOM, minip_compiled, prng)
            assert 0 <= result.fields["seq"] <= 0xFFFFFFFF

    def test_truncate_zeroes_last_field(self, minip_compiled):
        """Test truncation zeroes the trailing field and keeps empty messages."""
        assert mutate(data(), MutationOperator.TRUNCATE, minip_compiled, Prng(0)).fields["seq"] == 0
        fin = Message("minip", "FIN", {}, size_bytes=1)
        assert mutate(fin, MutationOperator.TRUNCATE, minip_compiled, Prng(0)) == fin

    def test_plans(self, minip_compiled):
        """Test duplicate, delay and replay produce injection plans."""
        duplicate = mutate(data(), MutationOperator.DUPLICATE, minip_compiled, Prng(0))
        assert isinstance(duplicate, InjectionPlan) and duplicate.sends == (data(), data())
        delay = mutate(data(), MutationOperator.DELAY, minip_compiled, Prng(0), MutationContext(delay=7))
        assert delay.delay == 7 and delay.sends == (data(),)
        replay = mutate(data(), MutationOperator.REPLAY, minip_compiled, Prng(0), MutationContext(history=(data(1),)))
        assert replay.sends == (data(), data(1))

    def test_wrong_state(self, minip_compiled):
        """Test wrong-state injection sends a type the peer cannot take, or degrades without candidates."""
        plan = mutate(data(), MutationOperator.WRONG_STATE, minip_compiled, Prng(3), MutationContext(wrong_state_types=("FIN",)))
        assert [m.msg_type for m in plan.sends] == ["FIN"]
        degraded = mutate(data(), MutationOperator.WRONG_STATE, minip_compiled, Prng(3))
        assert isinstance(degraded, Message) and degraded.msg_type == "DATA"

    @pytest.mark.parametrize("state, expected", [("LISTEN", ["DATA", "FIN"]), ("ESTABLISHED", []), ("CLOSED", ["HELLO", "DATA"])])
    def test_wrong_state_types(self, minip_compiled, state, expected):
        """Test the client types a server cannot take in each of its states, in declaration order."""
        server = RoleReplay.initial(minip_compiled, "server")
        server.state = state
        assert wrong_state_types(minip_compiled, "client", server) == expected


class TestFuzzSession:
    """Tests for fuzzing sessions."""

    def test_zero_rate_finds_nothing(self, minip_compiled):
        """Test an unmutated lenient tester finds nothing, even against the early-DATA bug."""
        for bug in (None, PREHANDSHAKE):
            assert fuzz_session(minip_compiled, "server", server_factory(bug), 3, 500, mutation_rate=0.0) == []

    def test_budget_must_be_positive(self, minip_compiled):
        """Test a zero budget is refused."""
        with pytest.raises(ValueError):
            fuzz_session(minip_compiled, "server", server_factory(), 0, 0)

    def test_finds_prehandshake_data(self, minip_compiled):
        """Test the sweep over seeds 0..9 finds data acknowledged before the handshake."""
        properties = {finding.property_id for _, finding in prehandshake_findings(minip_compiled)}
        assert "no-data-before-handshake" in properties

    def test_sessions_are_deterministic(self, minip_compiled):
        """Test equal seeds give equal findings."""
        first = fuzz_session(minip_compiled, "server", server_factory(PREHANDSHAKE), 4, 1000)
        second = fuzz_session(minip_compiled, "server", server_factory(PREHANDSHAKE), 4, 1000)
        assert [f.id for f in first] == [f.id for f in second]
        assert [trace_lines(f.trace) for f in first] == [trace_lines(f.trace) for f in second]

    def test_findings_replay_exactly(self, minip_compiled):
        """Test every finding replays to a byte-identical trace."""
        found = prehandshake_findings(minip_compiled)
        assert found
        for session, finding in found:
            replayed = session.replay(finding, finding.operators_applied)
            assert replayed is not None
            assert trace_lines(replayed.trace) == trace_lines(finding.trace)
            assert 0 < finding.step_index <= finding.max_steps
            assert replayed.step_index == finding.step_index

    def test_minimize_is_idempotent(self, minip_compiled):
        """Test minimizing twice changes nothing and never adds operators."""
        for session, finding in prehandshake_findings(minip_compiled):
            once = minimize(finding, session.replay)
            twice = minimize(once, session.replay)
            assert once.property_id == finding.property_id
            assert len(once.operators_applied) <= len(finding.operators_applied)
            assert twice.operators_applied == once.operators_applied

    def test_minimize_rejects_unreproducible(self, minip_compiled):
        """Test a finding that does not replay cannot be minimized."""
        finding = prehandshake_findings(minip_compiled)[0][1]
        with pytest.raises(MinimizationError):
            minimize(finding, lambda original, operators: None)
