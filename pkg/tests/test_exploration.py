"""Exhaustive exploration of the tester's choices on a small MiniP instance."""

import pytest

from protocol_testbed.application.environments import DetSimNetwork
from protocol_testbed.domain.compiler import compile_spec
from protocol_testbed.domain.exploration import ChoiceScript, ExplorationConfig, Explorer, explore
from protocol_testbed.protocols import minip

SMALL = minip.MiniPParams(data_count=2, max_retries=1)


@pytest.fixture
def small_compiled():
    """MiniP with two DATA messages and a single retransmission."""
    return compile_spec(minip.minip_spec(SMALL))


def server_factory(bug=None):
    def make(seed):
        sim = DetSimNetwork().create(seed)
        sim.attach("server", minip.minip_server(bug))
        return sim

    return make


class TestChoiceScript:
    """Tests for ChoiceScript."""

    def test_prefix_then_zero(self):
        """Test choices follow the prefix and default to the first option."""
        script = ChoiceScript([2, 1], max_depth=10)
        assert [script.next(3), script.next(2), script.next(4)] == [2, 1, 0]
        assert script.made == [2, 1, 0]
        assert script.arities == [3, 2, 4]

    def test_single_option_is_not_a_choice(self):
        """Test points with one option are not recorded."""
        script = ChoiceScript([], max_depth=10)
        assert script.next(1) == 0
        assert script.made == []

    def test_depth_bound(self):
        """Test points past max_depth are recorded as unbranchable."""
        script = ChoiceScript([], max_depth=1)
        script.next(3)
        script.next(3)
        assert script.arities == [3, 1]

    def test_stale_prefix_falls_back(self):
        """Test a prefix choice out of range becomes option zero."""
        assert ChoiceScript([5], max_depth=4).next(2) == 0


class TestExplorer:
    """Tests for bounded exhaustive exploration."""

    def test_correct_server_never_fails(self, small_compiled):
        """Test no explored path fails against the correct server."""
        report = explore(small_compiled, "server", server_factory())
        assert report.runs > 1
        assert not report.truncated
        assert report.failures == []

    @pytest.mark.parametrize(
        "bug, prop",
        [
            (minip.BugId.BUG_ACK, "ack-matches-seq"),
            (minip.BugId.BUG_VERSION, "version-echo"),
            (minip.BugId.BUG_NO_FINACK, "fin-deadline"),
            (minip.BugId.BUG_PREHANDSHAKE_DATA, "no-data-before-handshake"),
        ],
    )
    def test_every_bug_fails(self, small_compiled, bug, prop):
        """Test each bugged server fails its intended property on some path."""
        report = explore(small_compiled, "server", server_factory(bug))
        assert prop in report.failed_properties

    def test_without_strays_early_data_is_unreachable(self, small_compiled):
        """Test conforming choices alone never send DATA before the handshake."""
        report = explore(small_compiled, "server", server_factory(minip.BugId.BUG_PREHANDSHAKE_DATA), stray_budget=0)
        assert report.failures == []

    def test_default_path_completes(self, small_compiled):
        """Test the first explored path is the plain session."""
        report = explore(small_compiled, "server", server_factory())
        assert report.default_path.choices == [0] * len(report.default_path.choices)
        assert report.default_path.verdict.is_pass

    def test_run_limit_truncates(self, small_compiled):
        """Test hitting max_runs reports truncation."""
        explorer = Explorer(small_compiled, "server", server_factory(), ExplorationConfig(max_runs=2))
        report = explorer.explore()
        assert report.runs == 2
        assert report.truncated

    def test_paths_are_reproducible(self, small_compiled):
        """Test re-running a recorded path gives the same choices and trace."""
        explorer = Explorer(small_compiled, "server", server_factory(minip.BugId.BUG_PREHANDSHAKE_DATA))
        failing = explorer.explore().failures[0]
        again, _ = explorer.run_script(failing.choices)
        assert again.choices == failing.choices
        assert again.trace.events == failing.trace.events

    def test_negative_depth_rejected(self, small_compiled):
        """Test max_depth below zero is refused."""
        with pytest.raises(ValueError):
            Explorer(small_compiled, "server", server_factory(), ExplorationConfig(max_depth=-1))
