"""Pytest configuration and fixtures."""

from pathlib import Path

import pytest

from protocol_testbed.application.drivers import DriverResult, IterationContext
from protocol_testbed.application.environments import DetSimNetwork, InProcessEnvironment
from protocol_testbed.application.plugin_catalog import default_registry
from protocol_testbed.domain.compiler import compile_spec
from protocol_testbed.domain.value_objects import ms
from protocol_testbed.protocols import minip, tinyq

EXPERIMENTS_DIR = Path(__file__).resolve().parent.parent / "experiments"


@pytest.fixture
def registry():
    """Sealed registry with every built-in plugin."""
    return default_registry()


@pytest.fixture
def minip_compiled():
    """MiniP compiled for the default network."""
    return compile_spec(minip.minip_spec())


@pytest.fixture
def tinyq_compiled():
    """TinyQ compiled for the default network."""
    return compile_spec(tinyq.tinyq_spec())


@pytest.fixture
def experiments_dir():
    """Directory of the shipped experiment declarations."""
    return EXPERIMENTS_DIR


@pytest.fixture
def output_dir(tmp_path):
    """Fresh results directory for one test."""
    return tmp_path / "results"


@pytest.fixture
def run_iteration():
    """Run one iteration of a tester driver against a target handler factory."""

    def run(compiled, make_target, driver, seed=0, network=None, timeout=ms(10_000)) -> DriverResult:
        context = IterationContext(
            test_name="t",
            iteration=0,
            seed=seed,
            timeout=timeout,
            compiled=compiled,
            network=network or DetSimNetwork(),
            environment=InProcessEnvironment(),
            tester_endpoint="client",
            target_endpoint="server",
            make_target=make_target,
        )
        return driver.run(context)

    return run


@pytest.fixture
def minimal_config_text():
    """Smallest valid experiment: a spec tester against the correct MiniP server."""
    return """
name: smoke
seed: 3
network: detsim
services:
  - name: server
    role: iut
    protocol: minip
    implementation: minip_server
  - name: client
    role: tester
    protocol: minip
    implementation: spec_tester
tests:
  - name: conformance
    tester: client
    target: server
"""
