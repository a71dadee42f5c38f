"""Built-in plugins and the default registry."""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from protocol_testbed.application.drivers import ExplorerDriver, FuzzerDriver, SpecTesterDriver
from protocol_testbed.application.environments import DetSimNetwork, InProcessEnvironment, MetricsEnvironment
from protocol_testbed.application.plugin_registry import (
    PluginDescriptor,
    PluginKind,
    PluginRegistry,
    SchemaField,
    ValueType,
)
from protocol_testbed.domain.compiler import CompiledSpec, compile_spec
from protocol_testbed.domain.protocol_spec import ProtocolSpec
from protocol_testbed.domain.simulation import DEFAULT_STEP_LIMIT, Reactor
from protocol_testbed.domain.tester import TesterPolicy
from protocol_testbed.domain.value_objects import U64_MAX, NetworkParams, ms
from protocol_testbed.protocols import minip, tinyq

logger = logging.getLogger(__name__)

U32_MAX = (1 << 32) - 1


@dataclass(frozen=True)
class ProtocolProvider:
    """A Protocol plugin instance: builds its spec for a given network."""

    name: str
    build: Callable[[NetworkParams], ProtocolSpec]

    def spec(self, network: NetworkParams) -> ProtocolSpec:
        return self.build(network)

    def compile(self, network: NetworkParams) -> CompiledSpec:
        return compile_spec(self.build(network))


@dataclass(frozen=True)
class IutProvider:
    """An Iut plugin instance: makes a fresh handler from a seed."""

    name: str
    protocol: str
    make: Callable[[int], Reactor]


def _minip_protocol(params: Mapping[str, Any]) -> ProtocolProvider:
    settings = minip.MiniPParams(
        rto=int(params.get("rto", ms(200))),
        max_retries=int(params.get("max_retries", 3)),
        version=int(params.get("version", 1)),
        data_count=int(params.get("data_count", 3)),
    )
    return ProtocolProvider(minip.PROTOCOL, lambda network: minip.minip_spec(settings, network))


def _tinyq_protocol(params: Mapping[str, Any]) -> ProtocolProvider:
    settings = tinyq.TinyQParams(
        rto=int(params.get("rto", ms(200))),
        max_retries=int(params.get("max_retries", 3)),
        app_count=int(params.get("app_count", 2)),
    )
    return ProtocolProvider(tinyq.PROTOCOL, lambda network: tinyq.tinyq_spec(settings, network))


def _retransmission_schema(*extra: SchemaField) -> tuple:
    return (
        SchemaField.optional("rto", ValueType.DURATION, ms(200), range=(1, U64_MAX)),
        SchemaField.optional("max_retries", ValueType.INT, 3, range=(1, 1000)),
    ) + extra


ROLE_FIELD = SchemaField.optional("role", ValueType.STRING, "client", choices=("client", "server"))

PROTOCOL_PLUGINS = (
    PluginDescriptor(
        PluginKind.PROTOCOL,
        minip.PROTOCOL,
        _minip_protocol,
        _retransmission_schema(
            SchemaField.optional("version", ValueType.INT, 1, range=(0, 255)),
            SchemaField.optional("data_count", ValueType.INT, 3, range=(1, U32_MAX)),
        ),
        description="handshake, sequenced data with retransmission, teardown",
    ),
    PluginDescriptor(
        PluginKind.PROTOCOL,
        tinyq.PROTOCOL,
        _tinyq_protocol,
        _retransmission_schema(SchemaField.optional("app_count", ValueType.INT, 2, range=(1, U32_MAX))),
        description="connection-ID handshake",
    ),
)


def _iut_plugins() -> tuple:
    descriptors = [
        PluginDescriptor(
            PluginKind.IUT,
            "minip_server",
            lambda params: IutProvider("minip_server", minip.PROTOCOL, lambda seed: minip.minip_server()),
            protocols=(minip.PROTOCOL,),
            description="correct MiniP server",
        ),
        PluginDescriptor(
            PluginKind.IUT,
            "tinyq_server",
            lambda params: IutProvider("tinyq_server", tinyq.PROTOCOL, lambda seed: tinyq.tinyq_server(seed)),
            protocols=(tinyq.PROTOCOL,),
            description="correct TinyQ server",
        ),
        PluginDescriptor(
            PluginKind.IUT,
            f"tinyq_server:{tinyq.BUG_CID}",
            lambda params: IutProvider(
                f"tinyq_server:{tinyq.BUG_CID}", tinyq.PROTOCOL, lambda seed: tinyq.tinyq_server(seed, tinyq.BUG_CID)
            ),
            protocols=(tinyq.PROTOCOL,),
            description="TinyQ server answering with dcid=0",
        ),
    ]
    for bug in minip.BugId:
        name = f"minip_server:{bug.value}"
        descriptors.append(
            PluginDescriptor(
                PluginKind.IUT,
                name,
                _bugged_minip(name, bug),
                protocols=(minip.PROTOCOL,),
                description=f"MiniP server with {bug.value}",
            )
        )
    return tuple(descriptors)


def _bugged_minip(name: str, bug: minip.BugId) -> Callable[[Mapping[str, Any]], IutProvider]:
    return lambda params: IutProvider(name, minip.PROTOCOL, lambda seed: minip.minip_server(bug))


TESTER_PLUGINS = (
    PluginDescriptor(
        PluginKind.TESTER,
        "spec_tester",
        SpecTesterDriver.from_params,
        (
            ROLE_FIELD,
            SchemaField.optional(
                "policy",
                ValueType.STRING,
                TesterPolicy.UNIFORM_RANDOM.value,
                choices=tuple(policy.value for policy in TesterPolicy),
            ),
            SchemaField.optional("max_steps", ValueType.INT, 100_000, range=(1, U64_MAX)),
            SchemaField.optional("stray_rate", ValueType.RATIONAL, 0.0, range=(0, 1)),
        ),
        description="strict tester derived from the protocol specification, optionally sending out of order",
    ),
    PluginDescriptor(
        PluginKind.TESTER,
        "fuzzer",
        FuzzerDriver.from_params,
        (
            ROLE_FIELD,
            SchemaField.optional("mutation_rate", ValueType.RATIONAL, 0.3, range=(0, 1)),
            SchemaField.optional("budget_steps", ValueType.INT, 1000, range=(1, U64_MAX)),
            SchemaField.optional("minimize", ValueType.BOOL, True),
        ),
        description="stateful fuzzer over a lenient spec tester",
    ),
    PluginDescriptor(
        PluginKind.TESTER,
        "explorer",
        ExplorerDriver.from_params,
        (
            ROLE_FIELD,
            SchemaField.optional("max_depth", ValueType.INT, 12, range=(0, 64)),
            SchemaField.optional("stray_budget", ValueType.INT, 1, range=(0, 8)),
            SchemaField.optional("max_runs", ValueType.INT, 10_000, range=(1, U64_MAX)),
        ),
        description="bounded exhaustive exploration of the tester's choices",
    ),
)

ENVIRONMENT_PLUGINS = (
    PluginDescriptor(
        PluginKind.NETWORK_ENVIRONMENT,
        "detsim",
        DetSimNetwork.from_params,
        (
            SchemaField.optional("latency", ValueType.DURATION, ms(50)),
            SchemaField.optional("jitter", ValueType.DURATION, 0),
            SchemaField.optional("bandwidth_bps", ValueType.INT, 0, range=(0, U64_MAX)),
            SchemaField.optional("loss_rate", ValueType.RATIONAL, 0.0, range=(0, 1)),
            SchemaField.optional("step_limit", ValueType.INT, DEFAULT_STEP_LIMIT, range=(1, U64_MAX)),
        ),
        description="deterministic discrete-event network simulator",
    ),
    PluginDescriptor(
        PluginKind.EXECUTION_ENVIRONMENT,
        "inproc",
        lambda params: InProcessEnvironment(),
        description="services run as in-process handlers",
    ),
    PluginDescriptor(
        PluginKind.EXECUTION_ENVIRONMENT,
        "metrics",
        lambda params: MetricsEnvironment(),
        description="in-process with per-service message, byte and transition counts",
    ),
)


def register_builtins(registry: PluginRegistry) -> PluginRegistry:
    for descriptor in PROTOCOL_PLUGINS + _iut_plugins() + TESTER_PLUGINS + ENVIRONMENT_PLUGINS:
        registry.register(descriptor)
    return registry


def default_registry() -> PluginRegistry:
    """A sealed registry holding every built-in plugin."""
    registry = register_builtins(PluginRegistry()).seal()
    logger.debug("default registry holds %d plugins", len(registry))
    return registry
