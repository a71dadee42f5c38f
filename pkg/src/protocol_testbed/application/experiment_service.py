"""Experiment orchestration: validate, instantiate plugins, run tests, write results."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from protocol_testbed.application.config_service import (
    ExperimentConfig,
    ServiceConfig,
    TestConfig,
    ValidationReport,
    render_template,
    serialize_config,
    service_context,
    validate_config,
)
from protocol_testbed.application.drivers import DriverResult, IterationContext
from protocol_testbed.application.plugin_catalog import IutProvider, ProtocolProvider
from protocol_testbed.application.plugin_registry import PluginRegistry
from protocol_testbed.domain.compiler import CompiledSpec
from protocol_testbed.domain.errors import ExperimentRuntimeError
from protocol_testbed.domain.fuzzer import Finding
from protocol_testbed.domain.value_objects import U64_MAX, Verdict
from protocol_testbed.infrastructure import trace_store

logger = logging.getLogger(__name__)


class ExitStatus(Enum):
    ALL_PASS = "AllPass"
    SOME_FAIL = "SomeFail"
    CONFIG_ERROR = "ConfigError"
    RUNTIME_ERROR = "RuntimeError"

    @property
    def exit_code(self) -> int:
        return {"AllPass": 0, "SomeFail": 1, "ConfigError": 2, "RuntimeError": 3}[self.value]


def iteration_seed(seed: int, seed_offset: int, iteration: int) -> int:
    """Seed of one test iteration: experiment seed XOR seed_offset XOR iteration."""
    return (seed ^ seed_offset ^ iteration) & U64_MAX


@dataclass
class TestOutcome:
    __test__ = False

    test_name: str
    iteration: int
    seed_used: int
    verdict: Verdict
    trace_path: Optional[Path] = None
    metrics: Optional[Dict[str, Dict[str, int]]] = None
    findings: List[str] = field(default_factory=list)
    tester_steps: int = 0

    def to_dict(self) -> Dict[str, Any]:
        summary: Dict[str, Any] = {
            "test_name": self.test_name,
            "iteration": self.iteration,
            "seed_used": self.seed_used,
            "verdict": self.verdict.status.value,
        }
        if self.verdict.is_fail:
            summary["property"] = self.verdict.reason
        elif self.verdict.reason:
            summary["reason"] = self.verdict.reason
        summary["trace"] = self.trace_path.name if self.trace_path else None
        if self.metrics is not None:
            summary["metrics"] = self.metrics
        if self.findings:
            summary["findings"] = list(self.findings)
        return summary


@dataclass
class ExperimentResult:
    experiment: str
    started: datetime
    exit_status: ExitStatus
    outcomes: List[TestOutcome] = field(default_factory=list)
    resolved_config_path: Optional[Path] = None
    output_dir: Optional[Path] = None
    validation: Optional[ValidationReport] = None
    error: Optional[str] = None

    @property
    def exit_code(self) -> int:
        return self.exit_status.exit_code

    def to_dict(self) -> Dict[str, Any]:
        summary: Dict[str, Any] = {
            "experiment": self.experiment,
            "started": self.started.isoformat(),
            "exit_status": self.exit_status.value,
            "outcomes": [outcome.to_dict() for outcome in self.outcomes],
        }
        if self.error:
            summary["error"] = self.error
        return summary


@dataclass
class _PreparedTest:
    test: TestConfig
    tester: ServiceConfig
    target: ServiceConfig
    compiled: CompiledSpec
    driver: Any
    target_provider: IutProvider


class ExperimentService:
    """Runs validated experiments with the plugins of one registry."""

    def __init__(self, registry: PluginRegistry):
        self.registry = registry

    def run(
        self,
        config: ExperimentConfig,
        output_dir: Optional[str] = None,
        seed: Optional[int] = None,
        test_filter: Optional[str] = None,
        parallel: int = 1,
    ) -> ExperimentResult:
        """
        Validate, then run every test iteration in declaration order. Nothing
        but validation_report.json is written when validation fails.
        """
        started = datetime.now(timezone.utc)
        if seed is not None:
            config = config.with_seed(seed)
        if output_dir:
            config = config.with_output_dir(output_dir)
        out = Path(config.output_dir)

        report = validate_config(config, self.registry)
        if test_filter is not None and all(test.test_name != test_filter for test in config.tests):
            report.error("tests", f"no test named '{test_filter}'")
        if not report.ok or report.resolved is None:
            trace_store.write_json(report.to_dict(), out / trace_store.VALIDATION_REPORT_FILE)
            logger.info("%s: configuration rejected with %d errors", config.name, len(report.errors))
            return ExperimentResult(config.name, started, ExitStatus.CONFIG_ERROR, output_dir=out, validation=report)

        resolved = report.resolved
        result = ExperimentResult(resolved.name, started, ExitStatus.ALL_PASS, output_dir=out, validation=report)
        try:
            result.resolved_config_path = trace_store.write_text(
                serialize_config(resolved), out / trace_store.RESOLVED_CONFIG_FILE
            )
            network = self._instantiate(resolved.network, "network")
            environment = self._instantiate(resolved.execution, "execution")
            commands = self._commands(resolved)
            tests = [t for t in resolved.tests if test_filter is None or t.test_name == test_filter]
            prepared = [self._prepare(resolved, test, network) for test in tests]
            units = [(p, iteration) for p in prepared for iteration in range(p.test.iterations)]

            def run_unit(unit: Tuple[_PreparedTest, int]) -> TestOutcome:
                return self._run_iteration(resolved, unit[0], unit[1], network, environment, commands, out)

            if parallel > 1:
                with ThreadPoolExecutor(max_workers=parallel) as pool:
                    for outcome in pool.map(run_unit, units):
                        result.outcomes.append(outcome)
            else:
                for unit in units:
                    result.outcomes.append(run_unit(unit))
        except ExperimentRuntimeError as exc:
            logger.error("%s: %s", resolved.name, exc)
            result.exit_status = ExitStatus.RUNTIME_ERROR
            result.error = str(exc)
        else:
            if not all(outcome.verdict.is_pass for outcome in result.outcomes):
                result.exit_status = ExitStatus.SOME_FAIL
        try:
            trace_store.write_json(result.to_dict(), out / trace_store.RESULT_FILE)
        except ExperimentRuntimeError as exc:
            logger.error("%s: %s", resolved.name, exc)
            result.exit_status = ExitStatus.RUNTIME_ERROR
            result.error = str(exc)
        logger.info(
            "%s: %s (%d outcomes) in %s", resolved.name, result.exit_status.value, len(result.outcomes), out
        )
        return result

    # Plugin instantiation

    def _instantiate(self, ref: Any, service: str) -> Any:
        descriptor = self.registry.resolve(ref.kind, ref.name)
        try:
            return descriptor.create(ref.params)
        except Exception as exc:
            raise ExperimentRuntimeError(f"{ref.kind.value} '{ref.name}' failed to start: {exc}", service) from exc

    def _commands(self, config: ExperimentConfig) -> Dict[str, str]:
        commands = {}
        for service in config.services:
            template = service.command_template or service.implementation.name
            commands[service.name] = render_template(template, service_context(service, config.seed))
        return commands

    def _prepare(self, config: ExperimentConfig, test: TestConfig, network: Any) -> _PreparedTest:
        tester = config.service(test.tester_service)
        target = config.service(test.target_service)
        assert tester is not None and target is not None
        protocol: ProtocolProvider = self._instantiate(tester.protocol, tester.name)
        try:
            compiled = protocol.compile(network.params(config.seed))
        except Exception as exc:
            raise ExperimentRuntimeError(f"protocol '{protocol.name}' does not compile: {exc}", tester.name) from exc
        driver = self._instantiate(tester.implementation, tester.name)
        target_provider: IutProvider = self._instantiate(target.implementation, target.name)
        return _PreparedTest(test, tester, target, compiled, driver, target_provider)

    # Execution

    def _run_iteration(
        self,
        config: ExperimentConfig,
        prepared: _PreparedTest,
        iteration: int,
        network: Any,
        environment: Any,
        commands: Dict[str, str],
        out: Path,
    ) -> TestOutcome:
        test = prepared.test
        seed = iteration_seed(config.seed, test.seed_offset, iteration)
        context = IterationContext(
            test_name=test.test_name,
            iteration=iteration,
            seed=seed,
            timeout=test.timeout,
            compiled=prepared.compiled,
            network=network,
            environment=environment,
            tester_endpoint=prepared.tester.name,
            target_endpoint=prepared.target.name,
            make_target=prepared.target_provider.make,
            commands=commands,
            experiment=config.name,
        )
        logger.info("%s[%d]: seed %d", test.test_name, iteration, seed)
        try:
            run: DriverResult = prepared.driver.run(context)
        except ExperimentRuntimeError:
            raise
        except Exception as exc:
            raise ExperimentRuntimeError(f"{type(exc).__name__}: {exc}", prepared.tester.name) from exc

        trace_path = trace_store.write_trace(run.trace, out / trace_store.trace_file_name(test.test_name, iteration))
        findings = self._write_findings(test.test_name, iteration, run.findings, out)
        metrics = environment.collect(run.trace, [prepared.tester.name, prepared.target.name], prepared.compiled)
        return TestOutcome(
            test_name=test.test_name,
            iteration=iteration,
            seed_used=seed,
            verdict=run.verdict,
            trace_path=trace_path,
            metrics=metrics,
            findings=findings,
            tester_steps=run.tester_steps,
        )

    @staticmethod
    def _write_findings(test_name: str, iteration: int, findings: Sequence[Finding], out: Path) -> List[str]:
        names = []
        for finding in findings:
            finding_id = f"{test_name}_{iteration}_{finding.id}"
            trace_path = trace_store.write_trace(
                finding.trace, out / trace_store.trace_file_name(test_name, iteration, finding.id)
            )
            document = {
                "id": finding_id,
                "property": finding.property_id,
                "seed": finding.seed,
                "round": finding.round_index,
                "round_seed": finding.round_seed,
                "step_index": finding.step_index,
                "max_steps": finding.max_steps,
                "operators": [op.to_dict() for op in finding.operators_applied],
                "verdict": dict(finding.verdict.to_dict()),
                "trace": trace_path.name,
            }
            if finding.detail:
                document["detail"] = finding.detail
            path = trace_store.write_json(document, out / trace_store.finding_file_name(finding_id))
            names.append(path.name)
        return names


def run_experiment(
    config: ExperimentConfig,
    registry: PluginRegistry,
    output_dir: Optional[str] = None,
    seed: Optional[int] = None,
    test_filter: Optional[str] = None,
    parallel: int = 1,
) -> ExperimentResult:
    return ExperimentService(registry).run(config, output_dir, seed, test_filter, parallel)
