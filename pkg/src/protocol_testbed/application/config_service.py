"""Experiment declarations: parsing, schema validation and command templates."""

import logging
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, PlainValidator, StrictInt, StrictStr, model_validator

from protocol_testbed.application.plugin_registry import (
    PluginDescriptor,
    PluginKind,
    PluginRegistry,
    SchemaField,
    ValueType,
)
from protocol_testbed.domain.errors import (
    ConfigStructureError,
    PluginNotFoundError,
    TemplateError,
    TemplateTypeError,
)
from protocol_testbed.domain.value_objects import NS_PER_S, U64_MAX, parse_duration
from protocol_testbed.infrastructure.yaml_documents import dump_document, load_document, validate_document

logger = logging.getLogger(__name__)

DEFAULT_EXECUTION = "inproc"
DEFAULT_TIMEOUT = 10 * NS_PER_S

PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_.]*)\s*\}\}")


class ServiceRole(Enum):
    TESTER = "tester"
    IUT = "iut"


@dataclass(frozen=True)
class PluginRef:
    """A plugin named by a document; the kind is implied by where it appears."""

    kind: PluginKind
    name: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ServiceConfig:
    name: str
    role: ServiceRole
    protocol: PluginRef
    implementation: PluginRef
    command_template: str = ""
    template_params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TestConfig:
    """One test: a tester service driving a target service."""

    __test__ = False

    test_name: str
    tester_service: str
    target_service: str
    iterations: int = 1
    timeout: int = DEFAULT_TIMEOUT
    seed_offset: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    """Declaration of one experiment."""

    name: str
    seed: int
    network: PluginRef
    services: Tuple[ServiceConfig, ...]
    tests: Tuple[TestConfig, ...]
    execution: PluginRef = field(
        default_factory=lambda: PluginRef(PluginKind.EXECUTION_ENVIRONMENT, DEFAULT_EXECUTION)
    )
    output_dir: str = ""

    def __post_init__(self):
        if not self.output_dir:
            object.__setattr__(self, "output_dir", f"./results/{self.name}")

    def service(self, name: str) -> Optional[ServiceConfig]:
        for service in self.services:
            if service.name == name:
                return service
        return None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def with_output_dir(self, output_dir: str) -> "ExperimentConfig":
        return replace(self, output_dir=output_dir)


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str

    def to_dict(self) -> Dict[str, str]:
        return {"path": self.path, "message": self.message}


@dataclass
class ValidationReport:
    """
    Result of validate_config. ok iff there are no errors; resolved is the
    validated copy with defaults filled and durations in nanoseconds.
    """

    errors: List[ValidationIssue] = field(default_factory=list)
    warnings: List[ValidationIssue] = field(default_factory=list)
    filled: List[str] = field(default_factory=list)
    resolved: Optional[ExperimentConfig] = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, path: str, message: str) -> None:
        self.errors.append(ValidationIssue(path, message))

    def warn(self, path: str, message: str) -> None:
        self.warnings.append(ValidationIssue(path, message))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok,
            "errors": [issue.to_dict() for issue in self.errors],
            "warnings": [issue.to_dict() for issue in self.warnings],
            "filled": list(self.filled),
        }

    def lines(self) -> List[str]:
        """Human-readable form printed by the CLI."""
        if self.ok:
            out = ["ok"]
        else:
            out = [f"error: {issue.path}: {issue.message}" for issue in self.errors]
        out.extend(f"warning: {issue.path}: {issue.message}" for issue in self.warnings)
        return out


# Parsing


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PluginRefDocument(_Document):
    """A plugin reference: a bare name or {name, params}."""

    name: StrictStr
    params: Optional[Dict[str, Any]] = None

    @model_validator(mode="before")
    @classmethod
    def _bare_name(cls, value: Any) -> Any:
        return {"name": value} if isinstance(value, str) else value

    def to_ref(self, kind: PluginKind) -> PluginRef:
        return PluginRef(kind, self.name, dict(self.params or {}))


class ServiceDocument(_Document):
    name: StrictStr
    role: Literal["tester", "iut"]
    protocol: PluginRefDocument
    implementation: PluginRefDocument
    command_template: StrictStr = ""
    template_params: Optional[Dict[str, Any]] = None

    def to_service(self) -> ServiceConfig:
        role = ServiceRole(self.role)
        return ServiceConfig(
            name=self.name,
            role=role,
            protocol=self.protocol.to_ref(PluginKind.PROTOCOL),
            implementation=self.implementation.to_ref(
                PluginKind.TESTER if role == ServiceRole.TESTER else PluginKind.IUT
            ),
            command_template=self.command_template,
            template_params=dict(self.template_params or {}),
        )


class TestDocument(_Document):
    __test__ = False

    name: StrictStr
    tester: StrictStr
    target: StrictStr
    iterations: StrictInt = 1
    timeout: Annotated[int, PlainValidator(parse_duration)] = DEFAULT_TIMEOUT
    seed_offset: StrictInt = 0

    def to_test(self) -> TestConfig:
        return TestConfig(
            test_name=self.name,
            tester_service=self.tester,
            target_service=self.target,
            iterations=self.iterations,
            timeout=self.timeout,
            seed_offset=self.seed_offset,
        )


class ExperimentDocument(_Document):
    """Shape of an experiment declaration; field order is the order missing keys are reported in."""

    name: StrictStr
    seed: StrictInt
    network: PluginRefDocument
    services: List[ServiceDocument]
    tests: List[TestDocument]
    execution: PluginRefDocument = Field(default_factory=lambda: PluginRefDocument(name=DEFAULT_EXECUTION))
    output_dir: StrictStr = ""


def parse_config(text: str) -> ExperimentConfig:
    """
    Build an ExperimentConfig from document text. Only structure is checked
    here; plugin names, params and cross-references are left to validate_config.
    Raises ConfigSyntaxError or ConfigStructureError.
    """
    document = validate_document(ExperimentDocument, load_document(text))
    services = tuple(item.to_service() for item in document.services)
    seen: Dict[str, int] = {}
    for index, service in enumerate(services):
        if service.name in seen:
            raise ConfigStructureError(
                f"services[{index}].name", f"duplicate service name '{service.name}' (first at services[{seen[service.name]}])"
            )
        seen[service.name] = index
    return ExperimentConfig(
        name=document.name,
        seed=document.seed,
        network=document.network.to_ref(PluginKind.NETWORK_ENVIRONMENT),
        services=services,
        tests=tuple(item.to_test() for item in document.tests),
        execution=document.execution.to_ref(PluginKind.EXECUTION_ENVIRONMENT),
        output_dir=document.output_dir,
    )


# Serialization


def _ref_document(ref: PluginRef) -> Dict[str, Any]:
    document: Dict[str, Any] = {"name": ref.name}
    if ref.params:
        document["params"] = dict(ref.params)
    return document


def config_document(config: ExperimentConfig) -> Dict[str, Any]:
    """Plain-data form of a config, in document key order."""
    services = []
    for service in config.services:
        entry: Dict[str, Any] = {
            "name": service.name,
            "role": service.role.value,
            "protocol": _ref_document(service.protocol),
            "implementation": _ref_document(service.implementation),
        }
        if service.command_template:
            entry["command_template"] = service.command_template
        if service.template_params:
            entry["template_params"] = dict(service.template_params)
        services.append(entry)
    tests = [
        {
            "name": test.test_name,
            "tester": test.tester_service,
            "target": test.target_service,
            "iterations": test.iterations,
            "timeout": test.timeout,
            "seed_offset": test.seed_offset,
        }
        for test in config.tests
    ]
    return {
        "name": config.name,
        "seed": config.seed,
        "network": _ref_document(config.network),
        "execution": _ref_document(config.execution),
        "services": services,
        "tests": tests,
        "output_dir": config.output_dir,
    }


def serialize_config(config: ExperimentConfig) -> str:
    """Document text that parse_config reads back into an equal config."""
    return dump_document(config_document(config))


# Validation


def validate_config(config: ExperimentConfig, registry: PluginRegistry) -> ValidationReport:
    """
    Check every plugin reference, parameter and cross-reference, accumulating
    all problems. The input is not modified; report.resolved carries the
    validated copy when there are no errors.
    """
    report = ValidationReport()
    if not config.name:
        report.error("name", "must be non-empty")
    if not 0 <= config.seed <= U64_MAX:
        report.error("seed", "must be an unsigned 64-bit integer")

    network = _check_ref(config.network, "network", registry, report)
    execution = _check_ref(config.execution, "execution", registry, report)

    services: List[ServiceConfig] = []
    unresolved: Set[str] = set()
    for index, service in enumerate(config.services):
        path = f"services[{index}]"
        if not service.name:
            report.error(f"{path}.name", "must be non-empty")
        protocol = _check_ref(service.protocol, f"{path}.protocol", registry, report)
        implementation = _check_ref(service.implementation, f"{path}.implementation", registry, report)
        supported = _supported_protocols(registry, service.implementation)
        if not _resolves(registry, service.protocol):
            unresolved.add(service.name)
        elif supported and service.protocol.name not in supported:
            report.error(
                f"{path}.implementation.name",
                f"'{service.implementation.name}' does not implement protocol '{service.protocol.name}'",
            )
        resolved = replace(service, protocol=protocol, implementation=implementation)
        try:
            render_template(resolved.command_template, service_context(resolved, config.seed))
        except TemplateError as exc:
            report.error(f"{path}.command_template", str(exc))
        services.append(resolved)

    _check_tests(config, unresolved, report)

    if report.ok:
        report.resolved = replace(config, network=network, execution=execution, services=tuple(services))
    logger.info(
        "validated %s: %d errors, %d defaults filled", config.name or "<unnamed>", len(report.errors), len(report.filled)
    )
    return report


def _check_ref(ref: PluginRef, path: str, registry: PluginRegistry, report: ValidationReport) -> PluginRef:
    try:
        descriptor = registry.resolve(ref.kind, ref.name)
    except PluginNotFoundError as exc:
        report.error(f"{path}.name", str(exc))
        return ref
    params = check_params(descriptor, ref.params, f"{path}.params", report)
    return replace(ref, params=params)


def _resolves(registry: PluginRegistry, ref: PluginRef) -> bool:
    try:
        registry.resolve(ref.kind, ref.name)
    except PluginNotFoundError:
        return False
    return True


def _supported_protocols(registry: PluginRegistry, ref: PluginRef) -> Tuple[str, ...]:
    try:
        return registry.resolve(ref.kind, ref.name).protocols
    except PluginNotFoundError:
        return ()


def check_params(
    descriptor: PluginDescriptor, params: Mapping[str, Any], path: str, report: ValidationReport
) -> Dict[str, Any]:
    """Type, range and presence checks of params against the descriptor's schema; defaults filled."""
    flat = _flatten(params)
    known = {schema_field.key for schema_field in descriptor.schema}
    for key in flat:
        if key not in known:
            report.error(f"{path}.{key}", f"unknown key for {descriptor.kind.value} '{descriptor.name}'")
    checked: Dict[str, Any] = {}
    for schema_field in descriptor.schema:
        where = f"{path}.{schema_field.key}"
        if schema_field.key not in flat:
            if schema_field.required:
                report.error(where, "missing required key")
            elif schema_field.default is not None:
                checked[schema_field.key] = _normalize(schema_field, schema_field.default)
                report.filled.append(where)
            continue
        problem = _check_value(schema_field, flat[schema_field.key])
        if problem:
            report.error(where, problem)
            continue
        checked[schema_field.key] = _normalize(schema_field, flat[schema_field.key])
    return _unflatten(checked)


def _check_value(schema_field: SchemaField, value: Any) -> Optional[str]:
    value_type = schema_field.value_type
    if value_type == ValueType.BOOL:
        return None if isinstance(value, bool) else f"expected a boolean, got {value!r}"
    if value_type == ValueType.STRING:
        if not isinstance(value, str):
            return f"expected a string, got {value!r}"
        if schema_field.choices and value not in schema_field.choices:
            return f"'{value}' is not one of: {', '.join(schema_field.choices)}"
        return None
    if isinstance(value, bool):
        return f"expected {value_type.value}, got {value!r}"
    if value_type == ValueType.INT and not isinstance(value, int):
        return f"expected an integer, got {value!r}"
    if value_type == ValueType.RATIONAL and not isinstance(value, (int, float)):
        return f"expected a number, got {value!r}"
    number = value
    if value_type == ValueType.DURATION:
        try:
            number = parse_duration(value)
        except ValueError as exc:
            return str(exc)
    if schema_field.range is not None:
        low, high = schema_field.range
        if not low <= number <= high:
            return f"{value} is outside [{_number(low)}, {_number(high)}]"
    return None


def _number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def _normalize(schema_field: SchemaField, value: Any) -> Any:
    if schema_field.value_type == ValueType.DURATION:
        return parse_duration(value)
    return value


def _flatten(params: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in params.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        *parents, leaf = dotted.split(".")
        target = nested
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    return nested


def _check_tests(config: ExperimentConfig, unresolved: Set[str], report: ValidationReport) -> None:
    names = set()
    for index, test in enumerate(config.tests):
        path = f"tests[{index}]"
        if not test.test_name:
            report.error(f"{path}.name", "must be non-empty")
        elif test.test_name in names:
            report.error(f"{path}.name", f"duplicate test name '{test.test_name}'")
        names.add(test.test_name)
        tester = config.service(test.tester_service)
        target = config.service(test.target_service)
        if tester is None:
            report.error(f"{path}.tester", f"no service named '{test.tester_service}'")
        elif tester.role != ServiceRole.TESTER:
            report.error(f"{path}.tester", f"service '{tester.name}' has role {tester.role.value}, expected tester")
        if target is None:
            report.error(f"{path}.target", f"no service named '{test.target_service}'")
        elif target.role != ServiceRole.IUT:
            report.error(f"{path}.target", f"service '{target.name}' has role {target.role.value}, expected iut")
        if test.tester_service == test.target_service:
            report.error(f"{path}.target", "tester and target must be different services")
        if (
            tester is not None
            and target is not None
            and not {tester.name, target.name} & unresolved
            and tester.protocol.name != target.protocol.name
        ):
            report.error(
                f"{path}.target",
                f"protocol '{target.protocol.name}' differs from the tester's '{tester.protocol.name}'",
            )
        if test.iterations < 1:
            report.error(f"{path}.iterations", "must be at least 1")
        if test.timeout <= 0:
            report.error(f"{path}.timeout", "must be positive")
        if not 0 <= test.seed_offset <= U64_MAX:
            report.error(f"{path}.seed_offset", "must be an unsigned 64-bit integer")


# Templates


def service_context(service: ServiceConfig, seed: int) -> Dict[str, Any]:
    """Names a service's command template may reference."""
    context: Dict[str, Any] = {
        "name": service.name,
        "role": service.role.value,
        "seed": seed,
        "protocol": service.protocol.name,
        "implementation": service.implementation.name,
        "params": dict(service.implementation.params),
        "protocol_params": dict(service.protocol.params),
    }
    context.update(service.template_params)
    return context


def render_template(template: str, context: Mapping[str, Any]) -> str:
    """
    Replace every {{ identifier }} by the value at that dotted path of context.
    Raises TemplateError for malformed or unresolved placeholders and
    TemplateTypeError for non-scalar values.
    """
    leftover = PLACEHOLDER.sub("", template)
    if "{{" in leftover or "}}" in leftover:
        raise TemplateError(template, "unbalanced, nested or malformed placeholder")
    return PLACEHOLDER.sub(lambda match: _render_value(match.group(1), context), template)


def _render_value(identifier: str, context: Mapping[str, Any]) -> str:
    value: Any = context
    for part in identifier.split("."):
        if not isinstance(value, Mapping) or part not in value:
            raise TemplateError(identifier, "unresolved placeholder")
        value = value[part]
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(Decimal(repr(value)), "f")
    if isinstance(value, str):
        return value
    raise TemplateTypeError(identifier, f"placeholder resolves to a non-scalar {type(value).__name__}")
