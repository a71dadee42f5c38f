"""Plugin catalog: five kinds, each with named descriptors carrying a schema and a factory."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from protocol_testbed.domain.errors import (
    PluginLifecycleError,
    PluginNotFoundError,
    PluginRegistrationError,
)

logger = logging.getLogger(__name__)


class PluginKind(Enum):
    """Plugin categories; declaration order is the listing order."""

    TESTER = "Tester"
    IUT = "Iut"
    EXECUTION_ENVIRONMENT = "ExecutionEnvironment"
    NETWORK_ENVIRONMENT = "NetworkEnvironment"
    PROTOCOL = "Protocol"

    @staticmethod
    def parse(value: str) -> "PluginKind":
        """Accept the value ("NetworkEnvironment") or the member name ("NETWORK_ENVIRONMENT")."""
        for kind in PluginKind:
            if value in (kind.value, kind.name) or value.lower() == kind.value.lower():
                return kind
        raise ValueError(f"Unknown plugin kind '{value}' (kinds: {', '.join(k.value for k in PluginKind)})")


class ValueType(Enum):
    INT = "int"
    STRING = "string"
    BOOL = "bool"
    RATIONAL = "rational"
    DURATION = "duration"


@dataclass(frozen=True)
class SchemaField:
    """One parameter a plugin accepts."""

    key: str
    value_type: ValueType
    required: bool = False
    default: Any = None
    range: Optional[Tuple[float, float]] = None
    choices: Optional[Sequence[str]] = None
    description: str = ""

    def __post_init__(self):
        if self.required and self.default is not None:
            raise PluginRegistrationError(f"schema field '{self.key}' is required and has a default")

    @staticmethod
    def optional(key: str, value_type: ValueType, default: Any, **kwargs: Any) -> "SchemaField":
        return SchemaField(key=key, value_type=value_type, default=default, **kwargs)


PluginFactory = Callable[[Mapping[str, Any]], Any]


@dataclass(frozen=True)
class PluginDescriptor:
    """Registration record of one plugin. protocols, when set, lists the Protocol plugins it works with."""

    kind: PluginKind
    name: str
    factory: PluginFactory = field(compare=False, repr=False)
    schema: Tuple[SchemaField, ...] = ()
    version: str = "0.1.0"
    description: str = ""
    protocols: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise PluginRegistrationError("plugin name must be non-empty")
        keys = [f.key for f in self.schema]
        duplicates = sorted({k for k in keys if keys.count(k) > 1})
        if duplicates:
            raise PluginRegistrationError(f"{self.kind.value} '{self.name}': duplicate schema keys {duplicates}")

    def schema_field(self, key: str) -> Optional[SchemaField]:
        for schema_field in self.schema:
            if schema_field.key == key:
                return schema_field
        return None

    def create(self, params: Mapping[str, Any]) -> Any:
        """Instantiate the plugin from validated params."""
        return self.factory(params)


class PluginRegistry:
    """
    Build-phase catalog. Registration is only possible until seal(); resolve
    is only possible after it, when the catalog no longer changes.
    """

    def __init__(self) -> None:
        self._descriptors: Dict[Tuple[PluginKind, str], PluginDescriptor] = {}
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def register(self, descriptor: PluginDescriptor) -> None:
        if self._sealed:
            raise PluginLifecycleError(f"cannot register {descriptor.kind.value} '{descriptor.name}' after seal")
        key = (descriptor.kind, descriptor.name)
        if key in self._descriptors:
            raise PluginRegistrationError(f"{descriptor.kind.value} '{descriptor.name}' is already registered")
        self._descriptors[key] = descriptor
        logger.debug("registered %s %s", descriptor.kind.value, descriptor.name)

    def seal(self) -> "PluginRegistry":
        self._sealed = True
        return self

    def resolve(self, kind: PluginKind, name: str) -> PluginDescriptor:
        if not self._sealed:
            raise PluginLifecycleError("registry must be sealed before plugins are resolved")
        descriptor = self._descriptors.get((kind, name))
        if descriptor is None:
            raise PluginNotFoundError(kind.value, name, [d.name for d in self.list_by_kind(kind)])
        return descriptor

    def list_by_kind(self, kind: PluginKind) -> List[PluginDescriptor]:
        return sorted((d for (k, _), d in self._descriptors.items() if k == kind), key=lambda d: d.name)

    def all(self) -> List[PluginDescriptor]:
        """Every descriptor, by kind in declaration order then by name."""
        return [d for kind in PluginKind for d in self.list_by_kind(kind)]

    def __len__(self) -> int:
        return len(self._descriptors)
