"""Exception hierarchy shared by every layer."""

from dataclasses import dataclass
from typing import List, Optional, Sequence


class TestbedError(Exception):
    """Base class for every error raised by the testbed."""

    __test__ = False


# Configuration


class ConfigSyntaxError(TestbedError, ValueError):
    """Configuration text is not a well-formed document."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        location = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{location}")


class ConfigStructureError(TestbedError, ValueError):
    """A mandatory key is missing or a value has the wrong shape."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class TemplateError(TestbedError, ValueError):
    """A command template placeholder cannot be rendered."""

    def __init__(self, identifier: str, message: str):
        self.identifier = identifier
        super().__init__(f"{identifier}: {message}")


class TemplateTypeError(TemplateError, TypeError):
    """A placeholder resolved to a non-scalar value."""


# Plugins


class PluginRegistrationError(TestbedError, ValueError):
    """A descriptor cannot be registered."""


class PluginLifecycleError(TestbedError, RuntimeError):
    """The registry was used in the wrong phase."""


class PluginNotFoundError(TestbedError, LookupError):
    """No plugin with the requested kind and name."""

    def __init__(self, kind: str, name: str, alternatives: Sequence[str]):
        self.kind = kind
        self.name = name
        self.alternatives = list(alternatives)
        available = ", ".join(self.alternatives) if self.alternatives else "none"
        super().__init__(f"No {kind} plugin named '{name}' (available: {available})")


# Simulation


class SimulationParameterError(TestbedError, ValueError):
    """Network parameters violate their invariants."""


class AddressingError(TestbedError, ValueError):
    """An endpoint name is unknown or already attached."""


class TimeOverflowError(TestbedError, OverflowError):
    """Virtual time arithmetic left the unsigned 64-bit range."""


class RunawayError(TestbedError, RuntimeError):
    """The simulation exceeded its step budget."""

    def __init__(self, message: str, last_events: Sequence[object] = ()):
        self.last_events = list(last_events)
        super().__init__(message)


# Specifications


@dataclass(frozen=True)
class SpecIssue:
    """One static problem found while compiling a specification."""

    path: str
    message: str
    transition_id: Optional[str] = None

    def __str__(self) -> str:
        where = f"[{self.transition_id}] " if self.transition_id else ""
        return f"{where}{self.path}: {self.message}"


class SpecCompileError(TestbedError, ValueError):
    """A specification failed static validation."""

    def __init__(self, issues: List[SpecIssue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(issue) for issue in self.issues))


class GuardSyntaxError(TestbedError, ValueError):
    """Guard text cannot be parsed."""


class GuardTypeError(TestbedError, TypeError):
    """A guard expression is ill-typed."""


class GuardEvaluationError(TestbedError, ArithmeticError):
    """Checked arithmetic failed while evaluating an expression."""


class InternalSpecError(TestbedError, RuntimeError):
    """An expression referenced a name its environment does not bind."""


# Fuzzing and orchestration


class MinimizationError(TestbedError, RuntimeError):
    """A finding could not be reproduced and so cannot be minimized."""


class ExperimentRuntimeError(TestbedError, RuntimeError):
    """A plugin or the filesystem failed while an experiment was running."""

    def __init__(self, message: str, service: Optional[str] = None):
        self.service = service
        prefix = f"service '{service}': " if service else ""
        super().__init__(f"{prefix}{message}")
