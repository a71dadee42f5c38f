"""Shipped protocol specifications and implementations under test."""

from importlib import resources
from typing import List, Mapping, Optional

from protocol_testbed.domain.protocol_spec import ProtocolSpec
from protocol_testbed.infrastructure.spec_loader import load_spec


def shipped_spec_names() -> List[str]:
    """Names of the specification documents bundled with the package."""
    specs = resources.files(__name__) / "specs"
    return sorted(entry.name[: -len(".yaml")] for entry in specs.iterdir() if entry.name.endswith(".yaml"))


def load_shipped_spec(name: str, overrides: Optional[Mapping[str, int]] = None) -> ProtocolSpec:
    """Load a bundled specification document, replacing some constants."""
    document = resources.files(__name__) / "specs" / f"{name}.yaml"
    if not document.is_file():
        raise LookupError(f"No shipped specification named '{name}' (available: {', '.join(shipped_spec_names())})")
    return load_spec(document.read_text(encoding="utf-8"), overrides)
