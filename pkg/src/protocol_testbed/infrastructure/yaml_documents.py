"""Loader for the YAML subset used by experiment and specification documents."""

import logging
import re
from typing import Any, Dict, Sequence, Type, TypeVar, Union

import yaml
from pydantic import BaseModel, ValidationError

from protocol_testbed.domain.errors import ConfigStructureError, ConfigSyntaxError

logger = logging.getLogger(__name__)

_SCALARS = (str, int, float, bool)
_BOOL_TAG = "tag:yaml.org,2002:bool"

Model = TypeVar("Model", bound=BaseModel)


class DocumentLoader(yaml.SafeLoader):
    """SafeLoader reading only true and false as booleans; on, off, yes and no stay strings."""


DocumentLoader.yaml_implicit_resolvers = {
    first: [(tag, pattern) for tag, pattern in resolvers if tag != _BOOL_TAG]
    for first, resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
DocumentLoader.add_implicit_resolver(_BOOL_TAG, re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"), list("tTfF"))


def load_document(text: str) -> Dict[str, Any]:
    """
    Parse one YAML document whose top level is a map. Maps, lists, strings,
    integers, decimals and booleans are accepted; anchors, aliases, tags that
    produce other types and multi-document streams are rejected.
    """
    documents = 0
    try:
        for event in yaml.parse(text, Loader=DocumentLoader):
            if isinstance(event, yaml.DocumentStartEvent):
                documents += 1
                if documents > 1:
                    raise _syntax("multi-document streams are not supported", event.start_mark)
            elif isinstance(event, yaml.AliasEvent):
                raise _syntax(f"alias '*{event.anchor}' is not supported", event.start_mark)
            elif isinstance(event, yaml.NodeEvent) and event.anchor is not None:
                raise _syntax(f"anchor '&{event.anchor}' is not supported", event.start_mark)
        data = yaml.load(text, Loader=DocumentLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        message = exc.problem or str(exc)
        raise _syntax(message, mark) from exc
    except yaml.YAMLError as exc:
        raise ConfigSyntaxError(str(exc)) from exc

    if data is None:
        raise ConfigStructureError("<document>", "document is empty")
    if not isinstance(data, dict):
        raise ConfigStructureError("<document>", "top level must be a map")
    _check_values(data, "")
    return data


def dump_document(data: Dict[str, Any]) -> str:
    """Serialize a document with keys in insertion order."""
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False, allow_unicode=True)


def validate_document(model: Type[Model], document: Dict[str, Any]) -> Model:
    """
    Validate a loaded document against a pydantic model. The first problem,
    preferring a missing key, is raised as a ConfigStructureError whose path
    reads like services[1].name.
    """
    try:
        return model.model_validate(document)
    except ValidationError as exc:
        errors = exc.errors()
        first = next((error for error in errors if error["type"] == "missing"), errors[0])
        logger.debug("%s rejected with %d errors", model.__name__, len(errors))
        raise ConfigStructureError(document_path(first["loc"]), _message(first)) from None


def document_path(loc: Sequence[Union[str, int]]) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)
    return path or "<document>"


def _message(error: Dict[str, Any]) -> str:
    if error["type"] == "missing":
        return "missing mandatory key"
    if error["type"] == "extra_forbidden":
        return "unknown key"
    if error["type"] == "value_error":
        return str(error["ctx"]["error"])
    return error["msg"]


def _syntax(message: str, mark: Any) -> ConfigSyntaxError:
    if mark is None:
        return ConfigSyntaxError(message)
    return ConfigSyntaxError(message, line=mark.line + 1, column=mark.column + 1)


def _check_values(value: Any, path: str) -> None:
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise ConfigStructureError(path or "<document>", f"key {key!r} must be a string")
            _check_values(item, f"{path}.{key}" if path else key)
    elif isinstance(value, list):
        for index, item in enumerate(value):
            _check_values(item, f"{path}[{index}]")
    elif not isinstance(value, _SCALARS):
        raise ConfigStructureError(path, f"unsupported value {value!r}")
