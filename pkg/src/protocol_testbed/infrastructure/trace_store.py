"""Result files: JSON-lines traces, result summaries, findings and reports."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from protocol_testbed.domain.compiler import CompiledSpec
from protocol_testbed.domain.errors import ExperimentRuntimeError
from protocol_testbed.domain.value_objects import Event, EventKind, FieldValue, Message, Trace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESULT_FILE = "result.json"
RESOLVED_CONFIG_FILE = "resolved_config.yaml"
VALIDATION_REPORT_FILE = "validation_report.json"


def trace_file_name(test_name: str, iteration: int, suffix: str = "") -> str:
    extra = f"_{suffix}" if suffix else ""
    return f"trace_{test_name}_{iteration}{extra}.jsonl"


def finding_file_name(finding_id: str) -> str:
    return f"finding_{finding_id}.json"


def _encode_value(value: FieldValue) -> Union[int, str]:
    if isinstance(value, bytes):
        return value.hex()
    return value


def event_record(event: Event) -> Dict[str, Any]:
    """Key order seq, time_ns, kind, src, dst, msg_type, fields, attrs; absent optionals left out."""
    record: Dict[str, Any] = {"seq": event.seq, "time_ns": event.time, "kind": event.kind.value}
    if event.src is not None:
        record["src"] = event.src
    if event.dst is not None:
        record["dst"] = event.dst
    if event.payload is not None:
        record["msg_type"] = event.payload.msg_type
        record["fields"] = {name: _encode_value(value) for name, value in event.payload.fields.items()}
    if event.attrs:
        record["attrs"] = {key: event.attrs[key] for key in sorted(event.attrs)}
    return record


def trace_lines(trace: Trace) -> str:
    """The serialized trace; equal traces give equal text."""
    return "".join(
        json.dumps(event_record(event), separators=(",", ":"), ensure_ascii=False) + "\n" for event in trace.events
    )


def write_trace(trace: Trace, path: PathLike) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(trace_lines(trace), encoding="utf-8")
    except OSError as exc:
        raise ExperimentRuntimeError(f"cannot write trace {target}: {exc}") from exc
    logger.debug("wrote %d events to %s", len(trace), target)
    return target


def read_trace(path: PathLike, compiled: Optional[CompiledSpec] = None) -> Trace:
    """
    Parse a JSON-lines trace. With compiled, byte fields are decoded from hex
    and messages get their protocol and size; without it they stay text.
    The trace ends at its last event.
    """
    source = Path(path)
    events: List[Event] = []
    with source.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                events.append(_event(record, compiled))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{source}:{number}: malformed trace event: {exc}") from exc
    return Trace(events=events, experiment=source.stem)


def _event(record: Dict[str, Any], compiled: Optional[CompiledSpec]) -> Event:
    payload = None
    if "msg_type" in record:
        payload = _message(record["msg_type"], record.get("fields", {}), compiled)
    return Event(
        seq=int(record["seq"]),
        time=int(record["time_ns"]),
        kind=EventKind(record["kind"]),
        src=record.get("src"),
        dst=record.get("dst"),
        payload=payload,
        attrs=dict(record.get("attrs", {})),
    )


def _message(msg_type: str, raw: Dict[str, Any], compiled: Optional[CompiledSpec]) -> Message:
    schema = compiled.schema(msg_type) if compiled else None
    if schema is None:
        return Message(protocol=compiled.name if compiled else "", msg_type=msg_type, fields=dict(raw))
    fields: Dict[str, FieldValue] = {}
    for name, value in raw.items():
        decl = schema.field(name)
        fields[name] = bytes.fromhex(value) if decl is not None and decl.type == "bytes" else value
    return Message(protocol=compiled.name, msg_type=msg_type, fields=fields, size_bytes=schema.size_of(fields))


def write_json(data: Any, path: PathLike) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExperimentRuntimeError(f"cannot write {target}: {exc}") from exc
    logger.info("wrote %s", target)
    return target


def write_text(text: str, path: PathLike) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ExperimentRuntimeError(f"cannot write {target}: {exc}") from exc
    logger.info("wrote %s", target)
    return target


def trace_files(directory: PathLike) -> Iterable[Path]:
    return sorted(Path(directory).glob("trace_*.jsonl"))
