"""Command line entry point: ptb run | validate | plugins list | check | serve."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from protocol_testbed.application.config_service import ExperimentConfig, parse_config, validate_config
from protocol_testbed.application.experiment_service import ExitStatus, run_experiment
from protocol_testbed.application.plugin_catalog import default_registry
from protocol_testbed.application.plugin_registry import PluginKind, PluginRegistry
from protocol_testbed.domain.compiler import compile_spec
from protocol_testbed.domain.errors import ConfigStructureError, ConfigSyntaxError, SpecCompileError, TestbedError
from protocol_testbed.domain.monitor import check_trace
from protocol_testbed.infrastructure.trace_store import read_trace
from protocol_testbed.protocols import load_shipped_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors already; keep that and print usage to stderr."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptb", description="Conformance testing of protocol implementations in simulation")
    parser.add_argument(
        "--log-level",
        default=os.environ.get("PTB_LOG_LEVEL", "WARNING"),
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="logging level (default: $PTB_LOG_LEVEL or WARNING)",
    )
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    run = commands.add_parser("run", help="validate and run an experiment")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--output", default=os.environ.get("PTB_OUTPUT_DIR"), help="output directory")
    run.add_argument("--seed", type=_seed, help="override the experiment seed")
    run.add_argument("--test", help="run only the test with this name")
    run.add_argument("--parallel", type=int, default=1, help="iterations run concurrently")

    validate = commands.add_parser("validate", help="validate an experiment declaration")
    validate.add_argument("--config", required=True, type=Path)

    plugins = commands.add_parser("plugins", help="inspect the plugin catalog")
    plugin_commands = plugins.add_subparsers(dest="plugins_command", parser_class=_Parser)
    plugin_commands.required = True
    listing = plugin_commands.add_parser("list", help="list registered plugins")
    listing.add_argument("--kind", choices=[kind.value for kind in PluginKind])

    check = commands.add_parser("check", help="check a recorded trace against a protocol specification")
    check.add_argument("--spec", required=True, help="shipped protocol name")
    check.add_argument("--trace", required=True, type=Path)

    serve = commands.add_parser("serve", help="start the HTTP control surface")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _read_config(path: Path) -> ExperimentConfig:
    return parse_config(path.read_text(encoding="utf-8"))


def cmd_run(args: argparse.Namespace, registry: PluginRegistry) -> int:
    config = _read_config(args.config)
    if args.parallel < 1:
        print("error: --parallel must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    result = run_experiment(
        config, registry, output_dir=args.output, seed=args.seed, test_filter=args.test, parallel=args.parallel
    )
    if result.exit_status == ExitStatus.CONFIG_ERROR and result.validation is not None:
        for line in result.validation.lines():
            print(line, file=sys.stderr)
    elif result.error:
        print(f"error: {result.error}", file=sys.stderr)
    for outcome in result.outcomes:
        detail = f" {outcome.verdict.reason}" if outcome.verdict.reason else ""
        print(f"{outcome.test_name}[{outcome.iteration}] seed={outcome.seed_used} {outcome.verdict.status.value}{detail}")
    print(f"{result.experiment}: {result.exit_status.value} ({result.output_dir})")
    return result.exit_code


def cmd_validate(args: argparse.Namespace, registry: PluginRegistry) -> int:
    report = validate_config(_read_config(args.config), registry)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_USAGE


def cmd_plugins_list(args: argparse.Namespace, registry: PluginRegistry) -> int:
    kinds = [PluginKind(args.kind)] if args.kind else list(PluginKind)
    for kind in kinds:
        for descriptor in registry.list_by_kind(kind):
            print(f"{kind.value} {descriptor.name} {descriptor.version}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace, registry: PluginRegistry) -> int:
    try:
        compiled = compile_spec(load_shipped_spec(args.spec))
    except LookupError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    trace = read_trace(args.trace, compiled)
    verdict = check_trace(compiled, trace)
    line = verdict.status.value
    if verdict.reason:
        line += f" {verdict.reason}"
    if verdict.event_seq is not None:
        line += f" at event {verdict.event_seq}"
    print(line)
    return EXIT_FAIL if verdict.is_fail else EXIT_OK


def cmd_serve(args: argparse.Namespace, registry: PluginRegistry) -> int:
    import uvicorn

    from protocol_testbed.protocol_testbed_server import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.log_level)
    registry = default_registry()
    handlers = {
        "run": cmd_run,
        "validate": cmd_validate,
        "check": cmd_check,
        "serve": cmd_serve,
        "plugins": cmd_plugins_list,
    }
    try:
        return handlers[args.command](args, registry)
    except (ConfigSyntaxError, ConfigStructureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command in ("run", "validate", "check") else EXIT_RUNTIME
    except (SpecCompileError, ValueError) as exc:
        logger.debug("rejected input", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TestbedError as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
