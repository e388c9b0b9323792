"""Command-line entry point; progress and results are JSON lines on stdout."""

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from . import __version__
from .config import ENV_PREFIX, RunConfig, config_error, parse_override, resolve_config
from .errors import ComputationError, ConfpermError
from .manager import AnalysisManager, ArtifactEvent, ResultEvent

logger = logging.getLogger(__name__)

COMMANDS = ("analyze", "simulate", "partials", "baseline", "generate")


def emit(msg: dict[str, Any]) -> None:
    """Emit a JSON message to stdout."""
    print(json.dumps(msg, default=str), flush=True)


def emit_status(message: str) -> None:
    emit({"type": "status", "message": message})


def emit_artifact(path: Path, kind: str) -> None:
    emit({"type": "artifact", "path": str(path), "kind": kind})


def emit_result(command: str, summary: dict[str, Any]) -> None:
    emit({"type": "result", "command": command, "summary": summary})


def emit_metadata(command: str, seed: int, threads: int, duration_ms: int) -> None:
    emit({
        "type": "metadata",
        "command": command,
        "seed": seed,
        "threads": threads,
        "duration_ms": duration_ms,
    })


def emit_error(error: ConfpermError) -> None:
    emit(error.to_record())


def emit_done(success: bool) -> None:
    emit({"type": "done", "success": success})


def configure_logging(level: str | None) -> None:
    level = (level or os.environ.get(ENV_PREFIX + "LOG_LEVEL") or "WARNING").upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[%(name)s] %(message)s"))
    root = logging.getLogger("confperm")
    root.handlers[:] = [handler]
    root.setLevel(level if level in logging.getLevelNamesMapping() else "WARNING")
    root.propagate = False


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value or JSON config file")
    common.add_argument("--seed", type=int, help="master seed for every random stream")
    common.add_argument("--threads", type=int, help="worker threads for permutation loops")
    common.add_argument("--metric", help="auc, accuracy, mse, mae, pearson or ccc")
    common.add_argument("--b", type=int, help="number of permutations")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")

    parser = argparse.ArgumentParser(
        prog="confperm",
        description="Permutation tests and corrections for confounded ML evaluations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "test and correct a model trained on your data",
        "simulate": "reproduce a simulation study",
        "partials": "partial (distance) association via restricted permutations",
        "baseline": "correct against a population-of-interest baseline",
        "generate": "write synthetic data or a parameter design",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for item in args.set:
        key, value = parse_override(item)
        overrides[key] = value
    for key in ("seed", "threads", "metric", "b", "out"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return overrides


def _write_error_file(out: str | None, error: ConfpermError) -> None:
    if not out:
        return
    try:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / "error.json").write_text(json.dumps(error.to_record(), indent=2) + "\n")
    except OSError as e:
        logger.warning("Could not write error.json: %s", e)


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    start_time = time.time()
    config: RunConfig | None = None

    try:
        config = resolve_config(args.config, overrides_from_args(args))
        manager = AnalysisManager(config)
        for item in manager.run(args.command):
            if isinstance(item, ArtifactEvent):
                emit_artifact(item.path, item.kind)
            elif isinstance(item, ResultEvent):
                emit_result(item.command, item.summary)
            elif isinstance(item, str):
                emit_status(item)
    except ConfpermError as e:
        return _fail(e, config, args)
    except ValidationError as e:
        return _fail(config_error(e), config, args)
    except Exception as e:
        logger.debug("Unhandled error", exc_info=True)
        return _fail(ComputationError(f"{type(e).__name__}: {e}"), config, args)

    duration_ms = int((time.time() - start_time) * 1000)
    emit_metadata(args.command, config.seed, config.threads, duration_ms)
    emit_done(True)
    return 0


def _fail(error: ConfpermError, config: RunConfig | None, args: argparse.Namespace) -> int:
    emit_error(error)
    _write_error_file(config.out if config else args.out, error)
    emit_done(False)
    return error.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
