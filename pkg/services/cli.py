"""
services/cli.py
===============
The `dka` command line.

Usage:
    dka run --config cfg.yaml --questions q.json --annotations a.json --examples idx.json --out runs/a
    dka run --mock services/tests/fixtures/mini --ablation original-question --out runs/b
    dka run --config cfg.yaml --check
    dka score --predictions runs/a/predictions.json --questions q.json --annotations a.json
    dka index --config cfg.yaml --questions train_q.json --annotations train_a.json --output idx.json

Exit Codes:
    0: Success (per-question failures are recorded, not fatal)
    1: Run error (every question failed, missing log-probabilities, coverage check failed)
    2: Usage error (bad arguments, invalid config, unreadable dataset or index)
"""

import argparse
import asyncio
import json
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any

from contracts.base import BackendStatus
from contracts.errors import BackendLoadError, ConfigError, CoverageError, DatasetError, DKAError, EmptyIndexError
from plugins._host import configure_logging
from plugins._host.discovery import discover_backends

from .backends import build_hub
from .config import PipelineConfig, apply_overrides, load_config
from .evaluation import aggregate, load_dataset, load_predictions, score_predictions, write_run_outputs
from .pipeline import execute_run
from .rank import build_example_index, dump_example_index, load_example_index

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_USAGE = 2

ABLATIONS = ["none", "no-knowledge", "original-question", "no-caption", "no-knowledge-no-caption"]

# Errors caused by what the user passed in rather than by the run itself
USAGE_ERRORS = (ConfigError, DatasetError, BackendLoadError, EmptyIndexError)


class UsageError(Exception):
    """Missing or contradictory command-line arguments."""


def positive_int(value: str) -> int:
    """argparse type for counts that must be at least 1."""
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid int value: {value!r}") from None
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _mock_file(args: argparse.Namespace, name: str) -> Path | None:
    if args.mock is None:
        return None
    path = Path(args.mock) / name
    return path if path.exists() else None


def _resolve(explicit: str | None, args: argparse.Namespace, mock_name: str, flag: str, required: bool) -> Path | None:
    if explicit:
        return Path(explicit)
    path = _mock_file(args, mock_name)
    if path is None and required:
        raise UsageError(f"{flag} is required (or --mock DIR containing {mock_name})")
    return path


def build_run_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file, then environment, then command-line overrides."""
    cfg = load_config(args.config, require_endpoints=False)
    overrides: dict[str, Any] = {"cache_dir": args.cache}
    if args.mock is not None:
        fixtures = Path(args.mock) / "fixtures.json"
        if not fixtures.exists():
            raise UsageError(f"--mock directory has no fixtures.json: {args.mock}")
        overrides["mock_fixtures"] = str(fixtures)
    if getattr(args, "ablation", None):
        overrides["ablation"] = args.ablation.replace("-", "_")
    for flag, key in (
        ("selector", "selector_strategy"),
        ("seed", "random_seed"),
        ("n", "n_selected_knowledge"),
        ("m", "m_examples"),
        ("q", "q_ensemble"),
        ("r", "r_retrieved"),
        ("workers", "workers"),
        ("trace", "trace"),
    ):
        overrides[key] = getattr(args, flag, None)
    cfg = apply_overrides(cfg, overrides)
    cfg.require_endpoints()
    return cfg


# ============================================
# SUBCOMMANDS
# ============================================


async def _check(cfg: PipelineConfig) -> int:
    hub = await build_hub(cfg)
    async with hub:
        health = {role: status.to_dict() for role, status in hub.health().items()}
        loaded = hub.loaded_backends()
    _emit({"health": health, "loaded": loaded, "available": [backend.to_dict() for backend in discover_backends()]})
    ready = all(status["status"] == BackendStatus.READY.value for status in health.values())
    return EXIT_OK if ready else EXIT_RUN_ERROR


async def _run(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    questions = _resolve(args.questions, args, "questions.json", "--questions", required=True)
    annotations = _resolve(args.annotations, args, "annotations.json", "--annotations", required=False)
    examples = _resolve(args.examples, args, "examples.json", "--examples", required=False)
    train = _mock_file(args, "train_questions.json")
    if examples is None and train is None:
        raise UsageError("--examples is required (or --mock DIR containing examples.json or train_questions.json)")
    assert questions is not None

    instances = load_dataset(questions, annotations)
    if args.limit is not None:
        instances = instances[: args.limit]
    index = load_example_index(examples) if examples is not None else None
    run_dir = Path(args.out) if args.out else Path("runs") / datetime.now().strftime("%Y%m%d-%H%M%S")

    hub = await build_hub(cfg)
    async with hub:
        if index is None:
            assert train is not None
            logger.info(f"No example index in {args.mock}, building one from {train.name}")
            train_set = load_dataset(train, _mock_file(args, "train_annotations.json"))
            index = await build_example_index(train_set, hub, source_path=str(train), workers=cfg.workers)
        report = await execute_run(instances, cfg, hub, index, run_dir)

    _emit({**report.to_dict(), "run_dir": str(run_dir)})
    if report.count > 0 and report.failed_count == report.count:
        logger.error("Every question failed")
        return EXIT_RUN_ERROR
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    if args.check:
        return asyncio.run(_check(cfg))
    return asyncio.run(_run(args, cfg))


def cmd_score(args: argparse.Namespace) -> int:
    instances = load_dataset(args.questions, args.annotations)
    predictions = load_predictions(args.predictions)
    try:
        records = score_predictions(predictions, instances, max_missing=args.max_missing, strict=args.strict)
    except CoverageError as e:
        logger.error(f"{e.message}; missing: {', '.join(e.missing_ids)}")
        return EXIT_RUN_ERROR
    report = aggregate(records)
    if args.out:
        write_run_outputs(args.out, report, records)
    _emit(report.to_dict())
    return EXIT_OK


async def _index(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    questions = _resolve(args.questions, args, "train_questions.json", "--questions", required=True)
    annotations = _resolve(args.annotations, args, "train_annotations.json", "--annotations", required=False)
    assert questions is not None
    train = load_dataset(questions, annotations)
    if args.limit is not None:
        train = train[: args.limit]

    hub = await build_hub(cfg)
    async with hub:
        index = await build_example_index(train, hub, source_path=args.output, workers=cfg.workers)
    dump_example_index(index, args.output)
    _emit({"examples": len(index), "dimension": index.dimension, "output": args.output})
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    return asyncio.run(_index(args, build_run_config(args)))


# ============================================
# ARGUMENTS
# ============================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Pipeline config file (YAML or JSON)")
    common.add_argument("--mock", type=str, default=None, help="Fixture directory; every backend becomes the mock")
    common.add_argument("--cache", type=str, default=None, help="Response cache directory")
    common.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Log level",
    )

    parser = argparse.ArgumentParser(
        prog="dka",
        description="Disentangled knowledge acquisition pipeline for knowledge-based VQA",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="Run the pipeline over a dataset")
    run.add_argument("--questions", type=str, help="Questions file")
    run.add_argument("--annotations", type=str, help="Annotations file (optional)")
    run.add_argument("--examples", type=str, help="Example index file")
    run.add_argument("--limit", type=positive_int, help="Only the first N questions")
    run.add_argument("--ablation", choices=ABLATIONS, help="Pipeline variant")
    run.add_argument("--selector", choices=["similarity", "random"], help="In-context example strategy")
    run.add_argument("--seed", type=int, help="Seed for the random selector")
    run.add_argument("--n", type=int, help="Knowledge items kept after re-ranking")
    run.add_argument("--m", type=int, help="In-context examples per prompt")
    run.add_argument("--q", type=int, help="Prompts per question (ensemble size)")
    run.add_argument("--r", type=int, help="Knowledge statements elicited")
    run.add_argument("--workers", type=int, help="Questions processed concurrently")
    run.add_argument("--out", type=str, help="Run directory")
    run.add_argument("--trace", action="store_true", default=None, help="Dump every answering prompt")
    run.add_argument("--check", action="store_true", help="Only check backend health")
    run.set_defaults(handler=cmd_run)

    score = commands.add_parser("score", help="Score a predictions file")
    score.add_argument("--predictions", type=str, required=True, help="{qid: answer} or [{question_id, answer}]")
    score.add_argument("--questions", type=str, required=True, help="Questions file")
    score.add_argument("--annotations", type=str, help="Annotations file (optional for AOK-VQA)")
    score.add_argument("--max-missing", type=float, default=0.05, help="Tolerated share of unpredicted ids")
    score.add_argument("--strict", action="store_true", help="Leave-one-annotator-out accuracy")
    score.add_argument("--out", type=str, help="Write report.json, audit.jsonl and predictions.json here")
    score.add_argument(
        "--log-level", type=str, default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
    )
    score.set_defaults(handler=cmd_score)

    index = commands.add_parser("index", parents=[common], help="Build an example index from training data")
    index.add_argument("--questions", type=str, help="Training questions file")
    index.add_argument("--annotations", type=str, help="Training annotations file")
    index.add_argument("--output", type=str, required=True, help="Example index file to write")
    index.add_argument("--limit", type=positive_int, help="Only the first N training questions")
    index.set_defaults(handler=cmd_index)

    return parser


def main(argv: list[str] | None = None) -> int:
    """Entry point; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    configure_logging(level=args.log_level)

    try:
        return int(args.handler(args))
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except USAGE_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return EXIT_USAGE
    except DKAError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return EXIT_RUN_ERROR
    except KeyboardInterrupt:
        logger.info("Interrupted by keyboard")
        return EXIT_RUN_ERROR
    except Exception as e:
        logger.exception(f"Fatal error: {e}")
        return EXIT_RUN_ERROR
