"""
Command-line surface: ``diffctl <gen|train|reconstruct|shoot|eval|render>``.

Exit codes: 0 on success, 1 on any failure, 2 on usage errors.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from config.settings import settings
from src.cli.commands import COMMANDS
from src.cli.config import RunConfig
from src.common.correlation import RunContext, set_component
from src.common.exceptions import BaseControlException
from src.common.logging_config import setup_logging
from src.control.trace import SCHEMES
from src.data.manifest import EXPERIMENTS
from src.monitoring.metrics import start_metrics_server, write_metrics_textfile

logger = setup_logging("diffctl", level=settings.logging.level)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--out", type=Path, required=out_required, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffctl",
        description=(
            "Differentiable-physics control: data generation, training, reconstruction and shooting"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a dataset")
    _common(gen)
    gen.add_argument("--experiment", choices=EXPERIMENTS)
    gen.add_argument("--manifest", type=Path, help="Generation request to regenerate from")
    gen.add_argument("--steps", type=int)
    gen.add_argument("--train-count", type=int)
    gen.add_argument("--test-count", type=int)
    gen.add_argument("--shapes", type=int, help="Shapes per example (fluid_shapes)")
    gen.add_argument("--workers", type=int, default=None, help="Parallel generation threads")

    train = sub.add_parser("train", help="Run one training stage")
    _common(train)
    train.add_argument("--manifest", type=Path, required=True)
    train.add_argument("--stage", choices=("supervised", "diffphys"), default=None)
    train.add_argument("--scheme", choices=SCHEMES, default=None)
    train.add_argument("--model", choices=("all", "cfe", "ops"), default=None)
    train.add_argument(
        "--successive", action="store_true", help="Pre-train OPs one scale at a time"
    )
    train.add_argument("--init", type=Path, action="append", help="Checkpoint to start from")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--alpha", type=float, help="Force-loss weight (default: calibrated)")
    train.add_argument("--steps", type=int, help="Horizon (default: manifest steps)")

    rec = sub.add_parser("reconstruct", help="Reconstruct one example with a scheme")
    _common(rec)
    rec.add_argument("--manifest", type=Path, required=True)
    rec.add_argument("--init", type=Path, action="append")
    rec.add_argument("--scheme", choices=SCHEMES, default=None)
    rec.add_argument("--example")
    rec.add_argument("--steps", type=int)
    rec.add_argument("--alpha", type=float)

    shoot = sub.add_parser("shoot", help="Iterative optimisation of all controls")
    _common(shoot)
    shoot.add_argument("--manifest", type=Path, required=True)
    shoot.add_argument("--example")
    shoot.add_argument("--iters", type=int)
    shoot.add_argument("--lr", type=float)
    shoot.add_argument("--alpha", type=float)
    shoot.add_argument("--steps", type=int)
    shoot.add_argument("--multiscale", action="store_true")
    shoot.add_argument("--warm-start", type=Path, help="Reconstruction output to initialise from")

    ev = sub.add_parser("eval", help="Loss tables over the test split")
    _common(ev)
    ev.add_argument("--manifest", type=Path, required=True)
    ev.add_argument("--init", type=Path, action="append")
    ev.add_argument("--schemes", nargs="+", choices=SCHEMES)
    ev.add_argument("--steps", type=int)
    ev.add_argument("--limit", type=int, help="Evaluate only the first N test examples")
    ev.add_argument("--shooting", action="store_true", help="Add an iterative-optimisation row")
    ev.add_argument("--iters", type=int)
    ev.add_argument("--lr", type=float)
    ev.add_argument("--reference", action="store_true", help="Add the straight-line reference row")
    ev.add_argument("--timing", action="store_true", help="Add median inference time per method")

    render = sub.add_parser("render", help="Render PDTF fields to PGM images")
    _common(render)
    render.add_argument("inputs", type=Path, nargs="+")
    render.add_argument("--sequence", action="store_true", help="Treat the leading axis as time")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if settings.monitoring.port:
        start_metrics_server(settings.monitoring.port)

    set_component(args.command)
    with RunContext(experiment=getattr(args, "experiment", None)) as ctx:
        try:
            config = RunConfig.from_args(**vars(args))
            logger.info(f"diffctl {config.command} started (run {ctx.run_id})")
            summary = COMMANDS[config.command](config)
            logger.info(f"diffctl {config.command} finished: {summary}")
            return EXIT_OK
        except BaseControlException as e:
            logger.error(f"{args.command} failed: {e}")
            return EXIT_FAILURE
        except Exception as e:
            logger.critical(f"{args.command} failed unexpectedly: {e}", exc_info=True)
            return EXIT_FAILURE
        finally:
            if settings.monitoring.textfile:
                write_metrics_textfile(settings.monitoring.textfile)


if __name__ == "__main__":
    sys.exit(main())
