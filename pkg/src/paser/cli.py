"""Command-line interface for the PaSeR pipeline stages."""

import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from .config import ExperimentConfig, load_config
from .errors import PaserError
from .stages import (
    Method,
    gen_data,
    run_eval,
    run_finetune,
    run_finetune_tvd,
    run_pretrain,
    run_report,
    run_train_rl,
)

logger = logging.getLogger(__name__)

COMMANDS = ("gen-data", "pretrain", "train-rl", "finetune", "finetune-tvd", "eval", "report")


def setup_logging(level: str) -> None:
    """Configure logging for the CLI."""
    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {level}")

    logging.basicConfig(
        level=numeric_level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paser",
        description="Cost-aware patch routing for image segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the dataset splits and pretrain the model suite
  paser gen-data --config configs/desk.toml
  paser pretrain --config configs/desk.toml

  # Train the routing policy at a different cost weight
  paser train-rl --config configs/desk.toml --override rl.lambda=0.3

  # Evaluate PaSeR and the IDK cascade matched to its IoU
  paser eval --config configs/desk.toml --method paser
  paser eval --config configs/desk.toml --method idk-match

  # Compare several runs
  paser report runs/a runs/b --out runs/summary
        """,
    )
    parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument(
        "run_dirs", nargs="*", type=Path, help="Run directories to compare (report only)"
    )

    # Configuration
    parser.add_argument("--config", type=Path, help="TOML experiment configuration")
    parser.add_argument("--seed", type=int, help="Override the configured seed")
    parser.add_argument("--out", help="Override the output directory")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Set a dotted config key, e.g. rl.lambda=0.5 (repeatable)",
    )

    # Evaluation
    parser.add_argument(
        "--method",
        choices=[m.value for m in Method],
        default=Method.PASER.value,
        help="Inference method for eval (default: paser)",
    )

    # Logging
    parser.add_argument(
        "--log-level",
        choices=["debug", "info", "warning", "error"],
        default="info",
        help="Set logging level (default: info)",
    )
    return parser


def run_command(args: argparse.Namespace) -> None:
    if args.command == "report":
        run_dirs = args.run_dirs or [Path(load_config(args.config, args.override).out_dir)]
        out = Path(args.out) if args.out else run_dirs[0]
        run_report(run_dirs, out)
        return

    if args.run_dirs:
        raise PaserError(f"'{args.command}' takes no positional run directories")
    config: ExperimentConfig = load_config(args.config, args.override, args.seed, args.out)
    logger.info(f"Running {args.command} in {config.out_dir} (seed {config.seed})")
    match args.command:
        case "gen-data":
            splits = gen_data(config)
            print(" ".join(f"{name}={len(part)}" for name, part in splits.items()))
        case "pretrain":
            run_pretrain(config)
        case "train-rl":
            run_train_rl(config)
        case "finetune":
            run_finetune(config)
        case "finetune-tvd":
            run_finetune_tvd(config)
        case "eval":
            report = run_eval(config, args.method)
            print(report.model_dump_json(indent=2))


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point."""
    # Load environment variables from .env file first
    load_dotenv()

    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        run_command(args)
    except PaserError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


def cli_main() -> None:
    """Synchronous entry point for the CLI."""
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
