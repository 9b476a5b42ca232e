"""
Main Entry Point - Command-line surface for the reporting-propensity pipeline

    python main.py pipeline --config configs/reference_city.json --out output
    python main.py train --config run.json --seed 7

Exit codes: 0 success, 1 usage/config error, 2 data validation failure,
3 numerical failure.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from config import RunConfig
from enhanced_logging import run_context, setup_logging
from errors import ConfigError, PipelineError
import pipeline

logger = logging.getLogger(__name__)

COMMANDS = ["synth", "train", "classify", "rates", "hotspot", "compare", "pipeline"]


class CLIArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share exit code 1"""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}", code="usage")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration JSON file")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Top-level random seed")
    common.add_argument("--threshold-objective", choices=["youden", "f1", "balanced"],
                        help="Decision-threshold objective")
    common.add_argument("--bandwidth", type=float, help="KDE bandwidth in meters")
    common.add_argument("--test-level", choices=["building", "blockgroup"],
                        help="Unit of the group comparison")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper,
                        help="Log level (default: config log_level or PROPENSITY_LOG)")
    common.add_argument("--log-file", help="Also write JSON logs to this file")

    parser = CLIArgumentParser(
        prog="propensity",
        description="Detect socio-spatial bias in complaint reporting"
    )
    subparsers = parser.add_subparsers(dest="command", parser_class=CLIArgumentParser)
    subparsers.add_parser("synth", parents=[common], help="Generate a synthetic city")
    subparsers.add_parser("train", parents=[common], help="Train the violation model")
    classify = subparsers.add_parser("classify", parents=[common], help="Classify buildings into Types 1-4")
    classify.add_argument("--model", help="Model file (default: <out>/model.json)")
    subparsers.add_parser("rates", parents=[common], help="Per-capita complaint rates by block group")
    hotspot = subparsers.add_parser("hotspot", parents=[common], help="KDE hotspots of mismatched buildings")
    hotspot.add_argument("--classified", help="classified.csv (default: <out>/classified.csv)")
    compare = subparsers.add_parser("compare", parents=[common], help="t-tests of block-group features")
    compare.add_argument("--classified", help="classified.csv (default: <out>/classified.csv)")
    subparsers.add_parser("pipeline", parents=[common], help="Run every stage and write manifest.json")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """File < environment < flags"""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    config = config.with_env()
    overrides: Dict[str, Any] = {
        "output_dir": args.out,
        "seed": args.seed,
        "threshold.objective": args.threshold_objective,
        "kde.bandwidth": args.bandwidth,
        "compare.test_level": args.test_level,
        "log_level": args.log_level,
    }
    return config.with_overrides(overrides)


def run(args: argparse.Namespace, config: RunConfig) -> None:
    logger.info(f"Running '{args.command}' (seed {config.seed}, config {config.config_hash()[:12]})")

    # cmd_pipeline stamps its own per-stage context
    stage = None if args.command == "pipeline" else args.command
    with run_context(config_hash=config.config_hash(), seed=config.seed, stage=stage):
        if args.command == "synth":
            pipeline.cmd_synth(config)
        elif args.command == "train":
            pipeline.cmd_train(config)
        elif args.command == "classify":
            pipeline.cmd_classify(config, args.model)
        elif args.command == "rates":
            pipeline.cmd_rates(config)
        elif args.command == "hotspot":
            pipeline.cmd_hotspot(config, args.classified)
        elif args.command == "compare":
            pipeline.cmd_compare(config, args.classified)
        elif args.command == "pipeline":
            pipeline.cmd_pipeline(config)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError(f"a command is required: {' | '.join(COMMANDS)}", code="usage")
        config = load_config(args)
        setup_logging(level=config.log_level, log_file=args.log_file)
        run(args, config)
    except PipelineError as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error[{e.code}]: {e.message}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        print(f"error[internal]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
