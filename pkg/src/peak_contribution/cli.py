"""Command-line entry point: ``peak-contribution <subcommand> [--config PATH] [--seed N] [--strict] [--out DIR]``."""

import argparse
import logging
import sys
from typing import List, Optional

from .config import PipelineConfig, load_config
from .errors import PeakContributionError
from .pipeline import PIPELINE_ORDER, PeakPipeline
from .utils import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = {
    "synth": "generate a synthetic population (readings, feeder, survey, ground truth)",
    "ingest": "parse, clean and aggregate smart-meter and SCADA data",
    "cmpc": "compute CMPC, daily system peaks and peak-timing distributions",
    "cluster": "split customers and extract seasonal typical load patterns",
    "train": "fit the per-season classifier and clusterwise regressions",
    "estimate": "estimate CMPC of held-out customers from billing data",
    "bench": "compare CMPC with conventional metrics and the baseline regression",
    "dr": "simulate direct-load-control demand response per targeting strategy",
    "report": "merge metrics into report.json and plot-ready CSVs",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="TOML or JSON pipeline config")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--strict", action="store_true", help="verify inputs against run_manifest.json")
    common.add_argument("--out", type=str, help="output directory for all artifacts")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="peak-contribution",
        description="Estimate customers' coincident monthly peak contribution from billing data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    sub.add_parser("run", parents=[common], help="run every subcommand in order")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.synth.seed = args.seed
    if args.out:
        config.paths.out_dir = args.out
    config.validate()
    return config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    commands = PIPELINE_ORDER if args.command == "run" else [args.command]
    try:
        pipeline = PeakPipeline(resolve_config(args), strict=args.strict)
        for command in commands:
            outputs = getattr(pipeline, command)()
            print(f"✓ {command}: {', '.join(p.name for p in outputs)}")
    except PeakContributionError as e:
        logger.error(str(e))
        print(f"✗ {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
