#!/usr/bin/env python3
"""
Command line entry point

Usage:
    python cli.py train      --config configs/desk.json --arm fpa
    python cli.py saliency   --config configs/desk.json --arm fpa [--estimators ig_sum,sgx_sum]
    python cli.py curves     --config configs/desk.json --arm fpa
    python cli.py report     --config configs/desk.json --arm fpa --sample 3 [--percentile 98]
    python cli.py reproduce  --config configs/desk.json

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence,
1 any other failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from autodiff import set_default_dtype
from config.experiment import load_experiment_config
from config.logging_config import setup_logging
from config.settings import settings
from exceptions import ConfigError, DataError, DivergenceError, FidelityError
from models import Arm
from services import ExperimentService

logger = logging.getLogger("fpa.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

EXIT_CODES = {
    ConfigError: EXIT_CONFIG,
    DataError: EXIT_DATA,
    DivergenceError: EXIT_DIVERGENCE,
}


def exit_code_for(error: BaseException) -> int:
    for error_type, code in EXIT_CODES.items():
        if isinstance(error, error_type):
            return code
    return EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    common.add_argument("--out", type=Path, default=None, help="artifact directory")
    common.add_argument("--seed", type=int, default=None, help="override train and eval seeds")
    common.add_argument("--samples", type=int, default=None, help="override eval.num_samples")

    with_arm = argparse.ArgumentParser(add_help=False)
    with_arm.add_argument("--arm", required=True, choices=[a.value for a in Arm])
    with_arm.add_argument("--checkpoint", type=Path, default=None)

    parser = argparse.ArgumentParser(
        prog="fpa", description="Feature perturbation augmentation and saliency fidelity"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("train", parents=[common, with_arm], help="train one augmentation arm")

    saliency = commands.add_parser("saliency", parents=[common, with_arm], help="archive saliency maps")
    saliency.add_argument("--estimators", default=None, help="comma-separated estimator ids")

    curves = commands.add_parser("curves", parents=[common, with_arm], help="MIF/LIF curves and A")
    curves.add_argument("--archive", type=Path, default=None, help="saliency archive directory")

    report = commands.add_parser("report", parents=[common, with_arm], help="diagnostics for one sample")
    report.add_argument("--sample", type=int, required=True, help="sample id")
    report.add_argument("--percentile", type=float, default=98.0)
    report.add_argument("--estimators", default=None, help="comma-separated estimator ids")

    commands.add_parser("reproduce", parents=[common], help="all arms end to end")
    return parser


def _split_ids(value: Optional[str]) -> Optional[List[str]]:
    if not value:
        return None
    return [item.strip() for item in value.split(",") if item.strip()]


def run(args: argparse.Namespace) -> None:
    config = load_experiment_config(args.config).with_overrides(args.seed, args.samples)
    service = ExperimentService(config, args.out)

    if args.command == "train":
        service.cmd_train(Arm(args.arm))
    elif args.command == "saliency":
        service.cmd_saliency(Arm(args.arm), args.checkpoint, _split_ids(args.estimators))
    elif args.command == "curves":
        service.cmd_curves(Arm(args.arm), args.checkpoint, args.archive)
    elif args.command == "report":
        service.cmd_report(Arm(args.arm), args.sample, args.percentile, _split_ids(args.estimators))
    elif args.command == "reproduce":
        service.cmd_reproduce()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(settings.log_level)
    set_default_dtype(settings.storage_dtype)
    try:
        run(args)
    except FidelityError as e:
        logger.error(f"✗ {type(e).__name__}: {e}")
        return exit_code_for(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
