"""
Command-line entry point

    python -m hidden_physics train --config configs/lv_table1.yaml --seed 0 --out runs/lv
    python -m hidden_physics sweep --config configs/sweeps/lv_table1.yaml --workers 4
    python -m hidden_physics symfit --checkpoint runs/lv/seed_0/hidden.safetensors --data runs/lv/seed_0/dataset.csv
    python -m hidden_physics inspect runs/lv/seed_0/report.json

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 numeric failure, 4 sweep finished with failed cells.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
import torch
from pydantic import ValidationError

from .artifacts import ensure_writable, inspect_path, write_symbolic
from .config import ExperimentConfig, load_config
from .errors import (
    CheckpointError,
    ConditioningError,
    ConfigurationError,
    IntegrationError,
    NonFiniteError,
    UnsupportedOrderError,
)
from .dynamics import build_system
from .neural import load_checkpoint
from .pipeline import run_experiment
from .settings import setup_logging
from .sweeps import compare_methods, load_sweep, run_sweep
from .symreg import SymregConfig, distill, evaluate_network_on_data
from .trainer import HiddenModel

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4

MODE_BY_COMMAND = {"generate": "generate", "train": "train", "ude": "ude"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hidden_physics",
        description="Discover hidden terms of differential equations from sparse, noisy data",
    )
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, required=True, help="experiment or sweep file (YAML/JSON/manifest)")
        p.add_argument("--seed", type=int, default=None, help="run this single seed instead of the config's list")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--dry-run", action="store_true", help="validate and write the manifest only")
        p.add_argument("--workers", type=int, default=None, help="worker processes for sweeps")

    run_flags(sub.add_parser("generate", help="generate data and collocation points only"))
    run_flags(sub.add_parser("train", help="train the physics-informed surrogate and hidden term"))
    run_flags(sub.add_parser("ude", help="train the UDE baseline"))
    run_flags(sub.add_parser("compare", help="train both methods on identical data and compare"))
    run_flags(sub.add_parser("sweep", help="run a parameter sweep and aggregate tables"))

    symfit = sub.add_parser("symfit", help="symbolic regression on a hidden-term checkpoint")
    symfit.add_argument("--checkpoint", type=Path, required=True)
    symfit.add_argument("--data", type=Path, required=True, help="CSV with one column per hidden-term input")
    symfit.add_argument("--config", type=Path, default=None, help="experiment file whose symreg section to use")
    symfit.add_argument("--out", type=Path, default=None)

    inspect = sub.add_parser("inspect", help="pretty-print a checkpoint, report, manifest, run directory, or sweep.db")
    inspect.add_argument("path", type=Path)
    return parser


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    update = {}
    if args.command in MODE_BY_COMMAND:
        update["mode"] = MODE_BY_COMMAND[args.command]
    if args.seed is not None:
        update["seeds"] = [args.seed]
    if update:
        config = ExperimentConfig.model_validate({**config.model_dump(mode="json"), **update})
    return config


def _symfit(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    inputs = net.extras.get("inputs")
    outputs = net.extras.get("outputs") or [f"F{i + 1}" for i in range(net.out_features)]
    frame = pd.read_csv(args.data)
    if inputs is None:
        raise ConfigurationError(f"{args.checkpoint} does not record its input names")
    missing = [name for name in inputs if name not in frame.columns]
    if missing:
        raise ConfigurationError(f"{args.data} lacks hidden-term input columns {missing}")

    network = net
    if net.extras.get("mode") == "shared_scaled":
        network = HiddenModel(net, torch.eye(len(outputs), dtype=torch.float64), "shared_scaled")
        with torch.no_grad():
            network.phi.copy_(torch.as_tensor(net.extras.get("phi", [1.0] * (len(outputs) - 1))))

    symreg, targets = SymregConfig(), None
    if args.config:
        config = load_config(args.config)
        symreg = config.symreg
        targets = build_system(config.system).hidden_targets
    table = evaluate_network_on_data(network, frame[inputs].to_numpy(), inputs, outputs)
    fits = distill(table, symreg, targets, source="checkpoint")
    out_dir = ensure_writable(args.out or args.checkpoint.parent)
    path = write_symbolic(out_dir / f"{args.checkpoint.stem}_symbolic.json", fits)
    for fit in fits:
        print(f"{fit.output} = {fit.selected.render()}    (mse {fit.selected.mse:.3e})")
    logger.info(f"✓ Symbolic models written to {path}")
    return EXIT_OK


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "inspect":
        print(inspect_path(args.path))
        return EXIT_OK
    if args.command == "symfit":
        return _symfit(args)
    if args.command == "sweep":
        spec, base = load_sweep(args.config)
        if args.seed is not None:
            spec = spec.model_copy(update={"seeds": [args.seed]})
        outcome = run_sweep(spec, base, args.out, args.workers, dry_run=args.dry_run)
        if outcome.failed_runs:
            return EXIT_PARTIAL
        print(outcome.table)
        return EXIT_OK

    config = _experiment(args)
    if args.command == "compare":
        run_dir = compare_methods(config, args.out, dry_run=args.dry_run)
    else:
        run_dir = run_experiment(config, args.out, dry_run=args.dry_run)
    print(run_dir)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        logger.error("✗ --workers must be at least 1")
        return EXIT_CONFIG

    try:
        return dispatch(args)
    except (ConfigurationError, ValidationError, CheckpointError) as e:
        logger.error(f"✗ Configuration error: {e}")
        return EXIT_CONFIG
    except (NonFiniteError, IntegrationError, ConditioningError, UnsupportedOrderError) as e:
        logger.error(f"✗ Numeric failure: {e}")
        return EXIT_NUMERIC
    except Exception as e:
        logger.exception(f"✗ Unexpected error: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
