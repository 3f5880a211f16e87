"""
Parameter sweeps and method comparisons

A sweep is a base experiment plus axes of dotted-path overrides. Every cell is
validated up front; (cell, seed) runs go to a process pool, failures are kept
per cell in the ledger, and the aggregated tables hold medians over seeds.
"""

import itertools
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .artifacts import ensure_writable, write_json, write_manifest
from .autodiff import configure_determinism
from .config import ExperimentConfig, load_mapping, with_overrides
from .errors import ConfigurationError
from .pipeline import ExperimentPipeline, run_experiment, seed_metrics, validate_experiment
from .run_ledger import SweepLedger
from .settings import get_settings

logger = logging.getLogger(__name__)


class SweepAxis(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str
    values: List[Any] = Field(min_length=1)
    label: Optional[str] = None

    @property
    def column(self) -> str:
        return self.label or self.path.split(".")[-1]


class SweepSpec(BaseModel):
    """
    Sweep file contents

    base:      path to the base experiment file, relative to the sweep file
    overrides: dotted-path overrides applied to every cell
    axes:      the cartesian product of these defines the cells
    methods:   pinn, ude, or both (both trains the two methods on identical data)
    table:     'mse' for hidden/solution MSE medians, 'symbolic' for coefficients and recovery
    """

    model_config = ConfigDict(extra="forbid")

    name: str
    base: str
    overrides: Dict[str, Any] = Field(default_factory=dict)
    axes: List[SweepAxis] = Field(min_length=1)
    methods: List[Literal["pinn", "ude"]] = Field(default_factory=lambda: ["pinn"], min_length=1)
    table: Literal["mse", "symbolic"] = "mse"
    seeds: Optional[List[int]] = None

    @property
    def mode(self) -> str:
        if set(self.methods) == {"pinn", "ude"}:
            return "compare"
        return "train" if self.methods == ["pinn"] else "ude"


@dataclass
class SweepCell:
    index: int
    values: Dict[str, Any]
    config: ExperimentConfig


@dataclass
class SweepOutcome:
    out_dir: Path
    table: Path
    failed_runs: int
    total_runs: int


def load_sweep(path: Union[str, Path]) -> Tuple[SweepSpec, ExperimentConfig]:
    path = Path(path)
    try:
        spec = SweepSpec.model_validate(load_mapping(path))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid sweep file {path}: {e}") from e
    base_path = Path(spec.base)
    if not base_path.is_absolute():
        base_path = path.parent / base_path
    try:
        base = ExperimentConfig.model_validate(load_mapping(base_path))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid base config {base_path}: {e}") from e
    return spec, base


def expand_cells(spec: SweepSpec, base: ExperimentConfig) -> List[SweepCell]:
    """Cartesian product of the axes; every cell is validated before any compute"""
    common = {**spec.overrides, "mode": spec.mode}
    if spec.seeds is not None:
        common["seeds"] = spec.seeds
    cells = []
    for index, combo in enumerate(itertools.product(*(axis.values for axis in spec.axes))):
        overrides = {**common, **{axis.path: value for axis, value in zip(spec.axes, combo)}}
        config = with_overrides(base, overrides)
        config = config.model_copy(update={"name": f"{spec.name}_cell{index}"})
        validate_experiment(config)
        cells.append(SweepCell(index=index, values={a.column: v for a, v in zip(spec.axes, combo)}, config=config))
    logger.info(f"✓ Sweep '{spec.name}': {len(cells)} valid cells")
    return cells


def _run_cell_seed(cell_index: int, config_data: Dict[str, Any], seed: int, run_dir: str) -> Dict[str, Any]:
    """Worker entry point for one seed of one cell; never raises"""
    started = time.perf_counter()
    try:
        configure_determinism(get_settings().torch_threads)
        config = ExperimentConfig.model_validate(config_data)
        final = ExperimentPipeline(config).run(seed, Path(run_dir) / f"seed_{seed}")
        return {"cell": cell_index, "seed": seed, "status": "completed", "metrics": seed_metrics(final),
                "error": "", "elapsed": time.perf_counter() - started}
    except Exception as e:
        logger.error(f"✗ [cell {cell_index}] seed {seed} failed: {type(e).__name__}: {e}")
        return {"cell": cell_index, "seed": seed, "status": "failed", "metrics": {},
                "error": f"{type(e).__name__}: {e}", "elapsed": time.perf_counter() - started}


def _median(values: List[Any]) -> Optional[float]:
    finite = [float(v) for v in values if v is not None and np.isfinite(float(v))]
    return statistics.median(finite) if finite else None


def aggregate_cell(spec: SweepSpec, cell: SweepCell, runs: List[Dict[str, Any]]) -> Dict[str, Any]:
    ok = [r["metrics"] for r in runs if r["status"] == "completed"]
    row: Dict[str, Any] = {"cell": cell.index, **cell.values, "n_seeds": len(runs), "n_failed": len(runs) - len(ok)}
    if spec.table == "mse":
        for method in spec.methods:
            for metric in ("hidden_mse", "surrogate_mse"):
                key = f"{method}_{metric}"
                row[f"median_{key}"] = _median([m.get(key) for m in ok])
        if len(spec.methods) == 2:
            pinn, ude = row["median_pinn_hidden_mse"], row["median_ude_hidden_mse"]
            row["winner"] = _winner(pinn, ude)
    else:
        keys = sorted({k for m in ok for k in m if k.endswith("_coef") or k.endswith("_recovered")})
        for key in keys:
            values = [m.get(key) for m in ok]
            if key.endswith("_coef"):
                row[f"median_{key}"] = _median(values)
            else:
                row[key] = f"{sum(bool(v) for v in values)}/{len(ok)}"
    return row


def run_sweep(
    spec: SweepSpec,
    base: ExperimentConfig,
    out_dir: Optional[Path] = None,
    workers: Optional[int] = None,
    dry_run: bool = False,
) -> SweepOutcome:
    """Run all (cell, seed) pairs and write table.csv, table_pivot.csv, cells.csv and sweep.db"""
    cells = expand_cells(spec, base)
    out_dir = ensure_writable(out_dir or get_settings().output_root / spec.name)
    workers = workers or get_settings().workers
    write_manifest(out_dir, {"sweep": spec.model_dump(mode="json"), "base": base.model_dump(mode="json")},
                   {str(c.index): c.config.seeds for c in cells}, {"dry_run": dry_run})
    table_path = out_dir / "table.csv"
    if dry_run:
        logger.info(f"✓ Dry run: {len(cells)} cells validated")
        return SweepOutcome(out_dir, table_path, 0, 0)

    ledger = SweepLedger(out_dir / "sweep.db")
    sweep_id = f"{spec.name}-{datetime.now(timezone.utc).strftime('%Y%m%dT%H%M%S')}"
    tasks = [
        (cell.index, cell.config.model_dump(mode="json"), seed, str(out_dir / f"cell_{cell.index}"))
        for cell in cells for seed in cell.config.seeds
    ]
    ledger.start_sweep(sweep_id, spec.name, spec.model_dump(mode="json"), len(cells))
    logger.info(f"[sweep {spec.name}] {len(tasks)} runs on {workers} worker(s)")

    results: List[Dict[str, Any]] = []
    if workers == 1:
        results = [_run_cell_seed(*task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell_seed, *task) for task in tasks]
            for future in as_completed(futures):
                results.append(future.result())
    results.sort(key=lambda r: (r["cell"], r["seed"]))

    by_cell: Dict[int, List[Dict[str, Any]]] = {c.index: [] for c in cells}
    for result in results:
        by_cell[result["cell"]].append(result)
        cell = cells[result["cell"]]
        ledger.record_cell(sweep_id, cell.index, result["seed"], cell.values, result["status"],
                           result["metrics"], result["error"], result["elapsed"])
        marker = "✓" if result["status"] == "completed" else "✗"
        logger.info(f"{marker} [cell {cell.index}] seed {result['seed']} {result['status']}")

    rows = [aggregate_cell(spec, cell, by_cell[cell.index]) for cell in cells]
    table = pd.DataFrame(rows)
    table.to_csv(table_path, index=False)
    _cells_frame(cells, results).to_csv(out_dir / "cells.csv", index=False)
    if spec.table == "mse" and len(spec.axes) == 2:
        value = f"median_{spec.methods[0]}_hidden_mse"
        pivot = table.pivot(index=spec.axes[0].column, columns=spec.axes[1].column, values=value)
        pivot.to_csv(out_dir / "table_pivot.csv")

    failed = sum(r["status"] == "failed" for r in results)
    status = "completed" if failed == 0 else "partial"
    ledger.finish_sweep(sweep_id, status)
    if failed:
        logger.warning(f"⚠ Sweep '{spec.name}': {failed} of {len(results)} runs failed, see {out_dir / 'sweep.db'}")
    else:
        logger.info(f"✓ Sweep '{spec.name}' complete: {table_path}")
    return SweepOutcome(out_dir, table_path, failed, len(results))


def _cells_frame(cells: List[SweepCell], results: List[Dict[str, Any]]) -> pd.DataFrame:
    rows = []
    for result in results:
        cell = cells[result["cell"]]
        rows.append({
            "cell": cell.index,
            **cell.values,
            "seed": result["seed"],
            "status": result["status"],
            "error": result["error"],
            **{k: v for k, v in result["metrics"].items() if k != "seed"},
        })
    return pd.DataFrame(rows)


def _winner(pinn: Optional[float], ude: Optional[float]) -> Optional[str]:
    if pinn is None or ude is None or not (np.isfinite(pinn) and np.isfinite(ude)):
        return None
    return "pinn" if pinn < ude else "ude"


def compare_methods(config: ExperimentConfig, out_dir: Optional[Path] = None, dry_run: bool = False) -> Path:
    """
    Train PINN and UDE on identical data and seeds

    Writes comparison.csv (one row per seed plus a median row) and adds a
    'comparison' block to summary.json naming the method with the lower
    median hidden-term MSE.
    """
    if config.ude is None:
        raise ConfigurationError("Method comparison needs a 'ude' section in the config")
    config = config.model_copy(update={"mode": "compare"})
    run_dir = run_experiment(config, out_dir, dry_run=dry_run)
    if dry_run:
        return run_dir

    summary_path = run_dir / "summary.json"
    summary = json.loads(summary_path.read_text())
    columns = ["seed", "pinn_hidden_mse", "ude_hidden_mse", "pinn_surrogate_mse", "ude_surrogate_mse"]
    comparison = pd.DataFrame(summary["seeds"]).reindex(columns=columns)
    comparison["winner"] = [
        _winner(p, u) for p, u in zip(comparison["pinn_hidden_mse"], comparison["ude_hidden_mse"])
    ]
    medians = {c: _median(comparison[c].tolist()) for c in columns[1:]}
    winner = _winner(medians["pinn_hidden_mse"], medians["ude_hidden_mse"])
    median_row = pd.DataFrame([{"seed": "median", **medians, "winner": winner}])
    pd.concat([comparison, median_row], ignore_index=True).to_csv(run_dir / "comparison.csv", index=False)

    summary["comparison"] = {
        "medians": medians,
        "winner": winner,
        "pinn_wins": int((comparison["winner"] == "pinn").sum()),
        "ude_wins": int((comparison["winner"] == "ude").sum()),
    }
    write_json(summary_path, summary)
    logger.info(
        f"✓ Comparison '{config.name}': median hidden MSE pinn={medians['pinn_hidden_mse']} "
        f"ude={medians['ude_hidden_mse']}, winner {winner}"
    )
    return run_dir
