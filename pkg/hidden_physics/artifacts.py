"""
Run directory layout, manifests, and file writers/readers
"""

import json
import logging
import os
import sqlite3
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
import torch

from .autodiff import DTYPE
from .errors import CheckpointError, ConfigurationError
from .neural import read_checkpoint_metadata, load_checkpoint
from .run_ledger import SweepLedger
from .sampling import ReferenceSolution
from .symreg import SymbolicFit

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
TRACKED_PACKAGES = ("torch", "numpy", "scipy", "pandas", "pydantic", "safetensors", "langgraph")


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def ensure_writable(directory: Union[str, Path]) -> Path:
    """Create the directory if needed and confirm files can be written into it"""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"Cannot create output directory {directory}: {e}") from e
    if not os.access(directory, os.W_OK):
        raise ConfigurationError(f"Output directory {directory} is not writable")
    return directory


def write_manifest(
    directory: Path,
    config: Dict[str, Any],
    seeds: Dict[str, Any],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": config,
        "seeds": seeds,
        "versions": package_versions(),
        **(extra or {}),
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False))
    logger.info(f"â Manifest written to {path}")
    return path


def write_json(path: Path, payload: Any) -> Path:
    path.write_text(json.dumps(payload, indent=2))
    return path


def write_symbolic(path: Path, fits: Iterable[SymbolicFit]) -> Path:
    payload = [
        {
            "output": fit.output,
            "source": fit.source,
            "expression": fit.selected.render(),
            "selected": fit.selected.model_dump(mode="json"),
            "candidates": [c.model_dump(mode="json") for c in fit.candidates],
        }
        for fit in fits
    ]
    return write_json(path, payload)


def solution_grid_frame(surrogate: torch.nn.Module, reference: ReferenceSolution) -> pd.DataFrame:
    """t, x, u_reference, u_surrogate on the full reference grid (first state component)"""
    if reference.is_ode:
        raise ConfigurationError("Solution grids are written for PDE references only")
    tt, xx = np.meshgrid(reference.times, reference.x, indexing="ij")
    points = torch.as_tensor(np.column_stack([xx.reshape(-1), tt.reshape(-1)]), dtype=DTYPE)
    with torch.no_grad():
        predicted = surrogate(points)[:, 0].numpy()
    return pd.DataFrame({
        "t": tt.reshape(-1),
        "x": xx.reshape(-1),
        "u_reference": reference.states[..., 0].reshape(-1),
        "u_surrogate": predicted,
    })


def trajectory_frame(times: np.ndarray, states: np.ndarray, state_names: List[str], prefix: str) -> pd.DataFrame:
    frame = pd.DataFrame({"t": times})
    for i, name in enumerate(state_names):
        frame[f"{prefix}{name}"] = states[:, i]
    return frame


# ============================================================================
# INSPECTION
# ============================================================================

def describe_ledger(path: Path) -> str:
    """Status of every sweep in a ledger plus its failed (cell, seed) runs"""
    try:
        ledger = SweepLedger(path)
        sweep_ids = ledger.list_sweeps()
    except sqlite3.DatabaseError as e:
        raise ConfigurationError(f"{path} is not a sweep ledger: {e}") from e
    stats = ledger.get_stats()
    lines = [
        f"ledger      {path}",
        f"sweeps      {stats['total_sweeps']}",
        f"runs        {stats['total_runs']} ({stats['failed_runs']} failed)",
    ]
    for sweep_id in sweep_ids:
        sweep = ledger.get_sweep(sweep_id)
        runs = ledger.get_cell_runs(sweep_id)
        lines.append(f"sweep       {sweep_id} [{sweep['status']}] {sweep['total_cells']} cells, {len(runs)} runs")
        for run in runs:
            if run["status"] != "completed":
                lines.append(f"  ✗ cell {run['cell_index']} seed {run['seed']}: {run['error']}")
        activity = ledger.get_activity(sweep_id)
        if activity:
            last = activity[-1]
            lines.append(f"  last        {last['action']} ({last['status']}) at {last['timestamp']}")
    return "\n".join(lines)


def describe_checkpoint(path: Path) -> str:
    net = load_checkpoint(path)
    meta = read_checkpoint_metadata(path)
    lines = [
        f"checkpoint  {path}",
        f"format      v{meta.get('format_version')}",
        f"widths      {net.widths}",
        f"parameters  {sum(p.numel() for p in net.parameters())}",
        f"seed        {net.seed}",
        f"step        {net.step}",
    ]
    lines.extend(f"{key:<11} {value}" for key, value in sorted(net.extras.items()))
    return "\n".join(lines)


def describe_json(path: Path) -> str:
    data = json.loads(path.read_text())
    if isinstance(data, dict) and "manifest_version" in data:
        config = data.get("config", {})
        lines = [
            f"manifest    {path}",
            f"experiment  {config.get('name')} ({config.get('mode')})",
            f"system      {config.get('system', {}).get('name')}",
            f"seeds       {data.get('seeds')}",
        ]
        lines.extend(f"{k:<11} {v}" for k, v in data.get("versions", {}).items())
        return "\n".join(lines)
    if isinstance(data, dict) and "loss_measurement" in data:

        def final(key: str) -> float:
            return data[key][-1] if data.get(key) else float("nan")

        return "\n".join([
            f"report      {path}",
            f"method      {data.get('method')} on {data.get('system')}",
            f"iterations  {data.get('iterations')}",
            f"final loss  L_M={final('loss_measurement'):.3e} L_B={final('loss_boundary'):.3e} L_P={final('loss_pinn'):.3e}",
            f"hidden MSE  {data.get('hidden_mse')}",
            f"solution    {data.get('surrogate_mse')}",
            f"phi         {data.get('phi')}",
            f"elapsed     {data.get('elapsed_seconds', 0.0):.1f}s",
        ])
    if isinstance(data, list) and data and "expression" in data[0]:
        return "\n".join(
            f"{item['output']} [{item['source']}] = {item['expression']}  "
            f"(mse {item['selected']['mse']:.2e}, recovered={item['selected']['recovered']})"
            for item in data
        )
    return json.dumps(data, indent=2)


def inspect_path(path: Union[str, Path]) -> str:
    """Human-readable summary of a checkpoint, report, manifest, symbolic-model file, or sweep ledger"""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"{path} does not exist")
    if path.is_dir():
        manifest = path / "manifest.json"
        if not manifest.exists():
            raise ConfigurationError(f"{path} is not a run directory (no manifest.json)")
        return describe_json(manifest)
    if path.suffix == ".safetensors":
        return describe_checkpoint(path)
    if path.suffix == ".json":
        return describe_json(path)
    if path.suffix == ".db":
        return describe_ledger(path)
    if path.suffix == ".csv":
        frame = pd.read_csv(path)
        return f"{path}: {len(frame)} rows\ncolumns: {', '.join(frame.columns)}\n{frame.head().to_string()}"
    raise CheckpointError(f"Don't know how to inspect {path}")
