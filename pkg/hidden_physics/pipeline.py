"""
Experiment pipeline using LangGraph
Step-based execution of one seed of an experiment, routed by run mode:

    generate_data -> sample_collocation -> train_pinn -> [train_ude] -> fit_symbolic -> write_artifacts
                                        \-> train_ude -----------------/
                                        \-> write_artifacts  (generate mode)
"""

import logging
import statistics
from pathlib import Path
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from .artifacts import (
    ensure_writable,
    solution_grid_frame,
    trajectory_frame,
    write_json,
    write_manifest,
    write_symbolic,
)
from .autodiff import configure_determinism
from .config import ExperimentConfig
from .dynamics import DifferentialSystem, build_system, hidden_feature_names, hidden_features
from .neural import save_checkpoint
from .sampling import (
    CollocationSet,
    Dataset,
    ReferenceSolution,
    add_noise,
    build_collocation,
    evaluation_states,
    reference_for,
    sample_measurements,
)
from .settings import get_settings
from .symreg import SymbolicFit, distill, evaluate_network_on_data
from .trainer import HiddenModel, TrainResult, hidden_evaluation_table, state_jets, train
from .ude_baseline import UdeResult, ude_train

logger = logging.getLogger(__name__)


class ExperimentState(TypedDict):
    """State for one seed of an experiment"""
    config: ExperimentConfig
    seed: int
    seeds: Dict[str, int]
    run_dir: Path
    system: Optional[DifferentialSystem]
    reference: Optional[ReferenceSolution]
    dataset: Optional[Dataset]
    collocation: Optional[CollocationSet]
    pinn: Optional[TrainResult]
    ude: Optional[UdeResult]
    symbolic: Dict[str, List[SymbolicFit]]
    outputs: Dict[str, str]
    processing_step: str


class ExperimentPipeline:
    """Runs the steps of one experiment seed through a LangGraph workflow"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.graph = self._build_graph()

    def _build_graph(self):
        workflow = StateGraph(ExperimentState)

        workflow.add_node("generate_data", self._generate_data_node)
        workflow.add_node("sample_collocation", self._sample_collocation_node)
        workflow.add_node("train_pinn", self._train_pinn_node)
        workflow.add_node("train_ude", self._train_ude_node)
        workflow.add_node("fit_symbolic", self._fit_symbolic_node)
        workflow.add_node("write_artifacts", self._write_artifacts_node)

        workflow.set_entry_point("generate_data")
        workflow.add_edge("generate_data", "sample_collocation")
        workflow.add_conditional_edges(
            "sample_collocation",
            self._route_by_mode,
            {"train_pinn": "train_pinn", "train_ude": "train_ude", "write_artifacts": "write_artifacts"},
        )
        workflow.add_conditional_edges(
            "train_pinn",
            self._route_after_pinn,
            {"train_ude": "train_ude", "fit_symbolic": "fit_symbolic"},
        )
        workflow.add_edge("train_ude", "fit_symbolic")
        workflow.add_edge("fit_symbolic", "write_artifacts")
        workflow.add_edge("write_artifacts", END)

        return workflow.compile()

    def _route_by_mode(self, state: ExperimentState) -> str:
        mode = state["config"].mode
        if mode == "generate":
            logger.info(f"→ [seed {state['seed']}] Data only, skipping training")
            return "write_artifacts"
        return "train_ude" if mode == "ude" else "train_pinn"

    def _route_after_pinn(self, state: ExperimentState) -> str:
        return "train_ude" if state["config"].mode == "compare" else "fit_symbolic"

    def _fail(self, state: ExperimentState, step: str, error: Exception) -> None:
        logger.error(f"✗ [seed {state['seed']}] {step} failed: {error}")

    # ============================================================================
    # NODE 1: Data generation
    # ============================================================================
    def _generate_data_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Generating data..."
        config = state["config"]
        try:
            system = build_system(config.system)
            times = config.schedule.times_for(system.horizon)
            reference = reference_for(
                system,
                times,
                grid_n=config.reference.grid_n,
                step=config.reference.step,
                nx=config.reference.nx,
                nt=config.reference.nt,
            )
            dataset = sample_measurements(reference, config.schedule, system)
            dataset = add_noise(dataset, config.noise, state["seeds"]["noise"])
            state.update(system=system, reference=reference, dataset=dataset)
            logger.info(f"✓ [seed {state['seed']}] {len(dataset)} measurements of {system.name} (noise {config.noise:g})")
        except Exception as e:
            self._fail(state, "data generation", e)
            raise
        return state

    # ============================================================================
    # NODE 2: Collocation sampling
    # ============================================================================
    def _sample_collocation_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Sampling collocation points..."
        counts = state["config"].collocation
        try:
            state["collocation"] = build_collocation(
                state["system"], counts.n_interior, counts.n_boundary, state["seeds"]["collocation"]
            )
            logger.info(
                f"✓ [seed {state['seed']}] {state['collocation'].n_interior} interior, "
                f"{state['collocation'].n_boundary} boundary collocation points"
            )
        except Exception as e:
            self._fail(state, "collocation sampling", e)
            raise
        return state

    # ============================================================================
    # NODE 3: PINN training
    # ============================================================================
    def _train_pinn_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Training surrogate and hidden term..."
        config = state["config"]
        try:
            train_config = config.train.model_copy(update={
                "seed": state["seeds"]["train"],
                "progress": config.train.progress and get_settings().progress_bars,
            })
            state["pinn"] = train(state["system"], state["dataset"], state["collocation"], train_config, state["reference"])
        except Exception as e:
            self._fail(state, "PINN training", e)
            raise
        return state

    # ============================================================================
    # NODE 4: UDE baseline
    # ============================================================================
    def _train_ude_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Training UDE baseline..."
        config = state["config"]
        try:
            ude_config = config.ude.model_copy(update={
                "seed": state["seeds"]["ude"],
                "progress": config.ude.progress and get_settings().progress_bars,
            })
            state["ude"] = ude_train(state["system"], state["dataset"], ude_config, state["reference"])
        except Exception as e:
            self._fail(state, "UDE training", e)
            raise
        return state

    # ============================================================================
    # NODE 5: Symbolic distillation
    # ============================================================================
    def _training_features(self, state: ExperimentState) -> np.ndarray:
        """Hidden-term inputs at the measurement records, the states the network was trained on"""
        system, dataset = state["system"], state["dataset"]
        if all(token == "u" for token in system.hidden_inputs):
            return dataset.states.copy()
        # derivative inputs come from the trained surrogate at the data points
        jets = state_jets(state["pinn"].surrogate, dataset.points(), system)
        return hidden_features(jets, system).detach().numpy()

    def _fit_symbolic_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Distilling symbolic models..."
        config = state["config"]
        if not config.symreg.enabled:
            return state
        try:
            system = state["system"]
            names = hidden_feature_names(system)
            trajectory = evaluation_states(
                system, state["reference"], config.train.eval_grid, config.train.eval_spatial, config.train.exclude_band
            )
            trajectory_features = hidden_features(trajectory.jets, system).numpy()
            methods: Dict[str, HiddenModel] = {}
            if state["pinn"] is not None:
                methods["pinn"] = state["pinn"].hidden
            if state["ude"] is not None:
                methods["ude"] = state["ude"].hidden

            for method, hidden in methods.items():
                fits: List[SymbolicFit] = []
                for source in config.symreg.sources:
                    features = self._training_features(state) if source == "training" else trajectory_features
                    table = evaluate_network_on_data(hidden, features, names, system.hidden_names)
                    fits.extend(distill(table, config.symreg, system.hidden_targets, source=f"{method}/{source}"))
                state["symbolic"][method] = fits
        except Exception as e:
            self._fail(state, "symbolic distillation", e)
            raise
        return state

    # ============================================================================
    # NODE 6: Artifacts
    # ============================================================================
    def _write_artifacts_node(self, state: ExperimentState) -> ExperimentState:
        state["processing_step"] = "Writing artifacts..."
        config = state["config"]
        run_dir = state["run_dir"]
        outputs = state["outputs"]
        try:
            system = state["system"]
            outputs["dataset"] = str(state["dataset"].to_csv(run_dir / "dataset.csv"))
            outputs["collocation"] = str(state["collocation"].to_csv(run_dir / "collocation.csv"))
            evaluation = dict(
                grid_n=config.train.eval_grid,
                spatial_n=config.train.eval_spatial,
                exclude_band=config.train.exclude_band,
            )

            pinn = state["pinn"]
            if pinn is not None:
                outputs["surrogate"] = str(save_checkpoint(pinn.surrogate.net, run_dir / "surrogate.safetensors",
                                                           extras={"output_scale": pinn.surrogate.output_scale.tolist()}))
                outputs["hidden"] = str(save_checkpoint(pinn.hidden.net, run_dir / "hidden.safetensors",
                                                        extras={"phi": pinn.phi}))
                if pinn.boundary is not None:
                    outputs["boundary"] = str(save_checkpoint(pinn.boundary, run_dir / "boundary.safetensors"))
                outputs["report"] = str(pinn.report.to_json(run_dir / "report.json"))
                outputs["loss_trace"] = str(pinn.report.write_traces(run_dir / "loss_trace.csv"))
                table = hidden_evaluation_table(pinn.hidden, system, state["reference"], **evaluation)
                table.to_csv(run_dir / "hidden_eval.csv", index=False, float_format="%.17g")
                outputs["hidden_eval"] = str(run_dir / "hidden_eval.csv")
                if not system.is_ode:
                    grid = solution_grid_frame(pinn.surrogate, state["reference"])
                    grid.to_csv(run_dir / "solution_grid.csv", index=False, float_format="%.17g")
                    outputs["solution_grid"] = str(run_dir / "solution_grid.csv")

            ude = state["ude"]
            if ude is not None:
                outputs["ude_hidden"] = str(save_checkpoint(ude.hidden.net, run_dir / "ude_hidden.safetensors"))
                outputs["ude_report"] = str(ude.report.to_json(run_dir / "ude_report.json"))
                outputs["ude_loss_trace"] = str(ude.report.write_traces(run_dir / "ude_loss_trace.csv"))
                table = hidden_evaluation_table(ude.hidden, system, state["reference"], **evaluation)
                table.to_csv(run_dir / "ude_hidden_eval.csv", index=False, float_format="%.17g")
                outputs["ude_hidden_eval"] = str(run_dir / "ude_hidden_eval.csv")
                solved = ude.trajectory(system)
                trajectory_frame(solved["t"], solved["states"], list(system.state_names), "ude_").to_csv(
                    run_dir / "ude_trajectory.csv", index=False, float_format="%.17g"
                )
                outputs["ude_trajectory"] = str(run_dir / "ude_trajectory.csv")

            for method, fits in state["symbolic"].items():
                name = "symbolic.json" if method == "pinn" else f"{method}_symbolic.json"
                outputs[f"{method}_symbolic"] = str(write_symbolic(run_dir / name, fits))

            write_json(run_dir / "metrics.json", seed_metrics(state))
            outputs["metrics"] = str(run_dir / "metrics.json")
            logger.info(f"✓ [seed {state['seed']}] {len(outputs)} artifacts in {run_dir}")
        except Exception as e:
            self._fail(state, "artifact writing", e)
            raise
        return state

    def run(self, seed: int, run_dir: Path) -> ExperimentState:
        initial: ExperimentState = {
            "config": self.config,
            "seed": seed,
            "seeds": self.config.derived_seeds(seed),
            "run_dir": ensure_writable(run_dir),
            "system": None,
            "reference": None,
            "dataset": None,
            "collocation": None,
            "pinn": None,
            "ude": None,
            "symbolic": {},
            "outputs": {},
            "processing_step": "",
        }
        return self.graph.invoke(initial)


# ============================================================================
# METRICS AND EXPERIMENT DRIVER
# ============================================================================

def seed_metrics(state: ExperimentState) -> Dict[str, Any]:
    """Flat per-seed scores; symbolic columns use the first configured regression source"""
    metrics: Dict[str, Any] = {"seed": state["seed"]}
    for method in ("pinn", "ude"):
        result = state[method]
        if result is None:
            continue
        metrics[f"{method}_hidden_mse"] = result.report.hidden_mse
        metrics[f"{method}_surrogate_mse"] = result.report.surrogate_mse
        if method == "pinn" and result.report.phi:
            metrics["pinn_phi"] = result.report.phi[0]

    system = state["system"]
    sources = state["config"].symreg.sources
    for method, fits in state["symbolic"].items():
        for i, fit in enumerate(f for f in fits if f.source == f"{method}/{sources[0]}"):
            target = system.hidden_targets[i] if system.hidden_targets else None
            metrics[f"{method}_{fit.output}_expression"] = fit.selected.render()
            metrics[f"{method}_{fit.output}_recovered"] = fit.selected.recovered
            if target and len(target) == 1:
                (exponents,) = target.keys()
                match = [t for t in fit.selected.terms if tuple(t.exponents) == exponents]
                metrics[f"{method}_{fit.output}_coef"] = match[0].coefficient if match else None
    return metrics


def _median(values: List[Optional[float]]) -> Optional[float]:
    finite = [v for v in values if v is not None and np.isfinite(v)]
    return statistics.median(finite) if finite else None


def validate_experiment(config: ExperimentConfig) -> DifferentialSystem:
    """Checks that need the built system; raises before any compute"""
    system = build_system(config.system)
    config.schedule.times_for(system.horizon)
    return system


def run_experiment(
    config: ExperimentConfig,
    output_dir: Optional[Path] = None,
    dry_run: bool = False,
) -> Path:
    """
    Run every seed of an experiment into <output_dir>/seed_<s>/

    The top-level manifest reproduces the run; summary.json collects per-seed
    metrics and their medians.
    """
    validate_experiment(config)
    run_dir = ensure_writable(output_dir or config.output_dir or get_settings().output_root / config.name)
    configure_determinism(get_settings().torch_threads)
    seeds = {str(s): config.derived_seeds(s) for s in config.seeds}
    write_manifest(run_dir, config.model_dump(mode="json"), seeds, {"dry_run": dry_run})
    if dry_run:
        logger.info(f"✓ Dry run: config '{config.name}' is valid, manifest only")
        return run_dir

    pipeline = ExperimentPipeline(config)
    per_seed = []
    for seed in config.seeds:
        final = pipeline.run(seed, run_dir / f"seed_{seed}")
        per_seed.append(seed_metrics(final))

    keys = [k for k in per_seed[0] if k.endswith("_mse")]
    summary = {
        "experiment": config.name,
        "mode": config.mode,
        "seeds": per_seed,
        "median": {k: _median([m.get(k) for m in per_seed]) for k in keys},
    }
    write_json(run_dir / "summary.json", summary)
    logger.info(f"✓ Experiment '{config.name}' finished: {summary['median']}")
    return run_dir
