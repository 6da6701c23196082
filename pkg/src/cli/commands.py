"""
Implementations of the ``diffctl`` subcommands.

Each ``cmd_*`` takes a validated :class:`RunConfig`, writes its outputs below
``config.out`` and returns a small summary dict. Failures raise
``BaseControlException`` subclasses; the entry script maps them to exit codes.
"""
import json
import statistics
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from config.settings import settings
from src.autodiff.tape import Tape
from src.cli.config import RunConfig
from src.common.exceptions import ConfigurationError, DatasetError
from src.common.logging_config import get_logger
from src.control.schemes import (
    Trajectory,
    follow_predictions,
    multishape_execute,
    reconstruct_values,
    straight_line_predictions,
)
from src.control.trace import check_horizon, count_ops
from src.data.checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from src.data.datasets import DEFAULT_CONTROL, Dataset
from src.data.generate import generate
from src.data.manifest import ExperimentManifest, default_manifest, load_manifest
from src.data.outputs import (
    format_table,
    write_csv,
    write_json,
    write_loss_csv,
    write_pgm,
    write_text,
)
from src.data.pdtf import read_tensor
from src.data.store import load_sequence, save_sequence, save_value
from src.fields.grid import CenteredField
from src.fields.operators import faces_to_centers
from src.monitoring.metrics import get_metrics_collector
from src.nets.models import CFEModel, ForceEstimator, OPModelBank, Predictor
from src.nets.network import NetSpec
from src.optimize.adam import AdamState
from src.optimize.losses import LossReport, force_loss, fraction_inside, observation_loss
from src.optimize.shooting import ShootingProblem, multiscale_shoot, single_shoot
from src.optimize.training import (
    calibrate_alpha_for,
    train_diffphys,
    train_ops_successive,
    train_supervised,
)
from src.physics.systems import ControlledSystem

logger = get_logger(__name__)

WARMUPS = 3
REPETITIONS = 20


def time_inference(
    fn: Callable[[], Any], warmups: int = WARMUPS, repetitions: int = REPETITIONS
) -> Tuple[float, Any]:
    """Median wall-clock milliseconds of ``fn`` over ``repetitions`` runs after ``warmups``."""
    if repetitions < 1:
        raise ConfigurationError(f"Need at least one timed repetition, got {repetitions}")
    result = None
    for _ in range(warmups):
        result = fn()
    metrics = get_metrics_collector()
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter()
        result = fn()
        elapsed = time.perf_counter() - start
        metrics.observe_inference_latency(elapsed)
        samples.append(elapsed * 1000.0)
    return statistics.median(samples), result


def _out(config: RunConfig) -> Path:
    if config.out is None:
        raise ConfigurationError(f"{config.command} needs --out")
    config.out.mkdir(parents=True, exist_ok=True)
    return config.out


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(config: RunConfig) -> Dict[str, Any]:
    out = _out(config)
    if config.manifest is not None:
        manifest = load_manifest(config.manifest, verify=False)
    else:
        manifest = default_manifest(config.experiment, name=out.name, seed=config.seed)
    payload = manifest.model_dump(mode="json")
    payload["examples"] = []
    for split, count in (("train", config.train_count), ("test", config.test_count)):
        if count is not None:
            payload["counts"][split] = count
    if "seed" in config.model_fields_set:
        payload["seed"] = config.seed
    if config.steps is not None:
        payload["steps"] = config.steps
    if config.shapes is not None:
        payload["shapes_per_example"] = config.shapes
    try:
        manifest = ExperimentManifest.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid generation request: {e}") from e
    manifest = generate(manifest, out, config.workers)
    return {"dataset": str(out), "examples": len(manifest.examples)}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _system_for(
    dataset: Dataset, cfe: Optional[CFEModel], mode: Optional[str] = None
) -> ControlledSystem:
    if dataset.experiment == "burger":
        return dataset.system()
    return dataset.system(mode or (cfe.mode if cfe is not None else None))


def _fresh_models(dataset: Dataset, horizon: int, seed: int) -> Tuple[OPModelBank, CFEModel]:
    fluid = dataset.experiment != "burger"
    rank = 2 if fluid else 1
    bank = OPModelBank.create(horizon, NetSpec(2, 1, rank=rank), seed, nonnegative=fluid)
    mode = DEFAULT_CONTROL.get(dataset.experiment, "burger")
    return bank, CFEModel.create(mode, seed + 1)


def _checkpoint(paths: List[Path]) -> Checkpoint:
    return load_checkpoint(paths[0]) if paths else Checkpoint()


def _pick_example(dataset: Dataset, name: Optional[str]) -> str:
    if name is not None:
        dataset.manifest.example(name)
        return name
    entries = dataset.entries("test") or dataset.entries()
    return entries[0].name


def _horizon(config: RunConfig, dataset: Dataset) -> int:
    return config.steps or dataset.manifest.steps


def _trainable(config: RunConfig) -> Optional[Callable[[str], bool]]:
    if config.model == "cfe" or (config.stage == "diffphys" and config.scheme == "chain"):
        return lambda key: key.startswith("cfe/")
    if config.model == "ops":
        return lambda key: key.startswith("op")
    return None


def _force_values(system: ControlledSystem, controls) -> list:
    tape = Tape(enabled=False)
    return [system.force(tape.variable(c)).value for c in controls]


def _magnitudes(force) -> np.ndarray:
    if isinstance(force, CenteredField):
        return np.abs(force.data).ravel()
    components = faces_to_centers(force)
    return np.sqrt(sum(c.data ** 2 for c in components)).ravel()


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _history_from(meta: Dict[str, Any], alpha: float) -> List[LossReport]:
    return [LossReport(f, o, alpha) for f, o in meta.get("history", [])]


def cmd_train(config: RunConfig) -> Dict[str, Any]:
    """
    One training stage. A checkpoint is written after every epoch; starting
    from a checkpoint of the same stage resumes the ADAM state, step counter,
    epoch counter and loss history.
    """
    out = _out(config)
    dataset = Dataset.open(config.manifest)
    horizon = _horizon(config, dataset)
    check_horizon(horizon)
    start = _checkpoint(config.init)
    if config.init:
        bank, cfe = start.bank, start.cfe
    else:
        bank, cfe = _fresh_models(dataset, horizon, config.seed)
    if bank is None and cfe is None:
        raise DatasetError(f"Checkpoint {config.init[0]} holds no networks")
    system = _system_for(dataset, cfe)
    burger = dataset.experiment == "burger"

    resuming = bool(config.init) and start.meta.get("stage") == config.stage
    adam: Optional[AdamState] = start.adam if resuming else None
    first_epoch = int(start.meta.get("epochs_done", 0)) if resuming else 0
    cfg = settings.training
    if config.epochs is not None:
        epochs = config.epochs
    else:
        epochs = cfg.supervised_epochs if config.stage == "supervised" else cfg.diffphys_epochs
    batch_size = config.batch_size or cfg.batch_size
    trainable = _trainable(config)

    alpha = config.alpha
    if alpha is None and resuming:
        alpha = start.meta.get("alpha")
    if config.stage == "supervised":
        alpha = 1.0
        samples: list = []
        if config.model in ("all", "ops"):
            samples.extend(dataset.op_samples("train", horizon))
        if config.model in ("all", "cfe"):
            samples.extend(dataset.cfe_samples("train"))
        lr_start = config.lr or cfg.supervised_lr_start
        lr_end = min(cfg.supervised_lr_end, lr_start)
    else:
        examples = dataset.control_examples("train", horizon)
        if alpha is None and burger:
            # the exact last step leaves no observation loss to balance against
            alpha = 1.0
        elif alpha is None:
            alpha = calibrate_alpha_for(system, examples[:batch_size], bank, cfe, config.scheme)
        lr = config.lr or cfg.diffphys_lr
        steps_per_epoch = -(-len(examples) // batch_size)

    history = _history_from(start.meta, alpha) if resuming else []
    csv_path = out / f"{config.stage}_loss.csv"

    def save(epochs_done: int) -> None:
        meta = {
            "stage": config.stage,
            "epochs_done": epochs_done,
            "alpha": alpha,
            "scheme": config.scheme,
            "experiment": dataset.experiment,
            "horizon": horizon,
            "history": [[r.force_loss, r.observation_loss] for r in history],
        }
        save_checkpoint(out / "checkpoint", Checkpoint(bank, cfe, adam, meta))
        write_loss_csv(csv_path, history)

    if config.stage == "supervised" and config.successive and config.model == "ops":
        result = train_ops_successive(
            system, dataset.op_samples("train", horizon), bank, epochs, seed=config.seed,
            batch_size=batch_size, lr_start=lr_start, lr_end=lr_end,
        )
        bank, adam = result.bank, result.adam
        history.extend(result.history)
        save(epochs)
        return {"checkpoint": str(out / "checkpoint"), "iterations": len(history)}

    for epoch in range(first_epoch, epochs):
        if config.stage == "supervised":
            ratio = lr_end / lr_start
            result = train_supervised(
                system, samples, bank, cfe, epochs=1,
                lr_start=lr_start * ratio ** (epoch / epochs),
                lr_end=lr_start * ratio ** ((epoch + 1) / epochs),
                batch_size=batch_size, seed=config.seed + epoch, state=adam, trainable=trainable,
            )
        else:
            result = train_diffphys(
                system, examples, bank, cfe, config.scheme, epochs=1, alpha=alpha, lr=lr,
                batch_size=batch_size, seed=config.seed + epoch, state=adam,
                blur=dataset.experiment == "fluid_shapes", exact_terminal=burger,
                trainable=trainable, first_step=epoch * steps_per_epoch,
                total_steps=epochs * steps_per_epoch,
            )
        bank, cfe, adam = result.bank, result.cfe, result.adam
        history.extend(result.history)
        save(epoch + 1)
        totals = [r.total for r in result.history]
        mean_loss = float(np.mean(totals)) if totals else float("nan")
        logger.info(f"{config.stage} epoch {epoch + 1}/{epochs}: mean loss {mean_loss:.6g}")
    if first_epoch >= epochs:
        save(first_epoch)
    return {"checkpoint": str(out / "checkpoint"), "iterations": len(history)}


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


def _estimators(system: ControlledSystem, checkpoint: Checkpoint, scheme: str):
    burger = system.kind == "burger"
    estimator = ForceEstimator(system, checkpoint.cfe, exact_terminal=burger)
    predictor = None
    if scheme != "chain":
        if checkpoint.bank is None:
            raise ConfigurationError(f"Scheme {scheme!r} needs observation predictors (--init)")
        predictor = Predictor(checkpoint.bank)
    return estimator, predictor


def _run_scheme(system, scheme: str, initial, target, n: int, estimator, predictor) -> Trajectory:
    return reconstruct_values(scheme, system, initial, target, n, estimator, predictor)


def _losses(system: ControlledSystem, forces: list, final, target, alpha: float) -> LossReport:
    return LossReport(force_loss(forces, system.dt), observation_loss(final, target), alpha)


def cmd_reconstruct(config: RunConfig) -> Dict[str, Any]:
    out = _out(config)
    dataset = Dataset.open(config.manifest)
    checkpoint = _checkpoint(config.init)
    system = _system_for(dataset, checkpoint.cfe)
    name = _pick_example(dataset, config.example)
    n = _horizon(config, dataset)
    alpha = config.alpha if config.alpha is not None else checkpoint.meta.get("alpha", 1.0)
    estimator, predictor = _estimators(system, checkpoint, config.scheme)

    parts = dataset.shape_parts(name)
    multishape = len(parts["initial"]) > 1 and config.scheme != "chain"
    target = dataset.target(name)

    def run():
        if multishape:
            tape = Tape(enabled=False)
            states0 = [system.variables(tape, s) for s in parts["initial"]]
            o_stars = [tape.variable(t) for t in parts["target"]]
            return multishape_execute(system, states0, o_stars, n, predictor, estimator)
        initial = dataset.initial_state(name)
        return (_run_scheme(system, config.scheme, initial, target, n, estimator, predictor),)

    median_ms, trajectories = time_inference(run)
    lead = trajectories[0]
    controls = list(lead.control_values())
    forces = _force_values(system, controls)
    per_part = [t.state_values() for t in trajectories]
    observations = [sum((s[i][0] for s in per_part[1:]), per_part[0][i][0]) for i in range(n + 1)]
    final = observations[-1]
    losses = _losses(system, forces, final, target, alpha)

    files = []
    files += save_sequence(out, out, "observations", observations)
    if len(lead.states[0]) > 1 and len(trajectories) == 1:
        files += save_sequence(out, out, "velocity", [s[1] for s in lead.state_values()])
    files += save_sequence(out, out, "controls", controls)
    files += save_sequence(out, out, "forces", forces)
    for t, prediction in lead.prediction_values().items():
        files += save_value(out, out / "predictions", f"t{t}", prediction)
    write_text(out / "trace.txt", lead.trace.to_text())

    ops_count, cfe_count, solver_count = lead.trace.counts()
    expected = count_ops(n, config.scheme) if not multishape else None
    report: Dict[str, Any] = {
        "example": name,
        "scheme": config.scheme,
        "horizon": n,
        "control_mode": getattr(system, "control_mode", "burger"),
        **losses.to_dict(),
        "terminal_error": float(np.max(np.abs(final.data - target.data))),
        "inference_ms": median_ms,
        "counts": {"op": ops_count, "cfe": cfe_count, "solver": solver_count},
        "expected_counts": (
            None if expected is None else dict(zip(("op", "cfe", "solver"), expected))
        ),
        "files": [f.model_dump() for f in files],
    }
    if dataset.experiment == "fluid_indirect":
        report["inside_target"] = fraction_inside(final, dataset.bucket_region(name))
    write_json(out / "report.json", report)
    logger.info(
        f"Reconstructed {name} with {config.scheme}: force={losses.force_loss:.6g} "
        f"obs={losses.observation_loss:.6g} in {median_ms:.2f} ms"
    )
    return report


# ---------------------------------------------------------------------------
# shoot
# ---------------------------------------------------------------------------


def _warm_mode(path: Path) -> Optional[str]:
    """Control mode recorded by the reconstruction that produced ``path``."""
    report_path = path / "report.json"
    if not report_path.exists():
        return None
    try:
        mode = json.loads(report_path.read_text()).get("control_mode")
    except json.JSONDecodeError as e:
        raise DatasetError(f"Unreadable warm-start report {report_path}: {e}") from e
    return None if mode == "burger" else mode


def cmd_shoot(config: RunConfig) -> Dict[str, Any]:
    out = _out(config)
    dataset = Dataset.open(config.manifest)
    name = _pick_example(dataset, config.example)
    n = _horizon(config, dataset)
    init_controls = None
    if config.warm_start is not None:
        system = dataset.system(_warm_mode(config.warm_start))
        init_controls = tuple(load_sequence(config.warm_start, "controls", system.spec))
    else:
        system = dataset.system()
    problem = ShootingProblem(
        system,
        dataset.initial_state(name),
        dataset.target(name),
        n,
        alpha=config.alpha if config.alpha is not None else 1.0,
        init_controls=init_controls,
        seed=config.seed,
    )
    iterations = settings.shooting.iterations if config.iters is None else config.iters
    if config.multiscale:
        result = multiscale_shoot(problem, iterations=iterations, lr=config.lr)
    else:
        result = single_shoot(problem, iterations, config.lr)

    forces = _force_values(system, result.controls)
    files = save_sequence(out, out, "controls", list(result.controls))
    files += save_sequence(out, out, "forces", forces)
    write_loss_csv(out / "shoot_loss.csv", result.history)
    report = {
        "example": name,
        "horizon": n,
        "iterations": iterations,
        "multiscale": config.multiscale,
        "warm_start": config.warm_start is not None,
        "initial": result.history[0].to_dict(),
        **result.final.to_dict(),
        "files": [f.model_dump() for f in files],
    }
    write_json(out / "report.json", report)
    return report


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _mean_std(values: List[float]) -> Tuple[float, float]:
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


def cmd_eval(config: RunConfig) -> Dict[str, Any]:
    """
    Mean and standard deviation of force, observation and total loss over
    the test split for every (checkpoint, scheme) pair, plus optional
    shooting and straight-line reference rows.
    """
    out = _out(config)
    dataset = Dataset.open(config.manifest)
    n = _horizon(config, dataset)
    names = [e.name for e in dataset.entries("test")][: config.limit]
    if not names:
        raise DatasetError(f"Dataset {dataset.manifest.name} has no test examples")
    schemes = config.schemes or [config.scheme]
    checkpoints = [
        (p.name if p.name != "checkpoint" else p.parent.name, load_checkpoint(p))
        for p in config.init
    ]
    if not checkpoints:
        checkpoints = [("analytic", Checkpoint())]
    indirect = dataset.experiment == "fluid_indirect"

    rows: Dict[str, Dict[str, List[float]]] = {}
    magnitudes: Dict[str, List[np.ndarray]] = {}

    def record(
        method: str, system, controls, final, target, name: str, elapsed: Optional[float]
    ) -> None:
        forces = _force_values(system, controls)
        losses = _losses(system, forces, final, target, 1.0)
        row = rows.setdefault(method, {"force": [], "obs": [], "total": [], "inside": [], "ms": []})
        row["force"].append(losses.force_loss)
        row["obs"].append(losses.observation_loss)
        row["total"].append(losses.total)
        if indirect:
            row["inside"].append(100.0 * fraction_inside(final, dataset.bucket_region(name)))
        if elapsed is not None:
            row["ms"].append(elapsed)
        magnitudes.setdefault(method, []).extend(_magnitudes(f) for f in forces)

    for label, checkpoint in checkpoints:
        system = _system_for(dataset, checkpoint.cfe)
        for scheme in schemes:
            estimator, predictor = _estimators(system, checkpoint, scheme)
            method = f"{label}/{scheme}"
            for name in names:
                initial, target = dataset.initial_state(name), dataset.target(name)

                def run():
                    return _run_scheme(system, scheme, initial, target, n, estimator, predictor)

                if config.timing:
                    elapsed, trajectory = time_inference(run)
                else:
                    elapsed, trajectory = None, run()
                final = trajectory.state_values()[-1][0]
                record(method, system, trajectory.control_values(), final, target, name, elapsed)
            logger.info(f"Evaluated {method} on {len(names)} examples")

        if config.reference and indirect and checkpoint.cfe is not None:
            estimator = ForceEstimator(system, checkpoint.cfe)
            for name in names:
                initial, target = dataset.initial_state(name), dataset.target(name)
                tape = Tape(enabled=False)
                line = straight_line_predictions(initial[0], target, n)
                targets = [tape.variable(t) for t in line]
                state0 = system.variables(tape, initial)
                trajectory = follow_predictions(system, state0, targets, estimator)
                record(f"{label}/straight_line", system, trajectory.control_values(),
                       trajectory.state_values()[-1][0], target, name, None)

    if config.shooting:
        iterations = settings.shooting.iterations if config.iters is None else config.iters
        system = dataset.system()
        for name in names:
            problem = ShootingProblem(
                system, dataset.initial_state(name), dataset.target(name), n, seed=config.seed
            )
            result = single_shoot(problem, iterations, config.lr)
            final = system.rollout(problem.initial, result.controls)[-1][0]
            shooting_label = f"shooting-{iterations}"
            record(shooting_label, system, result.controls, final, problem.target, name, None)

    header = ["method", "force_mean", "force_std", "obs_mean", "obs_std", "total_mean", "total_std"]
    if indirect:
        header += ["inside_mean", "inside_std"]
    if config.timing:
        header += ["time_ms_median"]
    csv_rows, text_rows = [], []
    for method, row in rows.items():
        stats = [_mean_std(row["force"]), _mean_std(row["obs"]), _mean_std(row["total"])]
        if indirect:
            stats.append(_mean_std(row["inside"]))
        csv_row: List[Any] = [method] + [v for pair in stats for v in pair]
        text_row = [method] + [f"{m:.4g} ± {s:.2g}" for m, s in stats]
        if config.timing:
            median = float(np.median(row["ms"])) if row["ms"] else float("nan")
            csv_row.append(median)
            text_row.append(f"{median:.2f}")
        csv_rows.append(csv_row)
        text_rows.append(text_row)
    text_header = ["method", "force", "obs_loss", "total"] + (["inside_%"] if indirect else [])
    text_header += ["time_ms"] if config.timing else []
    write_csv(out / "eval.csv", header, csv_rows)
    write_text(out / "eval.txt", format_table(text_header, text_rows))

    peak = max((float(np.max(np.concatenate(m))) for m in magnitudes.values() if m), default=0.0)
    edges = np.linspace(0.0, peak if peak > 0 else 1.0, 21)
    histogram = []
    for method, parts in magnitudes.items():
        counts, _ = np.histogram(np.concatenate(parts), bins=edges)
        histogram.extend(
            (method, float(lo), float(hi), int(c))
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        )
    write_csv(out / "force_histogram.csv", ("method", "bin_lo", "bin_hi", "count"), histogram)
    return {"methods": list(rows), "examples": len(names)}


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------


def cmd_render(config: RunConfig) -> Dict[str, Any]:
    """One min-max normalised PGM per frame of every input tensor."""
    out = _out(config)
    written = []
    for path in config.inputs:
        array = read_tensor(path)
        frames = array if (config.sequence or array.ndim == 3) else array[None]
        stem = path.name[: -len(".pdtf")] if path.name.endswith(".pdtf") else path.stem
        for k, frame in enumerate(frames):
            target = out / f"{stem}_{k:03d}.pgm"
            write_pgm(target, frame)
            written.append(str(target))
    logger.info(f"Rendered {len(written)} frames to {out}")
    return {"frames": written}


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "gen": cmd_gen,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "shoot": cmd_shoot,
    "eval": cmd_eval,
    "render": cmd_render,
}
