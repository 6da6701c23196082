"""
Network training: supervised pre-training and differentiable-physics
training through the unrolled execution schemes.

Both stages share one loop: shuffle examples into mini-batches, record every
example of a batch on one tape, average the objective, back-propagate and
apply one ADAM update to every trainable network parameter.
"""
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from src.autodiff import ops
from src.autodiff.tape import Tape, VarId
from src.common.exceptions import ConfigurationError, DivergenceError
from src.common.logging_config import get_logger
from src.control.schemes import execute
from src.fields.grid import CenteredField, StaggeredField
from src.monitoring.metrics import get_metrics_collector
from src.nets.models import (
    CFEModel,
    ForceEstimator,
    OPModelBank,
    Predictor,
    bound_parameters,
    cfe_infer,
    op_predict,
    split_parameters,
)
from src.optimize.adam import AdamState, adam_step, geometric_lr
from src.optimize.losses import (
    LossReport,
    blur_schedule,
    calibrate_alpha,
    cfe_supervised_loss,
    objective,
    report,
)
from src.physics.systems import ControlledSystem, FluidSystem, StateValues

logger = get_logger(__name__)


@dataclass(frozen=True)
class OPSample:
    """Ground-truth midpoint ``o_mid`` between ``o_i`` and ``o_j`` (``scale`` steps apart)."""

    scale: int
    o_i: CenteredField
    o_j: CenteredField
    o_mid: CenteredField


@dataclass(frozen=True)
class CFESample:
    """
    Current state, next observation and the supervision target: a
    ground-truth force (Burger's) or the next velocity (fluids).
    """

    state: StateValues
    target: CenteredField
    force: Optional[CenteredField] = None
    next_velocity: Optional[StaggeredField] = None

    def __post_init__(self):
        if (self.force is None) == (self.next_velocity is None):
            raise ConfigurationError("A CFE sample needs exactly one of force / next_velocity")


@dataclass(frozen=True)
class ControlExample:
    """Initial state and target observation of one reconstruction task."""

    initial: StateValues
    target: CenteredField
    horizon: int


Sample = Union[OPSample, CFESample, ControlExample]
LossFn = Callable[
    [Tape, Sample, int, Optional[OPModelBank], Optional[CFEModel]], Tuple[VarId, VarId]
]


@dataclass
class TrainingResult:
    bank: Optional[OPModelBank]
    cfe: Optional[CFEModel]
    adam: AdamState
    history: List[LossReport] = field(default_factory=list)


def _batches(count: int, batch_size: int, epochs: int, seed: int) -> Iterator[np.ndarray]:
    for epoch in range(epochs):
        order = np.random.default_rng(seed + epoch).permutation(count)
        for start in range(0, count, batch_size):
            yield order[start:start + batch_size]


def _current_arrays(bank: Optional[OPModelBank], cfe: Optional[CFEModel]) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    if bank is not None:
        for n in bank:
            arrays.update({f"op{n}/{k}": v for k, v in bank[n][1].items()})
    if cfe is not None:
        arrays.update({f"cfe/{k}": v for k, v in cfe.params.items()})
    return arrays


def _apply(bank, cfe, updates: Dict[str, np.ndarray]):
    by_scale, cfe_arrays = split_parameters(updates)
    if bank is not None and by_scale:
        bank = bank.replace({n: bank[n][1].replace(arrays) for n, arrays in by_scale.items()})
    if cfe is not None and cfe_arrays:
        cfe = replace(cfe, params=cfe.params.replace(cfe_arrays))
    return bank, cfe


def _fit(
    samples: Sequence[Sample],
    loss_fn: LossFn,
    bank: Optional[OPModelBank],
    cfe: Optional[CFEModel],
    epochs: int,
    lr_at: Callable[[int, int], float],
    alpha: float,
    batch_size: int,
    seed: int,
    state: Optional[AdamState],
    trainable: Optional[Callable[[str], bool]],
    kind: str,
) -> TrainingResult:
    state = state or AdamState()
    history: List[LossReport] = []
    if not samples or epochs <= 0:
        return TrainingResult(bank, cfe, state, history)
    if batch_size < 1:
        raise ConfigurationError(f"Batch size must be >= 1, got {batch_size}")

    metrics = get_metrics_collector()
    steps = epochs * -(-len(samples) // batch_size)
    for step, batch in enumerate(_batches(len(samples), batch_size, epochs, seed)):
        tape = Tape()
        force_terms, obs_terms = [], []
        for index in batch:
            l_f, l_o = loss_fn(tape, samples[index], step, bank, cfe)
            force_terms.append(l_f)
            obs_terms.append(l_o)
        l_f = ops.scale(reduce(ops.add, force_terms), 1.0 / len(batch))
        l_o = ops.scale(reduce(ops.add, obs_terms), 1.0 / len(batch))
        history.append(report(l_f, l_o, alpha, step))
        total = ops.add(ops.scale(l_f, alpha), l_o)

        grads = tape.backward(total)
        bound = bound_parameters(tape, bank, cfe)
        names = [k for k in bound if trainable is None or trainable(k)]
        flat_grads = {k: np.asarray(grads[bound[k]]) for k in names}
        if not all(np.all(np.isfinite(g)) for g in flat_grads.values()):
            logger.error(f"Non-finite {kind} gradient at step {step}")
            raise DivergenceError(f"{kind} gradient is not finite", step)
        tape.release()

        current = _current_arrays(bank, cfe)
        state = state.with_lr(lr_at(step, steps))
        updates, state = adam_step(state, {k: current[k] for k in names}, flat_grads)
        bank, cfe = _apply(bank, cfe, updates)

        metrics.inc_optimization_iterations(kind)
        metrics.set_last_objective(kind, history[-1].total)
        if step % settings.training.log_every == 0:
            logger.info(f"{kind} step {step}/{steps}: loss={history[-1].total:.6g}")
    return TrainingResult(bank, cfe, state, history)


def _zero(tape: Tape) -> VarId:
    return tape.variable(np.asarray(0.0))


def train_supervised(
    system: ControlledSystem,
    samples: Sequence[Union[OPSample, CFESample]],
    bank: Optional[OPModelBank] = None,
    cfe: Optional[CFEModel] = None,
    epochs: Optional[int] = None,
    lr_start: Optional[float] = None,
    lr_end: Optional[float] = None,
    batch_size: Optional[int] = None,
    seed: int = 0,
    state: Optional[AdamState] = None,
    trainable: Optional[Callable[[str], bool]] = None,
) -> TrainingResult:
    """
    Supervised pre-training.

    OP samples use ``mean |OP[o_i, o_j] - o_mid|^2``; Burger's CFE samples
    ``mean |CFE[u, o_next] - F_gt|^2``; fluid CFE samples
    ``mean |v_u + F - v*|^2``. The learning rate decays geometrically from
    ``lr_start`` to ``lr_end``.
    """
    cfg = settings.training
    epochs = cfg.supervised_epochs if epochs is None else epochs
    lr_start = cfg.supervised_lr_start if lr_start is None else lr_start
    lr_end = cfg.supervised_lr_end if lr_end is None else lr_end
    faces = system.domain.control_faces if isinstance(system, FluidSystem) else None

    def loss(tape: Tape, sample, step: int, bank, cfe):
        if isinstance(sample, OPSample):
            o_i, o_j = tape.variable(sample.o_i), tape.variable(sample.o_j)
            prediction = op_predict(bank, sample.scale, o_i, o_j)
            return _zero(tape), ops.mean_squares(ops.sub(prediction, sample.o_mid))
        state = system.variables(tape, sample.state)
        velocity = state[1] if len(state) > 1 else None
        target = tape.variable(sample.target)
        control = cfe_infer(cfe, system.observe(state), target, velocity, faces)
        if sample.force is not None:
            return _zero(tape), ops.mean_squares(ops.sub(control, sample.force))
        force = system.force(control)
        return _zero(tape), cfe_supervised_loss(velocity, force, sample.next_velocity)

    return _fit(
        samples, loss, bank, cfe, epochs,
        lambda step, steps: geometric_lr(lr_start, lr_end, step, steps),
        1.0, batch_size or cfg.batch_size, seed, state, trainable, "supervised",
    )


def train_ops_successive(
    system: ControlledSystem,
    samples: Sequence[OPSample],
    bank: OPModelBank,
    epochs: Optional[int] = None,
    joint_epochs: Optional[int] = None,
    seed: int = 0,
    **kwargs,
) -> TrainingResult:
    """
    Pre-train each OP on its own scale, smallest first, then all OPs jointly.
    """
    history: List[LossReport] = []
    result = TrainingResult(bank, None, AdamState())
    for n in bank:
        subset = [s for s in samples if s.scale == n]
        result = train_supervised(
            system, subset, result.bank, None, epochs, seed=seed + n,
            trainable=lambda key, n=n: key.startswith(f"op{n}/"), **kwargs,
        )
        history.extend(result.history)
        logger.info(f"Pre-trained OP for scale {n} on {len(subset)} samples")
    joint_epochs = epochs if joint_epochs is None else joint_epochs
    result = train_supervised(system, samples, result.bank, None, joint_epochs, seed=seed, **kwargs)
    history.extend(result.history)
    return TrainingResult(result.bank, None, result.adam, history)


def _reconstruction_loss(system, bank, cfe, scheme, exact_terminal, tape, example, blur_r):
    predictor = Predictor(bank) if bank is not None else None
    estimator = ForceEstimator(system, cfe, exact_terminal)
    state0 = system.variables(tape, example.initial)
    o_star = tape.variable(example.target)
    trajectory = execute(scheme, system, state0, o_star, example.horizon, estimator, predictor)
    forces = [system.force(c) for c in trajectory.controls]
    final = system.observe(trajectory.states[-1])
    _, l_f, l_o = objective(forces, final, o_star, system.dt, 1.0, blur_r)
    return l_f, l_o


def train_diffphys(
    system: ControlledSystem,
    examples: Sequence[ControlExample],
    bank: Optional[OPModelBank] = None,
    cfe: Optional[CFEModel] = None,
    scheme: str = "staggered",
    epochs: Optional[int] = None,
    alpha: float = 1.0,
    lr: Optional[float] = None,
    batch_size: Optional[int] = None,
    seed: int = 0,
    state: Optional[AdamState] = None,
    blur: bool = False,
    exact_terminal: bool = False,
    trainable: Optional[Callable[[str], bool]] = None,
    first_step: int = 0,
    total_steps: Optional[int] = None,
) -> TrainingResult:
    """
    End-to-end training through the unrolled scheme and solver on
    ``alpha * L_F + L_o*``. With ``blur`` the observation loss uses the
    radius schedule of :func:`blur_schedule`; ``first_step`` and
    ``total_steps`` place this call inside a longer run split into pieces.
    """
    cfg = settings.training
    epochs = cfg.diffphys_epochs if epochs is None else epochs
    lr = cfg.diffphys_lr if lr is None else lr
    batch_size = batch_size or cfg.batch_size
    steps = epochs * -(-len(examples) // batch_size) if examples else 0
    total_steps = total_steps or steps

    def loss(tape: Tape, example: ControlExample, step: int, bank, cfe):
        blur_r = blur_schedule(first_step + step, total_steps) if blur else None
        return _reconstruction_loss(
            system, bank, cfe, scheme, exact_terminal, tape, example, blur_r
        )

    return _fit(
        examples, loss, bank, cfe, epochs, lambda step, steps: lr, alpha,
        batch_size, seed, state, trainable, "diffphys",
    )


def evaluate_reconstructions(
    system: ControlledSystem,
    examples: Sequence[ControlExample],
    bank: Optional[OPModelBank] = None,
    cfe: Optional[CFEModel] = None,
    scheme: str = "staggered",
    alpha: float = 1.0,
    exact_terminal: bool = False,
) -> List[LossReport]:
    """Per-example losses of the current networks, without recording adjoints."""
    reports = []
    for example in examples:
        tape = Tape(enabled=False)
        l_f, l_o = _reconstruction_loss(
            system, bank, cfe, scheme, exact_terminal, tape, example, None
        )
        reports.append(report(l_f, l_o, alpha))
    return reports


def calibrate_alpha_for(
    system: ControlledSystem,
    examples: Sequence[ControlExample],
    bank: Optional[OPModelBank] = None,
    cfe: Optional[CFEModel] = None,
    scheme: str = "staggered",
    exact_terminal: bool = False,
) -> float:
    """:func:`calibrate_alpha` on the losses of the untrained networks over ``examples``."""
    reports = evaluate_reconstructions(system, examples, bank, cfe, scheme, 1.0, exact_terminal)
    return calibrate_alpha(reports)
