"""
Iterative trajectory optimisation (single shooting and its multi-scale and
warm-started variants).

Every control ``F(t_0..t_{n-1})`` is a free parameter. Each iteration rolls
the solver out over the whole horizon on a fresh tape, evaluates
``alpha * L_F + L_o*`` and back-propagates through all solver steps. Long
horizons run every step inside a checkpointed segment so only step
boundaries stay stored.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import settings
from src.autodiff.checkpoint import checkpoint_segment
from src.autodiff.tape import Tape, Value, VarId
from src.common.exceptions import ConfigurationError, DivergenceError, ShapeMismatchError
from src.common.logging_config import get_logger
from src.fields.grid import CenteredField
from src.monitoring.metrics import get_metrics_collector
from src.optimize.adam import AdamState, adam_step, decayed_lr
from src.optimize.losses import LossReport, objective, report
from src.physics.systems import ControlledSystem, FluidSystem, State, StateValues, resample_value

logger = get_logger(__name__)


@dataclass(frozen=True)
class ShootingProblem:
    """Reach ``target`` from ``initial`` in ``horizon`` steps with minimal force."""

    system: ControlledSystem
    initial: StateValues
    target: CenteredField
    horizon: int
    alpha: float = 1.0
    blur_r: Optional[float] = None
    init_controls: Optional[Tuple[Value, ...]] = None
    init_sigma: float = field(default_factory=lambda: settings.shooting.init_sigma)
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(f"Shooting horizon must be >= 1, got {self.horizon}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.init_controls is not None and len(self.init_controls) != self.horizon:
            raise ShapeMismatchError(
                f"Got {len(self.init_controls)} initial controls for horizon {self.horizon}"
            )
        if self.target.spec != self.system.spec:
            raise ShapeMismatchError("Shooting target must live on the system grid")

    def initial_controls(self) -> Tuple[Value, ...]:
        if self.init_controls is not None:
            return tuple(self.init_controls)
        rng = np.random.default_rng(self.seed)
        controls = []
        for _ in range(self.horizon):
            zero = self.system.zero_control()
            noise = rng.normal(0.0, 1.0, size=zero.flat().size) * self.init_sigma
            controls.append(type(zero).from_flat(self.system.spec, zero.flat() + noise))
        return tuple(controls)

    def default_lr(self) -> float:
        if isinstance(self.system, FluidSystem):
            if self.system.control_mode == "indirect":
                return settings.shooting.indirect_lr
            return settings.shooting.fluid_lr
        return settings.shooting.burger_lr


@dataclass
class ShootingResult:
    controls: Tuple[Value, ...]
    history: List[LossReport]
    levels: List[int] = field(default_factory=list)

    @property
    def final(self) -> LossReport:
        return self.history[-1]


def _step_segment(system: ControlledSystem, width: int):
    def segment(sub: Tape, *inputs: VarId):
        return system.step(tuple(inputs[:width]), inputs[width])

    return segment


def rollout_objective(problem: ShootingProblem, tape: Tape, controls: Sequence[Value]):
    """
    Record the full rollout on ``tape``.

    Returns ``(total, l_f, l_o, control_vars, final_state)``.
    """
    system = problem.system
    state: State = system.variables(tape, problem.initial)
    control_vars = [tape.variable(c) for c in controls]
    checkpointed = tape.enabled and problem.horizon > settings.solver.checkpoint_threshold
    forces = []
    for control in control_vars:
        if checkpointed:
            state = checkpoint_segment(tape, _step_segment(system, len(state)), *state, control)
        else:
            state = system.step(state, control)
        forces.append(system.force(control))
    total, l_f, l_o = objective(
        forces, system.observe(state), problem.target, system.dt, problem.alpha, problem.blur_r
    )
    return total, l_f, l_o, control_vars, state


def evaluate_controls(problem: ShootingProblem, controls: Sequence[Value]) -> LossReport:
    """Objective of a control sequence without recording adjoints."""
    _, l_f, l_o, _, _ = rollout_objective(problem, Tape(enabled=False), controls)
    return report(l_f, l_o, problem.alpha)


def single_shoot(
    problem: ShootingProblem,
    iterations: Optional[int] = None,
    lr: Optional[float] = None,
    decay: float = 1.0,
) -> ShootingResult:
    """
    ADAM on all controls. ``history[k]`` is the objective before update ``k``;
    the last entry is the objective of the returned controls.
    """
    iterations = settings.shooting.iterations if iterations is None else iterations
    lr = problem.default_lr() if lr is None else lr
    metrics = get_metrics_collector()
    controls = problem.initial_controls()
    state = AdamState(lr=lr)
    history: List[LossReport] = []

    for iteration in range(iterations + 1):
        tape = Tape(enabled=iteration < iterations)
        total, l_f, l_o, control_vars, _ = rollout_objective(problem, tape, controls)
        history.append(report(l_f, l_o, problem.alpha, iteration))
        metrics.set_last_objective("shooting", history[-1].total)
        if iteration == iterations:
            break

        grads = tape.backward(total)
        params = {str(k): c.flat() for k, c in enumerate(controls)}
        flat_grads = {str(k): grads[v].flat() for k, v in enumerate(control_vars)}
        if not all(np.all(np.isfinite(g)) for g in flat_grads.values()):
            logger.error(f"Non-finite shooting gradient at iteration {iteration}")
            raise DivergenceError("Shooting gradient is not finite", iteration)
        tape.release()

        state = state.with_lr(decayed_lr(lr, decay, iteration, iterations))
        params, state = adam_step(state, params, flat_grads)
        controls = tuple(type(c).from_flat(c.spec, params[str(k)]) for k, c in enumerate(controls))
        metrics.inc_optimization_iterations("shooting")
        if iteration % settings.training.log_every == 0:
            logger.info(
                f"Shooting iteration {iteration}: total={history[-1].total:.6g} "
                f"force={history[-1].force_loss:.6g} obs={history[-1].observation_loss:.6g}"
            )
    return ShootingResult(controls, history, [0] * len(history))


def _check_schedule(schedule: Sequence[float]) -> None:
    if not schedule:
        raise ConfigurationError("Multi-scale schedule must not be empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigurationError(f"Multi-scale schedule must be strictly increasing: {schedule}")
    if schedule[-1] != 1.0 or schedule[0] <= 0:
        raise ConfigurationError(
            f"Multi-scale schedule must lie in (0, 1] and end at 1: {schedule}"
        )


def _on_grid(value: Value, spec, restrict: bool = False) -> Value:
    return value if value.spec == spec else resample_value(value, spec, restrict)


def _at_level(
    problem: ShootingProblem, factor: float, controls: Optional[Tuple[Value, ...]]
) -> ShootingProblem:
    if factor == 1.0:
        spec = problem.system.spec
        system = problem.system
    else:
        spec = problem.system.spec.scaled(factor)
        system = problem.system.rescaled(spec)
    initial = tuple(_on_grid(v, spec, restrict=True) for v in problem.initial)
    target = _on_grid(problem.target, spec, restrict=True)
    if controls is not None:
        controls = tuple(_on_grid(c, spec) for c in controls)
    elif problem.init_controls is not None:
        controls = tuple(_on_grid(c, spec, restrict=True) for c in problem.init_controls)
    return replace(problem, system=system, initial=initial, target=target, init_controls=controls)


def multiscale_shoot(
    problem: ShootingProblem,
    schedule: Sequence[float] = (0.25, 0.5, 1.0),
    iterations: Union[int, Sequence[int]] = 100,
    lr: Optional[float] = None,
    decay: Optional[float] = None,
) -> ShootingResult:
    """
    Shooting coarse-to-fine over ``schedule`` (fractions of the full width).

    Controls found on one level are linearly upsampled to initialise the next;
    the learning rate decays by ``decay`` per level and within each level.
    """
    _check_schedule(schedule)
    decay = settings.shooting.ms_decay if decay is None else decay
    lr = problem.default_lr() if lr is None else lr
    per_level = [iterations] * len(schedule) if isinstance(iterations, int) else list(iterations)
    if len(per_level) != len(schedule):
        raise ConfigurationError("Need one iteration count per multi-scale level")

    controls: Optional[Tuple[Value, ...]] = None
    history: List[LossReport] = []
    levels: List[int] = []
    for level, (factor, count) in enumerate(zip(schedule, per_level)):
        level_problem = _at_level(problem, factor, controls)
        result = single_shoot(level_problem, count, lr * decay ** level, decay)
        controls = result.controls
        history.extend(result.history)
        levels.extend([level] * len(result.history))
        logger.info(
            f"Multi-scale level {level} ({level_problem.system.spec.dims}): "
            f"objective {result.history[0].total:.6g} -> {result.final.total:.6g}"
        )
    return ShootingResult(controls, history, levels)


def warm_start(problem: ShootingProblem, controls: Sequence[Value]) -> ShootingProblem:
    """The same problem initialised from given (e.g. network-inferred) controls."""
    controls = tuple(controls)
    if len(controls) != problem.horizon:
        raise ShapeMismatchError(f"Got {len(controls)} controls for horizon {problem.horizon}")
    return replace(problem, init_controls=controls)
