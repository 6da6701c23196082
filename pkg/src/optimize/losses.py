"""
Objective terms for trajectory reconstruction and network training.

    force loss        L_F  = sum_i sum_cells |F(t_i)|^2 * cell_volume * dt
    observation loss  L_o* = mean |B_r(o(u(t_n))) - B_r(o*)|^2
    objective              = alpha * L_F + L_o*

Each function accepts ``VarId`` handles (recording on their tape) or plain
values (returning a float).
"""
from dataclasses import asdict, dataclass
from functools import reduce
from math import isfinite
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config.settings import settings
from src.autodiff import ops
from src.autodiff.tape import Tape, Value, VarId
from src.common.exceptions import ConfigurationError, DivergenceError, ShapeMismatchError
from src.common.logging_config import get_logger
from src.fields.grid import CenteredField, StaggeredField

logger = get_logger(__name__)


@dataclass(frozen=True)
class LossReport:
    force_loss: float
    observation_loss: float
    alpha: float = 1.0

    def __post_init__(self):
        for name in ("force_loss", "observation_loss", "alpha"):
            if not isfinite(getattr(self, name)):
                raise DivergenceError(f"Non-finite {name} in loss report")
        if self.force_loss < 0:
            raise ShapeMismatchError(f"Force loss must be >= 0, got {self.force_loss}")

    @property
    def total(self) -> float:
        return self.alpha * self.force_loss + self.observation_loss

    def to_dict(self) -> dict:
        data = asdict(self)
        data["total"] = self.total
        return data


def _squared_sum(value: Value) -> float:
    if isinstance(value, StaggeredField):
        return float(sum(np.sum(c * c) for c in value.components))
    data = value.data if isinstance(value, CenteredField) else np.asarray(value)
    return float(np.sum(data * data))


def force_loss(forces: Sequence, dt: float):
    """Discrete force integral; an empty sequence costs 0."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    if not forces:
        return 0.0
    first = forces[0].shape if isinstance(forces[0], VarId) else forces[0]
    weight = first.spec.cell_volume * dt
    if isinstance(forces[0], VarId):
        terms = [ops.sum_squares(f) for f in forces]
        return ops.scale(reduce(ops.add, terms), weight)
    return weight * sum(_squared_sum(f) for f in forces)


def observation_loss(observed, target, blur_r: Optional[float] = None):
    """Mean squared difference, optionally of the blurred fields."""
    if isinstance(observed, VarId):
        if not isinstance(target, VarId):
            target = observed.tape.variable(target)
        if observed.shape != target.shape:
            raise ShapeMismatchError("Observation and target must share one grid")
        if blur_r:
            observed = ops.blur(observed, blur_r)
            target = ops.blur(target, blur_r)
        return ops.mean_squares(ops.sub(observed, target))
    tape = Tape(enabled=False)
    return float(observation_loss(tape.variable(observed), tape.variable(target), blur_r).value)


def objective(forces: Sequence[VarId], observed: VarId, target, dt: float, alpha: float,
              blur_r: Optional[float] = None) -> Tuple[VarId, VarId, VarId]:
    """``(alpha * L_F + L_o*, L_F, L_o*)`` on the tape of ``observed``."""
    l_f = force_loss(forces, dt)
    if not isinstance(l_f, VarId):
        l_f = observed.tape.variable(np.asarray(0.0))
    l_o = observation_loss(observed, target, blur_r)
    return ops.add(ops.scale(l_f, alpha), l_o), l_f, l_o


def report(l_f: VarId, l_o: VarId, alpha: float, iteration: Optional[int] = None) -> LossReport:
    """Read the loss terms off the tape; non-finite values raise ``DivergenceError``."""
    force, obs = float(l_f.value), float(l_o.value)
    if not (isfinite(force) and isfinite(obs)):
        logger.error(f"Objective diverged: force_loss={force}, obs_loss={obs}")
        raise DivergenceError("Objective is not finite", iteration)
    return LossReport(force, obs, alpha)


def cfe_supervised_loss(velocity, force, target_velocity):
    """``mean |v_u + F - v*|^2`` for a staggered velocity and force."""
    if isinstance(velocity, VarId):
        return ops.mean_squares(ops.sub(ops.add(velocity, force), target_velocity))
    tape = Tape(enabled=False)
    return float(
        cfe_supervised_loss(
            tape.variable(velocity), tape.variable(force), tape.variable(target_velocity)
        ).value
    )


def fraction_inside(density: CenteredField, region: np.ndarray) -> float:
    """Share of the (non-negative) smoke mass lying inside ``region``."""
    region = np.asarray(region, dtype=bool)
    if region.shape != density.data.shape:
        raise ShapeMismatchError(f"Region shape {region.shape} does not match {density.data.shape}")
    mass = np.clip(density.data, 0.0, None)
    total = mass.sum()
    return float(mass[region].sum() / total) if total > 0 else 0.0


def blur_schedule(
    iteration: int,
    iterations: int,
    start: Optional[float] = None,
    end: Optional[float] = None,
    spacing: float = 1.0,
) -> float:
    """
    Blur radius for ``iteration`` of ``iterations``: ``start`` halved at equal
    intervals down to ``end`` (radii in cells, scaled by ``spacing``).
    """
    start = settings.training.blur_start if start is None else start
    end = settings.training.blur_end if end is None else end
    radii: List[float] = [start]
    while radii[-1] / 2.0 >= end:
        radii.append(radii[-1] / 2.0)
    if iterations <= 0:
        return radii[-1] * spacing
    stage = min(len(radii) - 1, iteration * len(radii) // iterations)
    return radii[stage] * spacing


def calibrate_alpha(reports: Sequence[LossReport]) -> float:
    """
    Weight making ``alpha * L_F`` match ``L_o*`` on average over ``reports``
    (losses of the untrained model on a validation batch).
    """
    if not reports:
        raise ConfigurationError("Alpha calibration needs at least one loss report")
    mean_force = float(np.mean([r.force_loss for r in reports]))
    mean_obs = float(np.mean([r.observation_loss for r in reports]))
    if mean_force <= 0 or mean_obs <= 0:
        logger.warning("Degenerate calibration batch; using alpha = 1")
        return 1.0
    alpha = mean_obs / mean_force
    logger.info(f"Calibrated alpha = {alpha:.6g} on {len(reports)} examples")
    return alpha
