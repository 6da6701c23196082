"""
Pressure solve and incompressibility projection.

The Poisson system ``A p = div`` uses ``A = D M G_b``: the divergence of the
wall-masked, boundary-aware gradient. ``-A`` is symmetric positive
semi-definite, so the solve runs plain conjugate gradients on the fluid
cells. When every side is closed the system is singular on constants; the
right-hand side is projected to zero mean and the mean of ``p`` removed.

Because ``A`` is symmetric, the adjoint of the solve is another solve with
the same matrix applied to the incoming cotangent.
"""
import numpy as np

from src.autodiff import ops
from src.autodiff.tape import CustomAdjoint, Tape, VarId
from src.common.exceptions import ConvergenceError
from src.common.logging_config import get_logger
from src.fields.grid import CenteredField, StaggeredField
from src.monitoring.metrics import get_metrics_collector
from src.physics.domain import DomainSpec, PoissonConfig

logger = get_logger(__name__)


def conjugate_gradient(matrix, rhs: np.ndarray, cfg: PoissonConfig):
    """
    Solve ``matrix @ x = rhs`` for symmetric positive (semi-)definite ``matrix``.

    Stops once ``|r|_2 <= tol * |rhs|_2`` and ``max|r| <= tol * max(1, max|rhs|)``.

    Returns:
        (x, iterations, residual_norm)

    Raises:
        ConvergenceError: tolerance not reached within ``cfg.max_iterations``
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rhs_norm = float(np.linalg.norm(rhs))
    max_tolerance = cfg.tolerance * max(1.0, float(np.abs(rhs).max(initial=0.0)))

    def converged(res: np.ndarray) -> bool:
        return (
            np.linalg.norm(res) <= cfg.tolerance * rhs_norm
            and np.abs(res).max(initial=0.0) <= max_tolerance
        )

    if rhs_norm == 0.0 or converged(r):
        return x, 0, float(np.linalg.norm(r))

    p = r.copy()
    rr = float(r @ r)
    for iteration in range(1, cfg.max_iterations + 1):
        ap = matrix @ p
        curvature = float(p @ ap)
        if curvature <= 0.0:
            break
        step = rr / curvature
        x += step * p
        r -= step * ap
        if converged(r):
            return x, iteration, float(np.linalg.norm(r))
        rr_next = float(r @ r)
        p = r + (rr_next / rr) * p
        rr = rr_next

    residual = float(np.linalg.norm(r))
    logger.error(
        f"Conjugate gradient stalled after {cfg.max_iterations} iterations, residual {residual:.3e}"
    )
    raise ConvergenceError("Pressure solve did not converge", residual, cfg.max_iterations)


def solve_poisson(div: np.ndarray, domain: DomainSpec, cfg: PoissonConfig) -> np.ndarray:
    """Raw solve on flattened arrays; returns ``p`` with ``p = 0`` in obstacles."""
    fluid = ~domain.obstacle.ravel()
    matrix = domain.fluid_poisson_matrix
    rhs = -np.asarray(div, dtype=np.float64).ravel()[fluid]
    singular = not domain.has_open_side
    if singular:
        rhs = rhs - rhs.mean()

    solution, iterations, residual = conjugate_gradient(matrix, rhs, cfg)
    if singular and solution.size:
        solution = solution - solution.mean()

    metrics = get_metrics_collector()
    metrics.inc_cg_solves()
    metrics.observe_cg_iterations(iterations)
    logger.debug(f"Pressure solve converged in {iterations} iterations (residual {residual:.3e})")

    p = np.zeros(domain.spec.size)
    p[fluid] = solution
    return p


def _pressure_adjoint(domain: DomainSpec, cfg: PoissonConfig) -> CustomAdjoint:
    def forward(div: CenteredField) -> CenteredField:
        return CenteredField.from_flat(div.spec, solve_poisson(div.flat(), domain, cfg))

    def backward(cot: CenteredField, inputs, output):
        return (forward(cot),)

    return CustomAdjoint("pressure_solve", forward, backward)


def pressure_solve(div, domain: DomainSpec, cfg: PoissonConfig = None):
    """
    Pressure ``p`` with ``A p = div`` for the domain's Poisson matrix.

    Accepts a ``CenteredField`` (untaped) or a ``VarId``; the taped version
    back-propagates by solving the same system for the cotangent.
    """
    cfg = cfg or PoissonConfig()
    op = _pressure_adjoint(domain, cfg)
    if isinstance(div, VarId):
        return div.tape.record(op, div)
    return op.forward(div)


def project(v, domain: DomainSpec, cfg: PoissonConfig = None):
    """
    Divergence-free part of ``v``: ``M v - M G_b p`` with ``p = pressure_solve(div(M v))``.

    Faces on closed walls and obstacle boundaries are 0 in the result.
    """
    cfg = cfg or PoissonConfig()
    if not isinstance(v, VarId):
        return project(Tape(enabled=False).variable(v), domain, cfg).value
    masked = ops.mask(v, domain.open_faces)
    p = pressure_solve(ops.divergence(masked), domain, cfg)
    correction = ops.sparse_apply(p, domain.masked_gradient, StaggeredField, domain.spec)
    return ops.sub(masked, correction)
