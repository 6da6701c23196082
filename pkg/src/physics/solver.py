"""
Time steppers for Burger's equation and incompressible smoke flow.

Each stepper has a taped form operating on ``VarId`` handles and a value form
operating on state objects; the value form records on a disabled tape, so
both produce bit-identical results.

Burger's:   u' = D[A[u, u]] + dt F,  D[x] = x + nu dt laplace(x)
Fluid:      rho' = A[rho, v] (zero in obstacles)
            v'   = project(A[v, v] - beta * faces(rho') + dt * (F on control faces))
"""
from typing import Optional, Tuple

from config.settings import settings
from src.autodiff import ops
from src.autodiff.tape import Tape, VarId
from src.common.exceptions import ConfigurationError, ShapeMismatchError
from src.common.logging_config import get_logger
from src.fields.grid import CenteredField, GridSpec, StaggeredField
from src.fields.operators import curl2d
from src.monitoring.metrics import get_metrics_collector
from src.physics.domain import BurgerState, DomainSpec, FluidState, PoissonConfig
from src.physics.pressure import project

logger = get_logger(__name__)


def default_viscosity(spec: GridSpec, dt: float) -> float:
    """``factor * dx^2 / dt`` (see ``SolverSettings.burger_viscosity_factor``)."""
    return settings.solver.burger_viscosity_factor * spec.spacing[0] ** 2 / dt


def check_diffusion_stability(spec: GridSpec, dt: float, nu: float) -> None:
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    if nu < 0:
        raise ConfigurationError(f"Viscosity must be >= 0, got {nu}")
    number = nu * dt / min(spec.spacing) ** 2
    if number > 0.5:
        raise ConfigurationError(
            f"Explicit diffusion unstable: nu*dt/dx^2 = {number:.3f} exceeds 0.5"
        )


def burger_update(u: VarId, force: Optional[VarId], dt: float, nu: float) -> VarId:
    """One taped Burger's step; ``force=None`` is the unforced solver."""
    spec = u.shape.spec
    check_diffusion_stability(spec, dt, nu)
    transported = ops.advect(u, u, dt)
    out = transported
    if nu > 0:
        out = ops.add(out, ops.scale(ops.laplace(transported), nu * dt))
    if force is not None:
        if force.shape != u.shape:
            raise ShapeMismatchError("Burger's force and state must share one grid")
        out = ops.add(out, ops.scale(force, dt))
    get_metrics_collector().inc_solver_steps("burger")
    return out


def burger_step(
    state: BurgerState, force: Optional[CenteredField], dt: float, nu: Optional[float] = None
) -> BurgerState:
    """Advance ``state`` by one step of size ``dt``."""
    nu = default_viscosity(state.u.spec, dt) if nu is None else nu
    tape = Tape(enabled=False)
    u = burger_update(
        tape.variable(state.u), None if force is None else tape.variable(force), dt, nu
    )
    return BurgerState(u.value, state.time + 1)


def fluid_update(
    density: VarId,
    velocity: VarId,
    force: Optional[VarId],
    domain: DomainSpec,
    dt: float,
    cfg: Optional[PoissonConfig] = None,
) -> Tuple[VarId, VarId]:
    """One taped smoke-flow step; ``force`` is a staggered field or ``None``."""
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0, got {dt}")
    if density.shape.spec != domain.spec or velocity.shape.spec != domain.spec:
        raise ShapeMismatchError("Fluid state and domain must share one grid")
    cfg = cfg or PoissonConfig()

    rho = ops.mask(ops.advect(density, velocity, dt), domain.fluid)
    v = ops.advect(velocity, velocity, dt)
    if any(domain.buoyancy):
        lift = StaggeredField.uniform(domain.spec, [-b for b in domain.buoyancy])
        v = ops.add(v, ops.mask(ops.centers_to_faces(rho), lift))
    if force is not None:
        v = ops.add(v, ops.mask(ops.scale(force, dt), domain.control_faces))
    v = project(v, domain, cfg)
    get_metrics_collector().inc_solver_steps("fluid")
    return rho, v


def fluid_step(
    state: FluidState,
    force: Optional[StaggeredField],
    domain: DomainSpec,
    dt: float,
    cfg: Optional[PoissonConfig] = None,
) -> FluidState:
    tape = Tape(enabled=False)
    rho, v = fluid_update(
        tape.variable(state.density),
        tape.variable(state.velocity),
        None if force is None else tape.variable(force),
        domain,
        dt,
        cfg,
    )
    return FluidState(rho.value, v.value, state.time + 1)


def apply_stream_control(state: FluidState, phi, dt: float = 1.0):
    """
    Force field ``curl2d(phi)`` for a stream-function control.

    ``phi`` may be a ``CenteredField`` or a ``VarId``; the result is
    divergence-free by construction.
    """
    if isinstance(phi, VarId):
        return ops.curl2d(phi)
    return curl2d(phi)
