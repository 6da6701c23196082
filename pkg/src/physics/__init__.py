"""
PDE time steppers, pressure projection and controlled-system wrappers.
"""
from src.physics.domain import (
    CLOSED,
    OPEN,
    BurgerState,
    DomainSpec,
    FluidState,
    PoissonConfig,
)
from src.physics.pressure import conjugate_gradient, pressure_solve, project
from src.physics.solver import (
    apply_stream_control,
    burger_step,
    burger_update,
    check_diffusion_stability,
    default_viscosity,
    fluid_step,
    fluid_update,
)
from src.physics.systems import BurgerSystem, ControlledSystem, FluidSystem, resample_value

__all__ = [
    "CLOSED",
    "OPEN",
    "BurgerState",
    "BurgerSystem",
    "ControlledSystem",
    "DomainSpec",
    "FluidState",
    "FluidSystem",
    "PoissonConfig",
    "apply_stream_control",
    "burger_step",
    "burger_update",
    "check_diffusion_stability",
    "conjugate_gradient",
    "default_viscosity",
    "fluid_step",
    "fluid_update",
    "pressure_solve",
    "project",
    "resample_value",
]
