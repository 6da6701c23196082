"""
Controlled systems: a solver plus its observation and control parameterisation.

Execution schemes and optimisers only talk to a ``ControlledSystem``:
states are tuples of ``VarId`` handles, ``observe`` projects a state onto
its visible part, and ``step`` advances it under a control parameter.

Control parameterisations:
    burger    F, a cell-centred force
    stream    phi, a stream function; F = curl2d(phi) restricted to the control region
    direct    F, a staggered force
    indirect  F, a staggered force restricted to the control region
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

from src.autodiff import ops
from src.autodiff.tape import Tape, Value, VarId
from src.common.exceptions import ConfigurationError
from src.fields.grid import CenteredField, GridSpec, StaggeredField
from src.fields.operators import downsample, faces_to_centers, resample, vectors_to_faces
from src.physics.domain import DomainSpec, PoissonConfig
from src.physics.solver import burger_update, default_viscosity, fluid_update

State = Tuple[VarId, ...]
StateValues = Tuple[Value, ...]

CONTROL_MODES = ("stream", "direct", "indirect")


def resample_value(value: Value, spec: GridSpec, restrict: bool = False) -> Value:
    """Resample a centred or staggered value onto ``spec`` (linear)."""
    move = downsample if restrict else resample
    if isinstance(value, CenteredField):
        return move(value, spec)
    return vectors_to_faces([move(c, spec) for c in faces_to_centers(value)])


class ControlledSystem(ABC):
    """Common interface of the Burger's and smoke-flow solvers."""

    kind: str
    spec: GridSpec
    dt: float

    def variables(self, tape: Tape, values: StateValues) -> State:
        return tuple(tape.variable(v) for v in values)

    @staticmethod
    def values(state: State) -> StateValues:
        return tuple(v.value for v in state)

    @abstractmethod
    def observe(self, state: State) -> VarId:
        """Visible part of the state."""

    @abstractmethod
    def force(self, control: VarId) -> VarId:
        """Force field realised by a control parameter."""

    @abstractmethod
    def step(self, state: State, control: Optional[VarId]) -> State:
        """Advance one step; ``control=None`` runs the unforced solver."""

    @abstractmethod
    def zero_control(self) -> Value:
        """Zero-valued control parameter."""

    @abstractmethod
    def rescaled(self, spec: GridSpec) -> "ControlledSystem":
        """The same system discretised on ``spec``."""

    def rollout(
        self, values: StateValues, controls: Sequence[Optional[Value]]
    ) -> Tuple[StateValues, ...]:
        """Untaped replay: the state before every step and after the last."""
        tape = Tape(enabled=False)
        state = self.variables(tape, values)
        states = [self.values(state)]
        for control in controls:
            state = self.step(state, None if control is None else tape.variable(control))
            states.append(self.values(state))
        return tuple(states)


@dataclass(frozen=True, eq=False)
class BurgerSystem(ControlledSystem):
    """1D Burger's equation; the whole state is observed."""

    spec: GridSpec
    dt: float = 1.0
    nu: Optional[float] = None
    kind: str = field(default="burger", init=False)

    def __post_init__(self):
        if self.nu is None:
            object.__setattr__(self, "nu", default_viscosity(self.spec, self.dt))

    def observe(self, state: State) -> VarId:
        return state[0]

    def force(self, control: VarId) -> VarId:
        return control

    def step(self, state: State, control: Optional[VarId]) -> State:
        return (burger_update(state[0], control, self.dt, self.nu),)

    def zero_control(self) -> CenteredField:
        return CenteredField.zeros(self.spec)

    def rescaled(self, spec: GridSpec) -> "BurgerSystem":
        nu = self.nu * (spec.spacing[0] / self.spec.spacing[0]) ** 2
        return BurgerSystem(spec, self.dt, nu)


@dataclass(frozen=True, eq=False)
class FluidSystem(ControlledSystem):
    """2D smoke flow; only the density is observed."""

    domain: DomainSpec
    dt: float = 1.0
    control_mode: str = "stream"
    poisson: PoissonConfig = field(default_factory=PoissonConfig)
    kind: str = field(default="fluid", init=False)

    def __post_init__(self):
        if self.control_mode not in CONTROL_MODES:
            raise ConfigurationError(
                f"Unknown control mode {self.control_mode!r}; expected one of {CONTROL_MODES}"
            )

    @property
    def spec(self) -> GridSpec:  # type: ignore[override]
        return self.domain.spec

    def observe(self, state: State) -> VarId:
        return state[0]

    def force(self, control: VarId) -> VarId:
        if self.control_mode == "stream":
            return ops.sparse_apply(control, self.domain.stream_curl, StaggeredField, self.spec)
        return ops.mask(control, self.domain.control_faces)

    def step(self, state: State, control: Optional[VarId]) -> State:
        force = None if control is None else self.force(control)
        return fluid_update(state[0], state[1], force, self.domain, self.dt, self.poisson)

    def zero_control(self) -> Value:
        if self.control_mode == "stream":
            return CenteredField.zeros(self.spec)
        return StaggeredField.zeros(self.spec)

    def rescaled(self, spec: GridSpec) -> "FluidSystem":
        return FluidSystem(self.domain.scaled(spec), self.dt, self.control_mode, self.poisson)
