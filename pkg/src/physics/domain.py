"""
Simulation domains, states and solver configuration.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from config.settings import settings
from src.common.exceptions import ConfigurationError, ShapeMismatchError
from src.fields import operators as fops
from src.fields.grid import CenteredField, GridSpec, StaggeredField

CLOSED = "closed"
OPEN = "open"

Boundaries = Tuple[Tuple[str, str], ...]


@dataclass(frozen=True)
class PoissonConfig:
    """Conjugate-gradient settings for the pressure solve."""

    tolerance: float = field(default_factory=lambda: settings.solver.cg_tolerance)
    max_iterations: int = field(default_factory=lambda: settings.solver.cg_max_iterations)

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigurationError(f"CG tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigurationError(f"CG max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class BurgerState:
    u: CenteredField
    time: int = 0


@dataclass(frozen=True)
class FluidState:
    density: CenteredField
    velocity: StaggeredField
    time: int = 0

    def __post_init__(self):
        if self.density.spec != self.velocity.spec:
            raise ShapeMismatchError("Density and velocity must share one grid")


def _bool_mask(spec: GridSpec, mask: Optional[np.ndarray], name: str) -> np.ndarray:
    if mask is None:
        out = np.zeros(spec.dims, dtype=bool)
    else:
        out = np.asarray(mask, dtype=bool).copy()
        if out.shape != spec.dims:
            raise ShapeMismatchError(f"{name} mask has shape {out.shape}, grid is {spec.dims}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """
    Boundary conditions, obstacles, control region and buoyancy of a 2D box.

    ``boundaries[k]`` holds the (lower, upper) side kinds along axis ``k``.
    Closed sides are no-through-flow walls; open sides have ``p = 0`` outside.
    Without an explicit control mask every fluid cell is controllable.
    """

    spec: GridSpec
    boundaries: Boundaries = ()
    obstacle: Optional[np.ndarray] = None
    control: Optional[np.ndarray] = None
    buoyancy: Tuple[float, ...] = field(default_factory=lambda: tuple(settings.solver.buoyancy))

    def __post_init__(self):
        boundaries = tuple(tuple(side) for side in self.boundaries)
        boundaries = boundaries or ((CLOSED, CLOSED),) * self.spec.rank
        if len(boundaries) != self.spec.rank or any(
            kind not in (CLOSED, OPEN) for side in boundaries for kind in side
        ):
            raise ConfigurationError(f"Invalid boundary specification {boundaries}")
        obstacle = _bool_mask(self.spec, self.obstacle, "obstacle")
        if self.control is None:
            control = ~obstacle
            control.setflags(write=False)
        else:
            control = _bool_mask(self.spec, self.control, "control")
        if np.any(obstacle & control):
            raise ConfigurationError("Obstacle and control masks overlap")
        buoyancy = tuple(float(b) for b in self.buoyancy)[: self.spec.rank]
        buoyancy = buoyancy + (0.0,) * (self.spec.rank - len(buoyancy))
        object.__setattr__(self, "boundaries", boundaries)
        object.__setattr__(self, "obstacle", obstacle)
        object.__setattr__(self, "control", control)
        object.__setattr__(self, "buoyancy", buoyancy)

    @classmethod
    def closed_box(cls, spec: GridSpec, **kwargs) -> "DomainSpec":
        return cls(spec, ((CLOSED, CLOSED),) * spec.rank, **kwargs)

    @classmethod
    def open_top(cls, spec: GridSpec, **kwargs) -> "DomainSpec":
        """Closed box whose upper ``y`` side is open."""
        return cls(spec, ((CLOSED, CLOSED), (CLOSED, OPEN)), **kwargs)

    @property
    def has_open_side(self) -> bool:
        return any(kind == OPEN for side in self.boundaries for kind in side)

    @cached_property
    def fluid(self) -> CenteredField:
        """1 in fluid cells, 0 inside obstacles."""
        return CenteredField(self.spec, (~self.obstacle).astype(np.float64))

    @cached_property
    def open_faces(self) -> StaggeredField:
        """1 on faces that fluid may cross, 0 on closed walls and obstacle faces."""
        components = []
        for k in range(self.spec.rank):
            mask = np.ones(self.spec.face_shape(k))
            lower, upper = self.boundaries[k]
            edge = [slice(None)] * self.spec.rank
            if lower == CLOSED:
                edge[k] = 0
                mask[tuple(edge)] = 0.0
            if upper == CLOSED:
                edge[k] = -1
                mask[tuple(edge)] = 0.0
            blocked = self._touching(self.obstacle, k)
            mask[blocked] = 0.0
            components.append(mask)
        return StaggeredField(self.spec, tuple(components))

    @cached_property
    def control_faces(self) -> StaggeredField:
        """1 on faces adjacent to at least one control cell."""
        components = (self._touching(self.control, k) for k in range(self.spec.rank))
        return StaggeredField(self.spec, tuple(c.astype(np.float64) for c in components))

    @cached_property
    def stream_nodes(self) -> np.ndarray:
        """Grid nodes whose surrounding in-domain cells are all controllable (2D)."""
        padded = np.pad(self.control, 1, constant_values=True)
        return padded[:-1, :-1] & padded[1:, :-1] & padded[:-1, 1:] & padded[1:, 1:]

    @cached_property
    def stream_curl(self) -> sp.csr_matrix:
        """
        Stream function -> force, restricted to the control region.

        The stream function is averaged to nodes and zeroed outside
        ``stream_nodes`` before the curl, so the force stays divergence-free
        and vanishes on faces that touch no control cell.
        """
        keep = sp.diags(self.stream_nodes.ravel().astype(np.float64))
        curl = fops.node_curl_matrix(self.spec)
        return sp.csr_matrix(curl @ keep @ fops.node_average_matrix(self.spec))

    def _touching(self, cells: np.ndarray, axis: int) -> np.ndarray:
        out = np.zeros(self.spec.face_shape(axis), dtype=bool)
        lower = [slice(None)] * self.spec.rank
        upper = [slice(None)] * self.spec.rank
        lower[axis] = slice(0, -1)
        upper[axis] = slice(1, None)
        out[tuple(lower)] |= cells
        out[tuple(upper)] |= cells
        return out

    @cached_property
    def boundary_gradient(self) -> sp.csr_matrix:
        """Gradient with ``p = 0`` ghost cells beyond open sides."""
        blocks = []
        for k in range(self.spec.rank):
            n = self.spec.dims[k]
            block = sp.lil_matrix(fops.backward_difference(n))
            lower, upper = self.boundaries[k]
            if lower == OPEN:
                block[0, 0] = 1.0
            if upper == OPEN:
                block[n, n - 1] = -1.0
            blocks.append(fops.along_axis(block.tocsr(), k, self.spec.dims) / self.spec.spacing[k])
        return sp.csr_matrix(sp.vstack(blocks))

    @cached_property
    def masked_gradient(self) -> sp.csr_matrix:
        """``M @ G_b``: the pressure-gradient map applied during projection."""
        return sp.csr_matrix(sp.diags(self.open_faces.flat()) @ self.boundary_gradient)

    @cached_property
    def poisson_matrix(self) -> sp.csr_matrix:
        """Symmetric positive semi-definite ``-(D M G_b)``."""
        return sp.csr_matrix(-(fops.divergence_matrix(self.spec) @ self.masked_gradient))

    @cached_property
    def fluid_poisson_matrix(self) -> sp.csr_matrix:
        """``poisson_matrix`` restricted to non-obstacle cells."""
        fluid = ~self.obstacle.ravel()
        return sp.csr_matrix(self.poisson_matrix[fluid][:, fluid])

    def scaled(self, spec: GridSpec) -> "DomainSpec":
        """Same domain on another resolution; masks are resampled and thresholded."""
        resample = fops.resample_matrix(self.spec, spec)

        def remap(mask: np.ndarray) -> np.ndarray:
            return (resample @ mask.astype(np.float64).ravel()).reshape(spec.dims) > 0.5

        obstacle = remap(self.obstacle)
        control = remap(self.control) & ~obstacle
        return DomainSpec(spec, self.boundaries, obstacle, control, self.buoyancy)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "boundaries": [list(side) for side in self.boundaries],
            "buoyancy": list(self.buoyancy),
            "obstacle_cells": np.argwhere(self.obstacle).tolist(),
            "control_cells": np.argwhere(self.control).tolist(),
        }

    @classmethod
    def from_dict(cls, spec: GridSpec, payload: Dict[str, Any]) -> "DomainSpec":
        def cells(key: str) -> np.ndarray:
            mask = np.zeros(spec.dims, dtype=bool)
            for index in payload.get(key, []):
                mask[tuple(index)] = True
            return mask

        return cls(
            spec,
            tuple(tuple(side) for side in payload.get("boundaries", ())),
            cells("obstacle_cells"),
            cells("control_cells"),
            tuple(payload.get("buoyancy", settings.solver.buoyancy)),
        )
