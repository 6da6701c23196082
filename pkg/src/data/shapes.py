"""
Ten parametric 2D shapes rasterised to density indicators.

``size`` is the extent of the shape in physical units; every shape has a
half-extent of ``size / 2`` around its centre and thin parts at least one
cell wide, so a shape with ``size >= 4`` cells always covers some cell
centres.
"""
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from src.common.exceptions import ConfigurationError, ShapeMismatchError
from src.fields.grid import CenteredField, GridSpec

Indicator = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def _thin(h: float, fraction: float) -> float:
    return max(1.0, h * fraction)


def _disk(dx, dy, h):
    return dx ** 2 + dy ** 2 <= h ** 2


def _square(dx, dy, h):
    return (np.abs(dx) <= h) & (np.abs(dy) <= h)


def _rectangle(dx, dy, h):
    return (np.abs(dx) <= h) & (np.abs(dy) <= _thin(h, 0.5))


def _triangle(dx, dy, h):
    return (dy >= -h) & (dy <= h) & (np.abs(dx) <= (h - dy) / 2.0)


def _diamond(dx, dy, h):
    return np.abs(dx) + np.abs(dy) <= h


def _ring(dx, dy, h):
    r2 = dx ** 2 + dy ** 2
    return (r2 <= h ** 2) & (r2 >= (0.5 * h) ** 2)


def _cross(dx, dy, h):
    t = _thin(h, 1.0 / 3.0)
    return ((np.abs(dx) <= t) & (np.abs(dy) <= h)) | ((np.abs(dy) <= t) & (np.abs(dx) <= h))


def _l_shape(dx, dy, h):
    t = _thin(h, 1.0 / 3.0)
    foot = (np.abs(dx) <= h) & (dy >= -h) & (dy <= -h + 2 * t)
    leg = (dx >= -h) & (dx <= -h + 2 * t) & (np.abs(dy) <= h)
    return foot | leg


def _bar_horizontal(dx, dy, h):
    return (np.abs(dx) <= h) & (np.abs(dy) <= _thin(h, 0.25))


def _bar_vertical(dx, dy, h):
    return (np.abs(dy) <= h) & (np.abs(dx) <= _thin(h, 0.25))


class ShapeLibrary:
    """Named shape indicators plus random placement inside a 2D box."""

    SHAPES: Dict[str, Indicator] = {
        "disk": _disk,
        "square": _square,
        "rectangle": _rectangle,
        "triangle": _triangle,
        "diamond": _diamond,
        "ring": _ring,
        "cross": _cross,
        "l_shape": _l_shape,
        "bar_horizontal": _bar_horizontal,
        "bar_vertical": _bar_vertical,
    }

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(cls.SHAPES)

    @classmethod
    def rasterize(
        cls, name: str, spec: GridSpec, center: Sequence[float], size: float
    ) -> np.ndarray:
        """0/1 indicator of shape ``name`` centred at ``center``."""
        if spec.rank != 2:
            raise ShapeMismatchError(f"Shapes need a 2D grid, got dims {spec.dims}")
        if name not in cls.SHAPES:
            raise ConfigurationError(f"Unknown shape {name!r}; expected one of {cls.names()}")
        if size <= 0:
            raise ConfigurationError(f"Shape size must be > 0, got {size}")
        points = spec.cell_centers()
        dx = points[..., 0] - center[0]
        dy = points[..., 1] - center[1]
        return cls.SHAPES[name](dx, dy, size / 2.0).astype(np.float64)

    @staticmethod
    def placement_bounds(spec: GridSpec, size: float) -> Tuple[np.ndarray, np.ndarray]:
        """Centre range keeping the shape clear of the outermost cell ring."""
        extent = np.array(spec.dims) * np.array(spec.spacing)
        margin = size / 2.0 + 1.5 * np.array(spec.spacing)
        low = np.array(spec.origin) + margin
        high = np.array(spec.origin) + extent - margin
        if np.any(high < low):
            raise ConfigurationError(f"Shape of size {size} does not fit grid {spec.dims}")
        return low, high

    @classmethod
    def sample(
        cls,
        rng: np.random.Generator,
        spec: GridSpec,
        size_range: Tuple[float, float],
        mass: float,
        name: str = None,
    ) -> Tuple[CenteredField, Dict[str, object]]:
        """
        Random shape, size and position; the density is scaled to total ``mass``
        (sum of cell values times cell volume).
        """
        name = name or cls.names()[int(rng.integers(len(cls.SHAPES)))]
        size = float(rng.uniform(*size_range))
        low, high = cls.placement_bounds(spec, size)
        center = rng.uniform(low, high)
        indicator = cls.rasterize(name, spec, center, size)
        density = normalize_mass(indicator, mass, spec.cell_volume)
        meta = {"shape": name, "size": size, "center": center.tolist()}
        return CenteredField(spec, density), meta


def normalize_mass(density: np.ndarray, mass: float, cell_volume: float = 1.0) -> np.ndarray:
    total = float(density.sum()) * cell_volume
    if total <= 0:
        raise ConfigurationError("Cannot normalise an empty density")
    return density * (mass / total)
