"""
Uniform-grid field containers.

``CenteredField`` holds one value per cell centre, ``StaggeredField`` holds
one array per axis with component ``k`` sampled on the faces normal to axis
``k`` (MAC layout). Arrays are indexed ``[axis0, axis1, ...]``; in 2D axis 0
is ``x`` and axis 1 is ``y`` (``+y`` is up).

Values are immutable: constructors copy the input and mark it read-only.
"""
from dataclasses import dataclass, field
from functools import reduce
from operator import mul
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from src.common.exceptions import DivergenceError, ShapeMismatchError

Scalar = Union[int, float]


def _frozen_copy(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridSpec:
    """Discretisation of a box domain into ``dims`` cells of size ``spacing``."""

    dims: Tuple[int, ...]
    spacing: Tuple[float, ...] = field(default=())
    origin: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (1, 2):
            raise ShapeMismatchError(f"Only 1D and 2D grids are supported, got {dims}")
        if any(d < 2 for d in dims):
            raise ShapeMismatchError(f"All grid dims must be >= 2, got {dims}")
        spacing = tuple(float(s) for s in self.spacing) or (1.0,) * len(dims)
        origin = tuple(float(o) for o in self.origin) or (0.0,) * len(dims)
        if len(spacing) != len(dims) or len(origin) != len(dims):
            raise ShapeMismatchError("spacing and origin must have one entry per axis")
        if any(s <= 0 for s in spacing):
            raise ShapeMismatchError(f"All spacings must be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return reduce(mul, self.dims, 1)

    @property
    def cell_volume(self) -> float:
        return reduce(mul, self.spacing, 1.0)

    def face_shape(self, axis: int) -> Tuple[int, ...]:
        """Array shape of the staggered component normal to ``axis``."""
        shape = list(self.dims)
        shape[axis] += 1
        return tuple(shape)

    @property
    def face_count(self) -> int:
        return sum(reduce(mul, self.face_shape(k), 1) for k in range(self.rank))

    def cell_centers(self) -> np.ndarray:
        """Physical cell-centre coordinates, shape ``dims + (rank,)``."""
        return self._sample_points(self.dims, offsets=(0.5,) * self.rank)

    def face_centers(self, axis: int) -> np.ndarray:
        """Physical face-centre coordinates of component ``axis``."""
        offsets = tuple(0.0 if k == axis else 0.5 for k in range(self.rank))
        return self._sample_points(self.face_shape(axis), offsets)

    def _sample_points(self, shape: Sequence[int], offsets: Sequence[float]) -> np.ndarray:
        axes = [
            self.origin[k] + (np.arange(n) + offsets[k]) * self.spacing[k]
            for k, n in enumerate(shape)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def scaled(self, factor: float) -> "GridSpec":
        """Same physical box discretised with ``dims * factor`` cells."""
        dims = tuple(max(2, int(round(d * factor))) for d in self.dims)
        extent = [d * s for d, s in zip(self.dims, self.spacing)]
        spacing = tuple(e / d for e, d in zip(extent, dims))
        return GridSpec(dims, spacing, self.origin)


def _is_scalar(value) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) or (
        isinstance(value, np.ndarray) and value.ndim == 0
    )


def _check_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise DivergenceError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class CenteredField:
    """Scalar field sampled at cell centres."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = _frozen_copy(self.data)
        if data.size != self.spec.size:
            raise ShapeMismatchError(
                f"CenteredField data has {data.size} values, grid needs {self.spec.size}"
            )
        data = data.reshape(self.spec.dims)
        data.setflags(write=False)
        _check_finite(data, "CenteredField")
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "CenteredField":
        return cls(spec, np.zeros(spec.dims))

    @classmethod
    def full(cls, spec: GridSpec, value: float) -> "CenteredField":
        return cls(spec, np.full(spec.dims, float(value)))

    def with_data(self, data) -> "CenteredField":
        return CenteredField(self.spec, data)

    def _other_data(self, other) -> np.ndarray:
        if isinstance(other, CenteredField):
            if other.spec != self.spec:
                raise ShapeMismatchError("CenteredField operands live on different grids")
            return other.data
        if _is_scalar(other):
            return float(other)
        raise TypeError(f"Unsupported operand {type(other).__name__}")

    def __add__(self, other) -> "CenteredField":
        return self.with_data(self.data + self._other_data(other))

    __radd__ = __add__

    def __sub__(self, other) -> "CenteredField":
        return self.with_data(self.data - self._other_data(other))

    def __rsub__(self, other) -> "CenteredField":
        return self.with_data(self._other_data(other) - self.data)

    def __mul__(self, other) -> "CenteredField":
        return self.with_data(self.data * self._other_data(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "CenteredField":
        return self.with_data(self.data / float(other))

    def __neg__(self) -> "CenteredField":
        return self.with_data(-self.data)

    def vdot(self, other: "CenteredField") -> float:
        return float(np.vdot(self.data, self._other_data(other)))

    def flat(self) -> np.ndarray:
        return self.data.ravel()

    @classmethod
    def from_flat(cls, spec: GridSpec, vector: np.ndarray) -> "CenteredField":
        return cls(spec, np.asarray(vector).reshape(spec.dims))

    def total(self) -> float:
        return float(self.data.sum())


@dataclass(frozen=True, eq=False)
class StaggeredField:
    """Vector field with component ``k`` sampled on faces normal to axis ``k``."""

    spec: GridSpec
    components: Tuple[np.ndarray, ...]

    def __post_init__(self):
        components = tuple(self.components)
        if len(components) != self.spec.rank:
            raise ShapeMismatchError(
                f"StaggeredField needs {self.spec.rank} components, got {len(components)}"
            )
        frozen = []
        for axis, component in enumerate(components):
            array = _frozen_copy(component)
            shape = self.spec.face_shape(axis)
            if array.size != reduce(mul, shape, 1):
                raise ShapeMismatchError(
                    f"Component {axis} has {array.size} values, expected shape {shape}"
                )
            array = array.reshape(shape)
            array.setflags(write=False)
            _check_finite(array, f"StaggeredField component {axis}")
            frozen.append(array)
        object.__setattr__(self, "components", tuple(frozen))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "StaggeredField":
        return cls(spec, tuple(np.zeros(spec.face_shape(k)) for k in range(spec.rank)))

    @classmethod
    def uniform(cls, spec: GridSpec, vector: Sequence[float]) -> "StaggeredField":
        return cls(
            spec, tuple(np.full(spec.face_shape(k), float(vector[k])) for k in range(spec.rank))
        )

    def with_components(self, components: Iterable[np.ndarray]) -> "StaggeredField":
        return StaggeredField(self.spec, tuple(components))

    def _other_components(self, other) -> Tuple:
        if isinstance(other, StaggeredField):
            if other.spec != self.spec:
                raise ShapeMismatchError("StaggeredField operands live on different grids")
            return other.components
        if _is_scalar(other):
            return (float(other),) * self.spec.rank
        raise TypeError(f"Unsupported operand {type(other).__name__}")

    def __add__(self, other) -> "StaggeredField":
        return self.with_components(
            a + b for a, b in zip(self.components, self._other_components(other))
        )

    __radd__ = __add__

    def __sub__(self, other) -> "StaggeredField":
        return self.with_components(
            a - b for a, b in zip(self.components, self._other_components(other))
        )

    def __rsub__(self, other) -> "StaggeredField":
        return -(self - other)

    def __mul__(self, other) -> "StaggeredField":
        return self.with_components(
            a * b for a, b in zip(self.components, self._other_components(other))
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> "StaggeredField":
        return self.with_components(a / float(other) for a in self.components)

    def __neg__(self) -> "StaggeredField":
        return self.with_components(-a for a in self.components)

    def vdot(self, other: "StaggeredField") -> float:
        return float(
            sum(np.vdot(a, b) for a, b in zip(self.components, self._other_components(other)))
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([c.ravel() for c in self.components])

    @classmethod
    def from_flat(cls, spec: GridSpec, vector: np.ndarray) -> "StaggeredField":
        vector = np.asarray(vector)
        if vector.size != spec.face_count:
            raise ShapeMismatchError(
                f"Flat staggered vector has {vector.size} values, grid needs {spec.face_count}"
            )
        components, start = [], 0
        for axis in range(spec.rank):
            shape = spec.face_shape(axis)
            count = reduce(mul, shape, 1)
            components.append(vector[start:start + count].reshape(shape))
            start += count
        return cls(spec, tuple(components))

    def max_abs(self) -> float:
        return max(float(np.abs(c).max()) for c in self.components)


Field = Union[CenteredField, StaggeredField]


def zeros_like(value: Field) -> Field:
    """Zero field of the same kind and grid as ``value``."""
    if isinstance(value, CenteredField):
        return CenteredField.zeros(value.spec)
    return StaggeredField.zeros(value.spec)
