"""
Differential, interpolation, transport and blur operators on uniform grids.

Linear stencils are assembled once per ``GridSpec`` as ``scipy.sparse``
matrices acting on row-major flattened data, so the exact vector-Jacobian
product of each operator is the transposed matrix. Staggered vectors are
flattened by concatenating their components in axis order (see
``StaggeredField.flat``).

Boundary conventions:
    * gradient: boundary faces are 0
    * laplace: Neumann mirror (ghost cell equals the boundary cell)
    * interpolation and advection: lookups clamp to the boundary sample
    * blur: periodic
"""
from functools import lru_cache
from math import ceil
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from src.common.exceptions import ConfigurationError, ShapeMismatchError
from src.fields.grid import CenteredField, Field, GridSpec, StaggeredField
from src.fields.sampling import LinearSampler

# ---------------------------------------------------------------------------
# 1D building blocks
# ---------------------------------------------------------------------------


def backward_difference(n: int) -> sp.csr_matrix:
    """(n+1, n): face i gets x_i - x_{i-1}; the two boundary faces get 0."""
    rows = np.arange(1, n)
    data = np.concatenate([np.ones(n - 1), -np.ones(n - 1)])
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([rows, rows - 1]))), shape=(n + 1, n)
    )


def _forward_difference(n: int) -> sp.csr_matrix:
    """(n, n+1): cell i gets x_{i+1} - x_i."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr")


def _neumann_second_difference(n: int) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1], format="csr")


def _clamped_pair_average(n: int) -> sp.csr_matrix:
    """(n+1, n): sample i between cells i-1 and i, clamped at both ends."""
    rows = np.arange(n + 1)
    left = np.clip(rows - 1, 0, n - 1)
    right = np.clip(rows, 0, n - 1)
    data = np.full(2 * (n + 1), 0.5)
    return sp.csr_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([left, right]))), shape=(n + 1, n)
    )


def _pair_average(n: int) -> sp.csr_matrix:
    """(n, n+1): cell i gets the mean of faces i and i+1."""
    return sp.diags([np.full(n, 0.5), np.full(n, 0.5)], [0, 1], shape=(n, n + 1), format="csr")


def interpolation_matrix(n_src: int, n_dst: int) -> sp.csr_matrix:
    """
    Linear resampling between two cell-centred discretisations of one interval.

    Returns an ``(n_dst, n_src)`` matrix; destinations beyond the outermost
    source centres take the boundary value.
    """
    return _interpolation_matrix(int(n_src), int(n_dst))


@lru_cache(maxsize=256)
def _interpolation_matrix(n_src: int, n_dst: int) -> sp.csr_matrix:
    coords = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    return LinearSampler((n_src,), coords[:, None]).matrix()


def along_axis(block: sp.spmatrix, axis: int, shape: Sequence[int]) -> sp.csr_matrix:
    """Lift a 1D operator to act along ``axis`` of a row-major array of ``shape``."""
    factors = [sp.identity(n, format="csr") for n in shape]
    factors[axis] = sp.csr_matrix(block)
    matrix = factors[0]
    for factor in factors[1:]:
        matrix = sp.kron(matrix, factor, format="csr")
    return sp.csr_matrix(matrix)


# ---------------------------------------------------------------------------
# Assembled operators (cached per grid)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def gradient_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Centred (size) -> staggered (face_count)."""
    blocks = [
        along_axis(backward_difference(spec.dims[k]), k, spec.dims) / spec.spacing[k]
        for k in range(spec.rank)
    ]
    return sp.csr_matrix(sp.vstack(blocks))


@lru_cache(maxsize=64)
def divergence_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Staggered (face_count) -> centred (size)."""
    blocks = []
    for k in range(spec.rank):
        shape = list(spec.dims)
        shape[k] += 1
        blocks.append(along_axis(_forward_difference(spec.dims[k]), k, shape) / spec.spacing[k])
    return sp.csr_matrix(sp.hstack(blocks))


@lru_cache(maxsize=64)
def laplace_matrix(spec: GridSpec) -> sp.csr_matrix:
    matrix = sp.csr_matrix((spec.size, spec.size))
    for k in range(spec.rank):
        matrix = matrix + along_axis(
            _neumann_second_difference(spec.dims[k]), k, spec.dims
        ) / spec.spacing[k] ** 2
    return sp.csr_matrix(matrix)


@lru_cache(maxsize=64)
def curl_matrix(spec: GridSpec) -> sp.csr_matrix:
    """
    Centred stream function -> staggered velocity (2D only).

    The stream function is first averaged to grid nodes; face velocities are
    node differences, so the discrete divergence of the result vanishes.
    """
    return sp.csr_matrix(node_curl_matrix(spec) @ node_average_matrix(spec))


@lru_cache(maxsize=64)
def node_average_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Cell centres -> grid nodes ``(nx+1, ny+1)``, clamped at the walls (2D only)."""
    if spec.rank != 2:
        raise ShapeMismatchError(f"curl2d needs a 2D grid, got dims {spec.dims}")
    nx, ny = spec.dims
    return sp.kron(_clamped_pair_average(nx), _clamped_pair_average(ny), format="csr")


@lru_cache(maxsize=64)
def node_curl_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Node stream function -> staggered velocity; every image is divergence-free."""
    if spec.rank != 2:
        raise ShapeMismatchError(f"curl2d needs a 2D grid, got dims {spec.dims}")
    nx, ny = spec.dims
    dx, dy = spec.spacing
    vx = sp.kron(sp.identity(nx + 1), _forward_difference(ny), format="csr") / dy
    vy = -sp.kron(_forward_difference(nx), sp.identity(ny + 1), format="csr") / dx
    return sp.csr_matrix(sp.vstack([vx, vy]))


@lru_cache(maxsize=64)
def face_average_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Centred -> staggered by averaging the two adjacent cells (clamped at walls)."""
    blocks = [
        along_axis(_clamped_pair_average(spec.dims[k]), k, spec.dims) for k in range(spec.rank)
    ]
    return sp.csr_matrix(sp.vstack(blocks))


@lru_cache(maxsize=64)
def center_average_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Staggered -> ``rank`` stacked centred arrays (mean of the two faces)."""
    blocks = []
    for k in range(spec.rank):
        shape = list(spec.dims)
        shape[k] += 1
        blocks.append(along_axis(_pair_average(spec.dims[k]), k, shape))
    return sp.csr_matrix(sp.block_diag(blocks))


@lru_cache(maxsize=64)
def vector_face_matrix(spec: GridSpec) -> sp.csr_matrix:
    """``rank`` stacked centred arrays -> staggered (component ``k`` averaged along ``k``)."""
    blocks = [
        along_axis(_clamped_pair_average(spec.dims[k]), k, spec.dims) for k in range(spec.rank)
    ]
    return sp.csr_matrix(sp.block_diag(blocks))


@lru_cache(maxsize=64)
def resample_matrix(src: GridSpec, dst: GridSpec) -> sp.csr_matrix:
    """Separable linear resampling of centred data from ``src`` to ``dst``."""
    if src.rank != dst.rank:
        raise ShapeMismatchError(f"Cannot resample {src.dims} onto {dst.dims}")
    matrix = sp.csr_matrix(interpolation_matrix(src.dims[0], dst.dims[0]))
    for k in range(1, src.rank):
        matrix = sp.kron(matrix, interpolation_matrix(src.dims[k], dst.dims[k]), format="csr")
    return sp.csr_matrix(matrix)


@lru_cache(maxsize=32)
def _restriction_solver(fine: GridSpec, coarse: GridSpec):
    up = resample_matrix(coarse, fine)
    return factorized(sp.csc_matrix(up.T @ up))


# ---------------------------------------------------------------------------
# Field-level operators
# ---------------------------------------------------------------------------


def gradient(f: CenteredField) -> StaggeredField:
    return StaggeredField.from_flat(f.spec, gradient_matrix(f.spec) @ f.flat())


def divergence(v: StaggeredField) -> CenteredField:
    return CenteredField.from_flat(v.spec, divergence_matrix(v.spec) @ v.flat())


def laplace(f: CenteredField) -> CenteredField:
    return CenteredField.from_flat(f.spec, laplace_matrix(f.spec) @ f.flat())


def curl2d(phi: CenteredField) -> StaggeredField:
    """Divergence-free velocity ``(dphi/dy, -dphi/dx)`` on the faces."""
    return StaggeredField.from_flat(phi.spec, curl_matrix(phi.spec) @ phi.flat())


def centers_to_faces(f: CenteredField) -> StaggeredField:
    """Broadcast a scalar to every face component by two-cell averaging."""
    return StaggeredField.from_flat(f.spec, face_average_matrix(f.spec) @ f.flat())


def faces_to_centers(v: StaggeredField) -> Tuple[CenteredField, ...]:
    stacked = (center_average_matrix(v.spec) @ v.flat()).reshape((v.spec.rank, v.spec.size))
    return tuple(CenteredField.from_flat(v.spec, row) for row in stacked)


def vectors_to_faces(components: Sequence[CenteredField]) -> StaggeredField:
    """Cell-centred vector components -> staggered field (component ``k`` averaged along ``k``)."""
    spec = components[0].spec
    if len(components) != spec.rank:
        raise ShapeMismatchError(f"Need {spec.rank} components, got {len(components)}")
    stacked = np.concatenate([c.flat() for c in components])
    return StaggeredField.from_flat(spec, vector_face_matrix(spec) @ stacked)


def resample(f: CenteredField, spec: GridSpec) -> CenteredField:
    """Linear resampling onto another discretisation of the same box."""
    return CenteredField.from_flat(spec, resample_matrix(f.spec, spec) @ f.flat())


def upsample(f: CenteredField, spec: GridSpec) -> CenteredField:
    return resample(f, spec)


def downsample(f: CenteredField, spec: GridSpec) -> CenteredField:
    """
    Least-squares restriction onto a coarser grid.

    This is the left inverse of :func:`upsample`, so ``downsample(upsample(c))``
    reproduces ``c``.
    """
    up = resample_matrix(spec, f.spec)
    solve = _restriction_solver(f.spec, spec)
    return CenteredField.from_flat(spec, solve(up.T @ f.flat()))


# ---------------------------------------------------------------------------
# Interpolation and semi-Lagrangian advection
# ---------------------------------------------------------------------------


def index_coords(spec: GridSpec, points: np.ndarray, face_axis: Optional[int] = None) -> np.ndarray:
    """
    Physical points -> fractional array indices.

    ``face_axis=None`` addresses cell-centred arrays; ``face_axis=k`` addresses
    staggered component ``k``.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, spec.rank)
    origin = np.array(spec.origin)
    spacing = np.array(spec.spacing)
    offsets = np.array([0.0 if k == face_axis else 0.5 for k in range(spec.rank)])
    return (points - origin) / spacing - offsets


def _sample_layouts(f: Field):
    """(array, face_axis, sample points) for every array of ``f``."""
    if isinstance(f, CenteredField):
        return [(f.data, None, f.spec.cell_centers().reshape(-1, f.spec.rank))]
    return [
        (component, k, f.spec.face_centers(k).reshape(-1, f.spec.rank))
        for k, component in enumerate(f.components)
    ]


def interpolate_linear(f: Field, points) -> np.ndarray:
    """
    Multilinear interpolation of ``f`` at physical ``points``.

    Returns shape ``(m,)`` for centred fields and ``(m, rank)`` for staggered
    fields (one column per component).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, f.spec.rank)
    columns = [
        LinearSampler(array.shape, index_coords(f.spec, points, axis)).gather(array)
        for array, axis, _ in _sample_layouts(f)
    ]
    if isinstance(f, CenteredField):
        return columns[0]
    return np.stack(columns, axis=-1)


Velocity = Union[StaggeredField, CenteredField]


def _velocity_arrays(v: Velocity):
    if isinstance(v, StaggeredField):
        return [(c, k) for k, c in enumerate(v.components)]
    if v.spec.rank != 1:
        raise ShapeMismatchError("A cell-centred velocity is only valid on 1D grids")
    return [(v.data, None)]


class AdvectionPlan:
    """
    Back-traced sample locations of one semi-Lagrangian step.

    Holds every interpolation weight needed for the forward evaluation and for
    the vector-Jacobian products with respect to the advected quantity and the
    velocity.
    """

    def __init__(self, template: Field, v: Velocity, dt: float):
        if template.spec != v.spec:
            raise ShapeMismatchError("Advected field and velocity live on different grids")
        if dt < 0:
            raise ConfigurationError(f"dt must be >= 0, got {dt}")
        self.spec = template.spec
        self.dt = float(dt)
        self.centered = isinstance(template, CenteredField)
        self._velocity_arrays = _velocity_arrays(v)
        self._targets = []
        for array, axis, points in _sample_layouts(template):
            velocity_samplers = [
                LinearSampler(varray.shape, index_coords(self.spec, points, vaxis))
                for varray, vaxis in self._velocity_arrays
            ]
            pairs = zip(velocity_samplers, self._velocity_arrays)
            velocity = np.stack([s.gather(varray) for s, (varray, _) in pairs], axis=-1)
            origins = points - self.dt * velocity
            source = LinearSampler(array.shape, index_coords(self.spec, origins, axis))
            self._targets.append((array.shape, source, velocity_samplers))

    def _arrays(self, f: Field):
        return [f.data] if isinstance(f, CenteredField) else list(f.components)

    def apply(self, f: Field) -> Field:
        values = [
            source.gather(array).reshape(shape)
            for array, (shape, source, _) in zip(self._arrays(f), self._targets)
        ]
        if self.centered:
            return CenteredField(self.spec, values[0])
        return StaggeredField(self.spec, tuple(values))

    def vjp(self, f: Field, cotangent: Field) -> Tuple[Field, Velocity]:
        """Cotangents for ``(f, v)`` given the output cotangent."""
        spacing = np.array(self.spec.spacing)
        grad_f = []
        grad_v = [np.zeros(varray.shape) for varray, _ in self._velocity_arrays]
        for array, cot, (shape, source, velocity_samplers) in zip(
            self._arrays(f), self._arrays(cotangent), self._targets
        ):
            cot = np.asarray(cot).ravel()
            grad_f.append(source.scatter(cot).reshape(shape))
            coord_grad = source.coord_grad(array)
            for c, sampler in enumerate(velocity_samplers):
                grad_velocity = -self.dt / spacing[c] * cot * coord_grad[:, c]
                grad_v[c] += sampler.scatter(grad_velocity)
        if self.centered:
            f_bar: Field = CenteredField(self.spec, grad_f[0])
        else:
            f_bar = StaggeredField(self.spec, tuple(grad_f))
        if self._velocity_arrays[0][1] is None:
            v_bar: Velocity = CenteredField(self.spec, grad_v[0])
        else:
            v_bar = StaggeredField(self.spec, tuple(grad_v))
        return f_bar, v_bar


def advect(f: Field, v: Velocity, dt: float) -> Field:
    """Semi-Lagrangian transport of ``f`` along ``v`` over ``dt``."""
    if dt == 0:
        return f
    return AdvectionPlan(f, v, dt).apply(f)


# ---------------------------------------------------------------------------
# Blur
# ---------------------------------------------------------------------------


def blur_kernel(rank: int, r: float) -> np.ndarray:
    """
    Normalised kernel ``1 / (1 + d/r)`` on a ``(2R+1)^rank`` stencil, ``R = ceil(4r)``.

    Weights with cell distance ``d > R`` are 0.
    """
    radius = int(ceil(4 * r))
    offsets = np.arange(-radius, radius + 1)
    mesh = np.meshgrid(*([offsets] * rank), indexing="ij")
    distance = np.sqrt(sum(m.astype(np.float64) ** 2 for m in mesh))
    kernel = np.where(distance <= radius, 1.0 / (1.0 + distance / r), 0.0)
    return kernel / kernel.sum()


@lru_cache(maxsize=64)
def _blur_transfer(dims: Tuple[int, ...], r: float) -> np.ndarray:
    kernel = blur_kernel(len(dims), r)
    radius = (kernel.shape[0] - 1) // 2
    folded = np.zeros(dims)
    offsets = np.arange(-radius, radius + 1)
    index = np.meshgrid(*[offsets % n for n in dims], indexing="ij")
    np.add.at(folded, tuple(index), kernel)
    return np.fft.rfftn(folded)


def blur(f: CenteredField, r: Optional[float]) -> CenteredField:
    """
    Periodic convolution with :func:`blur_kernel`.

    ``r`` of ``None`` or 0 returns ``f`` unchanged. The kernel is symmetric, so
    the operator is self-adjoint.
    """
    if r is None or r == 0:
        return f
    if r < 0:
        raise ConfigurationError(f"Blur radius must be >= 0, got {r}")
    transfer = _blur_transfer(f.spec.dims, float(r))
    data = np.fft.irfftn(np.fft.rfftn(f.data) * transfer, s=f.spec.dims)
    return f.with_data(data)
