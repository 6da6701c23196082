"""
Differentiable primitives.

Each function takes ``VarId`` handles, records one node on their tape and
returns the ``VarId`` of the result. Values may be ``CenteredField``,
``StaggeredField`` or ``np.ndarray``; network tensors are channel-first
arrays ``(channels, *spatial)``.
"""
from itertools import product, repeat
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.autodiff.tape import Primitive, Value, VarId
from src.common.exceptions import ShapeMismatchError, TapeError
from src.fields import operators as fops
from src.fields.grid import CenteredField, GridSpec, StaggeredField

# ---------------------------------------------------------------------------
# Value helpers
# ---------------------------------------------------------------------------


def _map(value: Value, fn: Callable[[np.ndarray], np.ndarray]) -> Value:
    if isinstance(value, CenteredField):
        return value.with_data(fn(value.data))
    if isinstance(value, StaggeredField):
        return value.with_components(fn(c) for c in value.components)
    return np.asarray(fn(np.asarray(value)))


def _map2(a: Value, b: Value, fn) -> Value:
    if isinstance(a, CenteredField):
        return a.with_data(fn(a.data, _data(b)))
    if isinstance(a, StaggeredField):
        return a.with_components(fn(x, y) for x, y in zip(a.components, _components(b)))
    return np.asarray(fn(np.asarray(a), np.asarray(b)))


def _data(value) -> np.ndarray:
    return value.data if isinstance(value, CenteredField) else np.asarray(value)


def _components(value):
    if isinstance(value, StaggeredField):
        return value.components
    return repeat(value)


def _total(value: Value) -> float:
    if isinstance(value, StaggeredField):
        return float(sum(c.sum() for c in value.components))
    return float(np.sum(_data(value)))


def _count(value: Value) -> int:
    if isinstance(value, CenteredField):
        return value.spec.size
    if isinstance(value, StaggeredField):
        return value.spec.face_count
    return int(np.asarray(value).size)


def _fill_like(value: Value, s: float) -> Value:
    return _map(value, lambda a: np.full(a.shape, float(s)))


def _same_kind(a: Value, b: Value, op: str) -> None:
    if type(a) is not type(b):
        kinds = f"{type(a).__name__}, {type(b).__name__}"
        raise ShapeMismatchError(f"{op}: operand kinds differ ({kinds})")
    if isinstance(a, (CenteredField, StaggeredField)) and a.spec != b.spec:
        raise ShapeMismatchError(f"{op}: operands live on different grids")
    if isinstance(a, np.ndarray) and a.shape != b.shape and a.ndim and b.ndim:
        raise ShapeMismatchError(f"{op}: array shapes {a.shape} and {b.shape} differ")


def _unbroadcast(cot: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if cot.shape == shape:
        return cot
    return np.asarray(cot.sum()) if shape == () else cot


def _tape(*vars_) -> "object":
    tapes = {id(v.tape): v.tape for v in vars_ if isinstance(v, VarId)}
    if len(tapes) != 1:
        raise TapeError("Operands must be recorded on exactly one tape")
    return next(iter(tapes.values()))


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------


def _add(a, b):
    _same_kind(a, b, "add")
    shape_a, shape_b = np.shape(_data(a)), np.shape(_data(b))
    return _map2(a, b, np.add), lambda c: (
        _map(c, lambda x: _unbroadcast(x, shape_a)) if isinstance(a, np.ndarray) else c,
        _map(c, lambda x: _unbroadcast(x, shape_b)) if isinstance(b, np.ndarray) else c,
    )


def _sub(a, b):
    _, add_vjp = _add(a, b)

    def vjp(c):
        ga, gb = add_vjp(c)
        return ga, _map(gb, np.negative)

    return _map2(a, b, np.subtract), vjp


def _mul(a, b):
    _same_kind(a, b, "mul")
    shape_a, shape_b = np.shape(_data(a)), np.shape(_data(b))
    return _map2(a, b, np.multiply), lambda c: (
        _map(_map2(c, b, np.multiply), lambda x: _unbroadcast(x, shape_a)),
        _map(_map2(c, a, np.multiply), lambda x: _unbroadcast(x, shape_b)),
    )


ADD = Primitive("add", _add)
SUB = Primitive("sub", _sub)
MUL = Primitive("mul", _mul)
NEG = Primitive("neg", lambda a: (_map(a, np.negative), lambda c: (_map(c, np.negative),)))
SCALE = Primitive(
    "scale", lambda a, k: (_map(a, lambda x: x * k), lambda c: (_map(c, lambda x: x * k),))
)
ADD_CONST = Primitive("add_const", lambda a, const: (_map2(a, const, np.add), lambda c: (c,)))
MUL_CONST = Primitive(
    "mul_const",
    lambda a, const: (_map2(a, const, np.multiply), lambda c: (_map2(c, const, np.multiply),)),
)


def add(a: VarId, b) -> VarId:
    if isinstance(b, VarId):
        return a.tape.record(ADD, a, b)
    if isinstance(b, (int, float)):
        return a.tape.record(ADD_CONST, a, const=float(b))
    return a.tape.record(ADD_CONST, a, const=b)


def sub(a: VarId, b) -> VarId:
    if isinstance(b, VarId):
        return a.tape.record(SUB, a, b)
    if isinstance(b, (int, float)):
        return a.tape.record(ADD_CONST, a, const=-float(b))
    return a.tape.record(ADD_CONST, a, const=_map(b, np.negative))


def mul(a: VarId, b) -> VarId:
    if isinstance(b, VarId):
        return a.tape.record(MUL, a, b)
    if isinstance(b, (int, float, np.floating)):
        return scale(a, float(b))
    return mask(a, b)


def neg(a: VarId) -> VarId:
    return a.tape.record(NEG, a)


def scale(a: VarId, k: float) -> VarId:
    return a.tape.record(SCALE, a, k=float(k))


def mask(a: VarId, const: Value) -> VarId:
    """Multiply by a constant of the same kind (e.g. a 0/1 region mask)."""
    return a.tape.record(MUL_CONST, a, const=const)


# ---------------------------------------------------------------------------
# Reductions and pointwise nonlinearities
# ---------------------------------------------------------------------------


def _sum(a):
    return np.asarray(_total(a)), lambda c: (_fill_like(a, float(c)),)


def _mean(a):
    n = _count(a)
    return np.asarray(_total(a) / n), lambda c: (_fill_like(a, float(c) / n),)


def _sum_squares(a):
    squared = _total(_map(a, np.square))
    return np.asarray(squared), lambda c: (_map(a, lambda x: 2.0 * float(c) * x),)


def _clamp_min(a, lo):
    return _map(a, lambda x: np.maximum(x, lo)), lambda c: (
        _map2(c, _map(a, lambda x: (x > lo).astype(np.float64)), np.multiply),
    )


def _leaky_relu(x, slope):
    factor = np.where(x > 0, 1.0, slope)
    return x * factor, lambda c: (c * factor,)


SUM = Primitive("sum", _sum)
MEAN = Primitive("mean", _mean)
SUM_SQUARES = Primitive("sum_squares", _sum_squares)
CLAMP_MIN = Primitive("clamp_min", _clamp_min)
LEAKY_RELU = Primitive("leaky_relu", _leaky_relu)


def total(a: VarId) -> VarId:
    return a.tape.record(SUM, a)


def mean(a: VarId) -> VarId:
    return a.tape.record(MEAN, a)


def sum_squares(a: VarId) -> VarId:
    return a.tape.record(SUM_SQUARES, a)


def mean_squares(a: VarId) -> VarId:
    count = _count(a.value)
    return scale(sum_squares(a), 1.0 / count)


def clamp_min(a: VarId, lo: float = 0.0) -> VarId:
    return a.tape.record(CLAMP_MIN, a, lo=float(lo))


def leaky_relu(x: VarId, slope: float) -> VarId:
    return x.tape.record(LEAKY_RELU, x, slope=float(slope))


# ---------------------------------------------------------------------------
# Field operators
# ---------------------------------------------------------------------------


def _flat(value: Value) -> np.ndarray:
    if isinstance(value, (CenteredField, StaggeredField)):
        return value.flat()
    return np.asarray(value).ravel()


def _linear(name: str, matrix_fn, out_kind, in_kind) -> Primitive:
    def evaluate(a):
        matrix = matrix_fn(a.spec)
        out = out_kind.from_flat(a.spec, matrix @ a.flat())
        return out, lambda c: (in_kind.from_flat(a.spec, matrix.T @ c.flat()),)

    return Primitive(name, evaluate)


GRADIENT = _linear("gradient", fops.gradient_matrix, StaggeredField, CenteredField)
DIVERGENCE = _linear("divergence", fops.divergence_matrix, CenteredField, StaggeredField)
LAPLACE = _linear("laplace", fops.laplace_matrix, CenteredField, CenteredField)
CURL2D = _linear("curl2d", fops.curl_matrix, StaggeredField, CenteredField)
CENTERS_TO_FACES = _linear(
    "centers_to_faces", fops.face_average_matrix, StaggeredField, CenteredField
)


def gradient(f: VarId) -> VarId:
    return f.tape.record(GRADIENT, f)


def divergence(v: VarId) -> VarId:
    return v.tape.record(DIVERGENCE, v)


def laplace(f: VarId) -> VarId:
    return f.tape.record(LAPLACE, f)


def curl2d(phi: VarId) -> VarId:
    return phi.tape.record(CURL2D, phi)


def centers_to_faces(f: VarId) -> VarId:
    return f.tape.record(CENTERS_TO_FACES, f)


def _advect(f, v, dt):
    plan = fops.AdvectionPlan(f, v, dt)
    return plan.apply(f), lambda c: plan.vjp(f, c)


def _blur(f, r):
    return fops.blur(f, r), lambda c: (fops.blur(c, r),)


ADVECT = Primitive("advect", _advect)
BLUR = Primitive("blur", _blur)


def advect(f: VarId, v: VarId, dt: float) -> VarId:
    """Semi-Lagrangian transport; ``f`` and ``v`` may be the same variable."""
    return _tape(f, v).record(ADVECT, f, v, dt=float(dt))


def blur(f: VarId, r: Optional[float]) -> VarId:
    if r is None or r == 0:
        return f
    return f.tape.record(BLUR, f, r=float(r))


# ---------------------------------------------------------------------------
# Field <-> network tensor conversions
# ---------------------------------------------------------------------------


def _to_channels(*fields):
    spec = fields[0].spec
    arrays = []
    for f in fields:
        if isinstance(f, CenteredField):
            arrays.append(f.data[None])
        else:
            stacked = fops.center_average_matrix(f.spec) @ f.flat()
            arrays.append(stacked.reshape((spec.rank,) + spec.dims))
    sizes = [a.shape[0] for a in arrays]

    def vjp(c):
        out, start = [], 0
        for f, size in zip(fields, sizes):
            block = c[start:start + size]
            start += size
            if isinstance(f, CenteredField):
                out.append(CenteredField(spec, block[0]))
            else:
                flat = fops.center_average_matrix(spec).T @ block.ravel()
                out.append(StaggeredField.from_flat(spec, flat))
        return out

    return np.concatenate(arrays, axis=0), vjp


def _channel_to_field(x, k, spec):
    def vjp(c):
        g = np.zeros(x.shape)
        g[k] = c.data
        return (g,)

    return CenteredField(spec, x[k]), vjp


def _channels_to_faces(x, spec):
    matrix = fops.vector_face_matrix(spec)
    out = StaggeredField.from_flat(spec, matrix @ x[: spec.rank].ravel())

    def vjp(c):
        g = np.zeros(x.shape)
        g[: spec.rank] = (matrix.T @ c.flat()).reshape((spec.rank,) + spec.dims)
        return (g,)

    return out, vjp


TO_CHANNELS = Primitive("to_channels", _to_channels)
CHANNEL_TO_FIELD = Primitive("channel_to_field", _channel_to_field)
CHANNELS_TO_FACES = Primitive("channels_to_faces", _channels_to_faces)


def to_channels(*fields: VarId) -> VarId:
    """
    Stack fields into a ``(channels, *dims)`` array.

    Staggered fields contribute ``rank`` channels.
    """
    return _tape(*fields).record(TO_CHANNELS, *fields)


def channel_to_field(x: VarId, k: int, spec: GridSpec) -> VarId:
    return x.tape.record(CHANNEL_TO_FIELD, x, k=int(k), spec=spec)


def channels_to_faces(x: VarId, spec: GridSpec) -> VarId:
    """First ``rank`` channels as a cell-centred vector, averaged onto faces."""
    return x.tape.record(CHANNELS_TO_FACES, x, spec=spec)


# ---------------------------------------------------------------------------
# Network tensor operations
# ---------------------------------------------------------------------------


def _concat(*xs):
    sizes = np.cumsum([x.shape[0] for x in xs])[:-1]
    return np.concatenate(xs, axis=0), lambda c: tuple(np.split(c, sizes, axis=0))


def _window(offset: Sequence[int], out_shape: Sequence[int], stride: int):
    return (slice(None),) + tuple(
        slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offset, out_shape)
    )


def _conv(x, w, b, stride):
    kernel = w.shape[2:]
    spatial = x.shape[1:]
    if w.shape[1] != x.shape[0]:
        raise ShapeMismatchError(
            f"conv: kernel expects {w.shape[1]} channels, input has {x.shape[0]}"
        )
    out_shape = tuple((n - k) // stride + 1 for n, k in zip(spatial, kernel))
    if any(n < 1 for n in out_shape):
        raise ShapeMismatchError(f"conv: input {spatial} smaller than kernel {kernel}")
    offsets = list(product(*[range(k) for k in kernel]))
    out = np.zeros((w.shape[0],) + out_shape)
    for offset in offsets:
        tap = (slice(None), slice(None)) + offset
        out += np.einsum("oi,i...->o...", w[tap], x[_window(offset, out_shape, stride)])
    out += b.reshape((-1,) + (1,) * len(out_shape))

    def vjp(c):
        gx = np.zeros(x.shape)
        gw = np.zeros(w.shape)
        spatial_axes = tuple(range(1, c.ndim))
        for offset in offsets:
            window = _window(offset, out_shape, stride)
            tap = (slice(None), slice(None)) + offset
            gw[tap] = np.tensordot(c, x[window], axes=(spatial_axes, spatial_axes))
            gx[window] += np.einsum("oi,o...->i...", w[tap], c)
        gb = c.reshape(c.shape[0], -1).sum(axis=1)
        return gx, gw, gb

    return out, vjp


def _pad_indices(n: int, before: int, after: int) -> np.ndarray:
    return np.pad(np.arange(n), (before, after), mode="reflect")


def _reflect_pad(x, pads):
    axes = [_pad_indices(n, b, a) for n, (b, a) in zip(x.shape[1:], pads)]
    index = np.ix_(np.arange(x.shape[0]), *axes)

    def vjp(c):
        g = np.zeros(x.shape)
        np.add.at(g, index, c)
        return (g,)

    return x[index], vjp


def _crop(x, shape):
    window = (slice(None),) + tuple(slice(0, n) for n in shape)

    def vjp(c):
        g = np.zeros(x.shape)
        g[window] = c
        return (g,)

    return x[window].copy(), vjp


def _apply_along(x: np.ndarray, matrices) -> np.ndarray:
    for axis, matrix in enumerate(matrices, start=1):
        x = np.moveaxis(np.tensordot(matrix, x, axes=([1], [axis])), 0, axis)
    return x


def _resize(x, shape):
    matrices = [fops.interpolation_matrix(n, m).toarray() for n, m in zip(x.shape[1:], shape)]
    return _apply_along(x, matrices), lambda c: (_apply_along(c, [m.T for m in matrices]),)


def _dense(x, w, b):
    flat = x.ravel()
    out = w @ flat + b
    return out, lambda c: ((w.T @ c).reshape(x.shape), np.outer(c, flat), c)


def _reshape(x, shape):
    return x.reshape(shape), lambda c: (c.reshape(x.shape),)


CONCAT = Primitive("concat", _concat)
CONV = Primitive("conv", _conv)
REFLECT_PAD = Primitive("reflect_pad", _reflect_pad)
CROP = Primitive("crop", _crop)
RESIZE = Primitive("resize", _resize)
DENSE = Primitive("dense", _dense)
RESHAPE = Primitive("reshape", _reshape)


def concat(*xs: VarId) -> VarId:
    """Concatenate along the channel axis."""
    return _tape(*xs).record(CONCAT, *xs)


def conv(x: VarId, w: VarId, b: VarId, stride: int = 1) -> VarId:
    """Valid (unpadded) N-D convolution, ``w`` shaped ``(out, in, *kernel)``."""
    return _tape(x, w, b).record(CONV, x, w, b, stride=int(stride))


def reflect_pad(x: VarId, pads: Sequence[Tuple[int, int]]) -> VarId:
    pads = tuple((int(b), int(a)) for b, a in pads)
    if not any(b or a for b, a in pads):
        return x
    return x.tape.record(REFLECT_PAD, x, pads=pads)


def crop(x: VarId, shape: Sequence[int]) -> VarId:
    shape = tuple(int(n) for n in shape)
    if shape == x.shape.dims[1:]:
        return x
    return x.tape.record(CROP, x, shape=shape)


def resize(x: VarId, shape: Sequence[int]) -> VarId:
    """Linear resampling of every channel onto a new spatial shape."""
    return x.tape.record(RESIZE, x, shape=tuple(int(n) for n in shape))


def dense(x: VarId, w: VarId, b: VarId) -> VarId:
    return _tape(x, w, b).record(DENSE, x, w, b)


def reshape(x: VarId, shape: Sequence[int]) -> VarId:
    return x.tape.record(RESHAPE, x, shape=tuple(int(n) for n in shape))


def sparse_apply(x: VarId, matrix: sp.spmatrix, out_kind, spec: GridSpec) -> VarId:
    """Apply a constant linear map to a field flattened row-major."""
    in_kind = type(x.value)

    def evaluate(a):
        out = out_kind.from_flat(spec, matrix @ _flat(a))
        return out, lambda c: (in_kind.from_flat(spec, matrix.T @ _flat(c)),)

    return x.tape.record(Primitive("sparse_apply", evaluate), x)
