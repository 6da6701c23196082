"""
Desk-scale U-net with residual blocks.

Layout (``L`` levels, features ``f_l = min(base * 2**l, cap)``):

    reflect-pad to a multiple of 2**L
    stem: conv3 -> f_0, residual block
    level l = 1..L: stride-2 conv (kernel 2) -> f_l, 2 residual blocks
    [optional] dense layer over the whole coarsest level, added residually
    level l = L-1..0: upsample, concatenate skip, conv3 -> f_l, residual block
    head: conv3 -> output channels (zero-initialised), crop

A residual block computes ``leaky(x + conv3(leaky(conv3(x))))``. Inputs and
outputs are channel-first arrays without a batch axis.
"""
import weakref
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from config.settings import settings
from src.autodiff import ops
from src.autodiff.tape import Tape, VarId
from src.common.exceptions import ConfigurationError, ShapeMismatchError


@dataclass(frozen=True)
class NetSpec:
    in_channels: int
    out_channels: int
    levels: int = settings.net.levels
    base_features: int = settings.net.base_features
    feature_cap: int = settings.net.feature_cap
    bottleneck: bool = False
    leaky_slope: float = settings.net.leaky_slope
    rank: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigurationError(f"NetSpec needs at least one level, got {self.levels}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("NetSpec channel counts must be positive")
        if self.rank not in (1, 2):
            raise ConfigurationError(f"NetSpec rank must be 1 or 2, got {self.rank}")

    def features(self, level: int) -> int:
        return min(self.base_features * 2 ** level, self.feature_cap)

    def padded_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        """Smallest shape >= ``shape`` divisible by ``2**levels`` with coarsest size >= 2."""
        block = 2 ** self.levels
        return tuple(max(2 * block, -(-n // block) * block) for n in shape)

    def level_shapes(self, shape: Tuple[int, ...]) -> List[Tuple[int, ...]]:
        padded = self.padded_shape(shape)
        return [tuple(n // 2 ** level for n in padded) for level in range(self.levels + 1)]

    def layer_shapes(self, shape: Optional[Tuple[int, ...]] = None) -> Dict[str, Tuple[int, ...]]:
        """Parameter name -> array shape. ``shape`` is required with a bottleneck."""
        k3 = (3,) * self.rank
        k2 = (2,) * self.rank
        layers: Dict[str, Tuple[int, ...]] = {}

        def conv(name: str, cin: int, cout: int, kernel: Tuple[int, ...]) -> None:
            layers[f"{name}.w"] = (cout, cin) + kernel
            layers[f"{name}.b"] = (cout,)

        def residual(name: str, features: int) -> None:
            conv(f"{name}.conv1", features, features, k3)
            conv(f"{name}.conv2", features, features, k3)

        conv("stem", self.in_channels, self.features(0), k3)
        residual("stem.res", self.features(0))
        for level in range(1, self.levels + 1):
            conv(f"enc{level}.down", self.features(level - 1), self.features(level), k2)
            residual(f"enc{level}.res0", self.features(level))
            residual(f"enc{level}.res1", self.features(level))
        if self.bottleneck:
            if shape is None:
                raise ConfigurationError("A dense bottleneck needs the input shape")
            coarse = self.level_shapes(shape)[-1]
            size = self.features(self.levels) * int(np.prod(coarse))
            layers["bottleneck.w"] = (size, size)
            layers["bottleneck.b"] = (size,)
        for level in range(self.levels - 1, -1, -1):
            cin = self.features(level + 1) + self.features(level)
            conv(f"dec{level}.merge", cin, self.features(level), k3)
            residual(f"dec{level}.res", self.features(level))
        conv("head", self.features(0), self.out_channels, k3)
        return layers


class ParamSet(Mapping):
    """
    Named network parameters (read-only arrays).

    ``bind(tape)`` records every array as a leaf on ``tape`` once and returns
    the same ``VarId`` mapping on later calls with that tape.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        frozen = {}
        for name, array in arrays.items():
            copy = np.array(array, dtype=np.float64, copy=True)
            if not np.all(np.isfinite(copy)):
                raise ConfigurationError(f"Parameter {name} contains non-finite values")
            copy.setflags(write=False)
            frozen[name] = copy
        self._arrays = frozen
        self._bindings: "weakref.WeakKeyDictionary[Tape, Dict[str, VarId]]" = (
            weakref.WeakKeyDictionary()
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def bind(self, tape: Tape) -> Dict[str, VarId]:
        bound = self._bindings.get(tape)
        if bound is None:
            bound = {
                name: tape.variable(array, op=f"param:{name}")
                for name, array in self._arrays.items()
            }
            self._bindings[tape] = bound
        return bound

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParamSet":
        merged = dict(self._arrays)
        merged.update(updates)
        return ParamSet(merged)

    def check(self, spec: NetSpec, shape: Optional[Tuple[int, ...]] = None) -> None:
        expected = spec.layer_shapes(shape)
        if set(expected) != set(self._arrays):
            raise ShapeMismatchError("Parameter names do not match the network layout")
        for name, dims in expected.items():
            if self._arrays[name].shape != dims:
                raise ShapeMismatchError(
                    f"Parameter {name} has shape {self._arrays[name].shape}, expected {dims}"
                )


def init_params(spec: NetSpec, seed: int = 0, shape: Optional[Tuple[int, ...]] = None) -> ParamSet:
    """
    Fan-in uniform initialisation.

    Weights are drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; biases and
    the head are zero, so an untrained network outputs exactly 0.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, dims in spec.layer_shapes(shape).items():
        if name.endswith(".b") or name.startswith("head.") or name.startswith("bottleneck."):
            arrays[name] = np.zeros(dims)
            continue
        fan_in = int(np.prod(dims[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=dims)
    return ParamSet(arrays)


def zero_params(spec: NetSpec, shape: Optional[Tuple[int, ...]] = None) -> ParamSet:
    return ParamSet({name: np.zeros(dims) for name, dims in spec.layer_shapes(shape).items()})


def _same_pad(x: VarId, rank: int) -> VarId:
    return ops.reflect_pad(x, [(1, 1)] * rank)


def _conv3(x: VarId, p: Dict[str, VarId], name: str, rank: int) -> VarId:
    return ops.conv(_same_pad(x, rank), p[f"{name}.w"], p[f"{name}.b"])


def _residual(x: VarId, p: Dict[str, VarId], name: str, spec: NetSpec) -> VarId:
    hidden = ops.leaky_relu(_conv3(x, p, f"{name}.conv1", spec.rank), spec.leaky_slope)
    out = ops.add(x, _conv3(hidden, p, f"{name}.conv2", spec.rank))
    return ops.leaky_relu(out, spec.leaky_slope)


def forward(spec: NetSpec, params: Dict[str, VarId], x: VarId) -> VarId:
    """
    Evaluate the network on ``x`` of shape ``(in_channels, *spatial)``.

    ``params`` is a ``ParamSet.bind`` result on the tape of ``x``.
    """
    dims = x.shape.dims
    if len(dims) != spec.rank + 1 or dims[0] != spec.in_channels:
        raise ShapeMismatchError(
            f"Network expects ({spec.in_channels}, *{spec.rank}D), got input shape {dims}"
        )
    spatial = dims[1:]
    shapes = spec.level_shapes(spatial)
    padded = ops.reflect_pad(x, [(0, m - n) for n, m in zip(spatial, shapes[0])])

    h = _conv3(padded, params, "stem", spec.rank)
    h = _residual(h, params, "stem.res", spec)
    skips = [h]
    for level in range(1, spec.levels + 1):
        h = ops.conv(h, params[f"enc{level}.down.w"], params[f"enc{level}.down.b"], stride=2)
        h = _residual(h, params, f"enc{level}.res0", spec)
        h = _residual(h, params, f"enc{level}.res1", spec)
        skips.append(h)

    if spec.bottleneck:
        flat = ops.reshape(h, (-1,))
        mixed = ops.dense(flat, params["bottleneck.w"], params["bottleneck.b"])
        h = ops.add(h, ops.reshape(ops.leaky_relu(mixed, spec.leaky_slope), h.shape.dims))

    for level in range(spec.levels - 1, -1, -1):
        up = ops.resize(h, shapes[level])
        h = _conv3(ops.concat(up, skips[level]), params, f"dec{level}.merge", spec.rank)
        h = _residual(h, params, f"dec{level}.res", spec)

    out = _conv3(h, params, "head", spec.rank)
    return ops.crop(out, spatial)


def parameter_count(spec: NetSpec, shape: Optional[Tuple[int, ...]] = None) -> int:
    return sum(int(np.prod(dims)) for dims in spec.layer_shapes(shape).values())
