"""
Reverse-mode differentiation tape.

Every differentiable operation evaluates eagerly and appends a node holding
its output value and a vector-Jacobian product (VJP) closure. ``backward``
walks the nodes in reverse creation order, which is a topological order
because inputs always precede the nodes that consume them.

Usage:
    tape = Tape()
    x = tape.variable(CenteredField(spec, data))
    loss = ops.sum_squares(ops.advect(x, v, dt=1.0))
    grads = tape.backward(loss)
    grads[x]   # CenteredField cotangent
"""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.common.exceptions import ShapeMismatchError, TapeError
from src.common.logging_config import get_logger
from src.fields.grid import CenteredField, GridSpec, StaggeredField

logger = get_logger(__name__)

Value = Union[CenteredField, StaggeredField, np.ndarray, tuple]
Vjp = Callable[[Any], Sequence[Any]]


@dataclass(frozen=True)
class ValueShape:
    """Kind (``centered`` | ``staggered`` | ``array`` | ``tuple``) plus dims."""

    kind: str
    dims: Tuple[int, ...]
    spec: Optional[GridSpec] = None
    parts: Tuple["ValueShape", ...] = ()

    @classmethod
    def of(cls, value: Value) -> "ValueShape":
        if isinstance(value, CenteredField):
            return cls("centered", value.spec.dims, value.spec)
        if isinstance(value, StaggeredField):
            return cls("staggered", value.spec.dims, value.spec)
        if isinstance(value, tuple):
            return cls("tuple", (len(value),), parts=tuple(cls.of(v) for v in value))
        if isinstance(value, np.ndarray):
            return cls("array", tuple(value.shape))
        raise ShapeMismatchError(f"Cannot record values of type {type(value).__name__}")

    @property
    def is_scalar(self) -> bool:
        return self.kind == "array" and self.dims == ()

    def zeros(self) -> Value:
        if self.kind == "centered":
            return CenteredField.zeros(self.spec)
        if self.kind == "staggered":
            return StaggeredField.zeros(self.spec)
        if self.kind == "tuple":
            return tuple(p.zeros() for p in self.parts)
        return np.zeros(self.dims)


def _as_value(value: Value) -> Value:
    # numpy reductions hand back np.float64; the tape stores 0-d arrays
    if isinstance(value, np.generic):
        return np.asarray(value, dtype=np.float64)
    if isinstance(value, tuple):
        return tuple(_as_value(v) for v in value)
    return value


def accumulate(a: Optional[Value], b: Optional[Value]) -> Optional[Value]:
    """Sum two cotangents; ``None`` is the additive identity."""
    if a is None:
        return b
    if b is None:
        return a
    if isinstance(a, tuple):
        return tuple(accumulate(x, y) for x, y in zip(a, b))
    return a + b


@dataclass(frozen=True)
class VarId:
    """Handle of a recorded value."""

    index: int
    shape: ValueShape
    tape: "Tape" = field(compare=False, repr=False)

    @property
    def value(self) -> Value:
        return self.tape.value(self)

    def __add__(self, other):
        from src.autodiff import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.autodiff import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from src.autodiff import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.autodiff import ops

        return ops.neg(self)


@dataclass(frozen=True)
class Primitive:
    """
    A differentiable operation.

    ``evaluate(*values, **params)`` returns ``(output, vjp)`` where ``vjp`` maps
    the output cotangent to one cotangent per input (``None`` for "no
    contribution").
    """

    name: str
    evaluate: Callable[..., Tuple[Value, Vjp]]


@dataclass(frozen=True)
class CustomAdjoint:
    """
    Operation with a hand-written backward pass.

    ``backward(cotangent, inputs, output)`` must return the true VJP of
    ``forward`` as one cotangent per input.
    """

    name: str
    forward: Callable[..., Value]
    backward: Callable[[Any, Tuple[Value, ...], Value], Sequence[Any]]

    def evaluate(self, *values: Value, **params) -> Tuple[Value, Vjp]:
        output = self.forward(*values, **params)
        return output, lambda cot: self.backward(cot, values, output)


class NodeCounter:
    """Live and peak number of nodes that store intermediate results."""

    def __init__(self) -> None:
        self.live = 0
        self.peak = 0

    def acquire(self) -> None:
        self.live += 1
        self.peak = max(self.peak, self.live)

    def release(self, count: int) -> None:
        self.live -= count


@dataclass
class _Node:
    op: str
    inputs: Tuple[int, ...]
    value: Value
    vjp: Optional[Vjp]
    stored: bool


class GradientMap(Mapping):
    """Read-only cotangents keyed by ``VarId``; unreached variables read as zeros."""

    def __init__(self, tape: "Tape", cotangents: Dict[int, Value]):
        self._tape = tape
        self._cotangents = MappingProxyType(dict(cotangents))

    def __getitem__(self, var: VarId) -> Value:
        if var.tape is not self._tape:
            raise TapeError("VarId belongs to a different tape")
        cot = self._cotangents.get(var.index)
        return var.shape.zeros() if cot is None else cot

    def __iter__(self):
        return (self._tape.var(i) for i in self._cotangents)

    def __len__(self) -> int:
        return len(self._cotangents)

    def __contains__(self, var) -> bool:
        return isinstance(var, VarId) and var.index in self._cotangents


class Tape:
    """
    Append-only record of operations.

    A tape is single-owner; independent tapes may run on independent threads.
    ``enabled=False`` evaluates the same forward values without retaining
    adjoint closures.
    """

    def __init__(self, enabled: bool = True, counter: Optional[NodeCounter] = None):
        self.enabled = enabled
        self.counter = counter or NodeCounter()
        self._nodes: List[_Node] = []
        self._stored = 0

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def next_id(self) -> int:
        return len(self._nodes)

    def var(self, index: int) -> VarId:
        return VarId(index, ValueShape.of(self._nodes[index].value), self)

    def _check(self, var: VarId) -> None:
        if not isinstance(var, VarId) or var.tape is not self:
            raise TapeError(f"{var!r} is not a variable of this tape")
        if not 0 <= var.index < len(self._nodes):
            raise TapeError(f"VarId {var.index} out of range (tape has {len(self._nodes)} nodes)")

    def _push(
        self, op: str, inputs: Tuple[int, ...], value: Value, vjp: Optional[Vjp], stored: bool
    ) -> VarId:
        value = _as_value(value)
        if stored:
            self.counter.acquire()
            self._stored += 1
        self._nodes.append(_Node(op, inputs, value, vjp if self.enabled else None, stored))
        return VarId(len(self._nodes) - 1, ValueShape.of(value), self)

    def variable(self, value: Value, op: str = "leaf") -> VarId:
        """Record an input (leaf) value."""
        if isinstance(value, (int, float)):
            value = np.asarray(float(value))
        return self._push(op, (), value, None, stored=False)

    def value(self, var: VarId) -> Value:
        self._check(var)
        return self._nodes[var.index].value

    def record(self, op: Union[Primitive, CustomAdjoint], *inputs: VarId, **params) -> VarId:
        """Evaluate ``op`` on the values of ``inputs`` and append the result."""
        for var in inputs:
            self._check(var)
        output, vjp = op.evaluate(*(self._nodes[v.index].value for v in inputs), **params)
        return self._push(op.name, tuple(v.index for v in inputs), output, vjp, stored=True)

    def record_node(
        self, name: str, inputs: Sequence[VarId], value: Value, vjp: Vjp, stored: bool = False
    ) -> VarId:
        """Append a node whose value was computed by the caller (checkpoints, unpacking)."""
        for var in inputs:
            self._check(var)
        return self._push(name, tuple(v.index for v in inputs), value, vjp, stored)

    def release(self) -> None:
        """Drop every node and return its storage to the shared counter."""
        self.counter.release(self._stored)
        self._stored = 0
        self._nodes = []

    def backward(self, loss: VarId, seed: Union[float, np.ndarray] = 1.0) -> GradientMap:
        """Cotangents of every variable with respect to the scalar ``loss``."""
        self._check(loss)
        if not loss.shape.is_scalar:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape.dims}")
        return self.backprop({loss.index: np.asarray(seed, dtype=np.float64)})

    def backprop(self, seeds: Dict[int, Value]) -> GradientMap:
        """Reverse sweep from arbitrary output cotangents."""
        if not self.enabled:
            raise TapeError("backward called on a tape recorded with enabled=False")
        if not seeds:
            return GradientMap(self, {})
        cotangents: Dict[int, Value] = dict(seeds)
        for index in range(max(seeds), -1, -1):
            cot = cotangents.get(index)
            node = self._nodes[index]
            if cot is None or node.vjp is None:
                continue
            input_cots = node.vjp(cot)
            for source, input_cot in zip(node.inputs, input_cots):
                if input_cot is not None:
                    cotangents[source] = accumulate(cotangents.get(source), input_cot)
        logger.debug(f"Backward sweep over {max(seeds) + 1} nodes")
        return GradientMap(self, cotangents)
