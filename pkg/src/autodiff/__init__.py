"""
Reverse-mode automatic differentiation over fields and network tensors.
"""
from src.autodiff import ops
from src.autodiff.checkpoint import checkpoint_segment
from src.autodiff.tape import (
    CustomAdjoint,
    GradientMap,
    NodeCounter,
    Primitive,
    Tape,
    ValueShape,
    VarId,
    accumulate,
)

__all__ = [
    "CustomAdjoint",
    "GradientMap",
    "NodeCounter",
    "Primitive",
    "Tape",
    "ValueShape",
    "VarId",
    "accumulate",
    "checkpoint_segment",
    "ops",
]
