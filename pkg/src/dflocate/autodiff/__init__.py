import numpy as np

from . import checkpoint, ops
from .gradcheck import GradCheckReport, finite_difference_check
from .optim import MissingGradientError, OptimizerState, optimizer_step
from .params import FrozenParameterError, Parameter, ParameterSet, glorot_uniform
from .tensor import (
    AutodiffError,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    no_grad,
)


def weight_normalize(kernel, out_axis: int = 0):
    """Rescale ``kernel`` to unit Frobenius norm per output channel.

    A 1-D kernel is treated as a single channel.
    """
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim == 1:
        n = np.linalg.norm(k)
        if n == 0:
            raise ValueError("cannot normalise a zero kernel")
        return k / n
    axes = tuple(i for i in range(k.ndim) if i != out_axis)
    n = np.sqrt(np.sum(k**2, axis=axes, keepdims=True))
    if np.any(n == 0):
        raise ValueError("cannot normalise a kernel with a zero output channel")
    return k / n


__all__ = [
    "AutodiffError",
    "FrozenParameterError",
    "GradCheckReport",
    "MissingGradientError",
    "NonFiniteError",
    "OptimizerState",
    "Parameter",
    "ParameterSet",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "backward",
    "checkpoint",
    "finite_difference_check",
    "glorot_uniform",
    "no_grad",
    "ops",
    "optimizer_step",
    "weight_normalize",
]
