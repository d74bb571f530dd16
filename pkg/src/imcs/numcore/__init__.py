"""Dense float64 tensors, seeded RNG streams and a reverse-mode tape."""
from __future__ import annotations

import numpy as np

from .autodiff import (
    GradError,
    Tape,
    UnknownLeafError,
    Var,
    abs_,
    add,
    concat,
    getitem,
    grad,
    l1_norm,
    l2_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sq_norm,
    sub,
    sum_,
    tanh,
    transpose,
    value_and_grad,
    value_of,
)
from .rng import RngStream, gaussian, stream_id


class DimensionError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    """Float64 copy of ``x`` with every value finite."""
    arr = np.array(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def matvec(A, x) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply matrix {A.shape} by vector {x.shape}")
    return A @ x


__all__ = [
    "DimensionError", "GradError", "RngStream", "Tape", "UnknownLeafError", "Var",
    "abs_", "add", "as_tensor", "concat", "gaussian", "getitem", "grad", "l1_norm",
    "l2_norm", "log", "matmul", "matvec", "mean", "mul", "neg", "relu", "reshape",
    "sigmoid", "sq_norm", "stream_id", "sub", "sum_", "tanh", "transpose",
    "value_and_grad", "value_of",
]
