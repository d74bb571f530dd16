"""Unitary sparsifying transforms and hard thresholding."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

ORTHO_TOL = 1e-10


@lru_cache(maxsize=16)
def _haar_analysis(d: int) -> np.ndarray:
    # rows are the orthonormal Haar basis vectors, coarsest scale first
    W = np.ones((1, 1))
    while W.shape[0] < d:
        n = W.shape[0]
        W = np.vstack([np.kron(W, [1.0, 1.0]), np.kron(np.eye(n), [1.0, -1.0])]) / np.sqrt(2.0)
    W.setflags(write=False)
    return W


def _is_power_of_two(d: int) -> bool:
    return d >= 1 and d & (d - 1) == 0


@dataclass(frozen=True)
class UnitaryTransform:
    """Orthogonal basis U; coefficients are U^T x and synthesis is U c.

    ``kind`` is one of ``identity``, ``haar`` or ``explicit``.  For
    ``explicit`` the columns of ``matrix`` are the basis vectors.
    """

    kind: str
    d: int
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("transform dimension must be positive")
        if self.kind == "identity":
            object.__setattr__(self, "matrix", None)
        elif self.kind == "haar":
            if not _is_power_of_two(self.d):
                raise ValueError(f"haar transform needs a power-of-two dimension, got {self.d}")
            object.__setattr__(self, "matrix", _haar_analysis(self.d).T)
        elif self.kind == "explicit":
            U = np.array(self.matrix, dtype=np.float64)
            if U.shape != (self.d, self.d):
                raise ValueError(f"explicit transform must be {self.d}x{self.d}, got {U.shape}")
            err = np.linalg.norm(U.T @ U - np.eye(self.d))
            if err > ORTHO_TOL * max(1.0, np.sqrt(self.d)):
                raise ValueError(f"matrix is not orthogonal (|U^T U - I|_F = {err:.3g})")
            U.setflags(write=False)
            object.__setattr__(self, "matrix", U)
        else:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @classmethod
    def identity(cls, d: int) -> "UnitaryTransform":
        return cls("identity", d)

    @classmethod
    def haar(cls, d: int) -> "UnitaryTransform":
        return cls("haar", d)

    @classmethod
    def explicit(cls, U) -> "UnitaryTransform":
        U = np.asarray(U, dtype=np.float64)
        return cls("explicit", U.shape[0], U)

    @property
    def analysis(self) -> np.ndarray:
        """The matrix U^T (maps a signal to its coefficients)."""
        if self.matrix is None:
            return np.eye(self.d)
        return self.matrix.T

    def dense(self) -> np.ndarray:
        return np.eye(self.d) if self.matrix is None else np.array(self.matrix)


def _check_len(U: UnitaryTransform, x: np.ndarray):
    if x.shape[-1] != U.d:
        raise ValueError(f"vector length {x.shape[-1]} does not match transform dimension {U.d}")


def forward(U: UnitaryTransform, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_len(U, x)
    if U.matrix is None:
        return x.copy()
    return x @ U.matrix  # == U^T x for a vector, row-wise for a batch


def inverse(U: UnitaryTransform, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    _check_len(U, c)
    if U.matrix is None:
        return c.copy()
    return c @ U.matrix.T


def hard_threshold(v, s: int) -> np.ndarray:
    """Keep the ``s`` largest-magnitude entries of ``v`` in place, zero the rest.

    Ties in magnitude go to the lower index.
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.shape[0]
    if not 0 <= s <= d:
        raise ValueError(f"sparsity s={s} outside [0, {d}]")
    out = np.zeros_like(v)
    if s == 0:
        return out
    keep = np.argsort(-np.abs(v), kind="stable")[:s]
    out[keep] = v[keep]
    return out


def sparsify(U: UnitaryTransform, x, s: int) -> np.ndarray:
    """U h_s(U^T x): the nearest vector that is s-sparse in the U domain."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(U, x)
    if not 0 <= s <= U.d:
        raise ValueError(f"sparsity s={s} outside [0, {U.d}]")
    if s == U.d:
        return x.copy()
    if U.matrix is None:
        return hard_threshold(x, s)
    return inverse(U, hard_threshold(forward(U, x), s))


def support(v, atol: float = 0.0) -> frozenset[int]:
    v = np.asarray(v)
    return frozenset(int(i) for i in np.flatnonzero(np.abs(v) > atol))
