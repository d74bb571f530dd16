"""Gaussian sensing matrices and the measurement model y = A x + noise."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numcore import DimensionError, RngStream, matvec


@dataclass(frozen=True)
class SensingMatrix:
    A: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise DimensionError(f"sensing matrix must be 2-D, got shape {A.shape}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def to_dict(self, embed: bool = False) -> dict:
        out = {"m": self.m, "d": self.d, "seed": self.seed}
        if embed:
            out["data"] = self.A.ravel().tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SensingMatrix":
        if "data" in doc:
            A = np.asarray(doc["data"], dtype=np.float64).reshape(doc["m"], doc["d"])
            return cls(A, doc.get("seed"))
        if doc.get("seed") is None:
            raise ValueError("sensing matrix document needs either data or a seed")
        return sample_sensing(doc["m"], doc["d"], RngStream(doc["seed"]))


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "none"
    std: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.std < 0:
            raise ValueError("noise std must be non-negative")


def sample_sensing(m: int, d: int, rng: RngStream) -> SensingMatrix:
    """Draw an m x d matrix with i.i.d. N(0, 1/m) entries."""
    if m <= 0 or d <= 0:
        raise ValueError(f"m and d must be positive, got m={m}, d={d}")
    if m > d:
        warnings.warn(f"m={m} exceeds d={d}; the system is not underdetermined", stacklevel=2)
    A = rng.gaussian((m, d), 0.0, 1.0 / np.sqrt(m))
    return SensingMatrix(A, rng.master_seed)


def measure(S: SensingMatrix, x, noise: NoiseModel | None = None,
            rng: RngStream | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != S.d:
        raise DimensionError(f"signal of shape {x.shape} does not match sensing matrix {S.A.shape}")
    y = matvec(S.A, x)
    if noise is not None and noise.kind == "gaussian" and noise.std > 0:
        if rng is None:
            raise ValueError("gaussian noise requires an rng")
        y = y + rng.gaussian(S.m, 0.0, noise.std)
    return y
