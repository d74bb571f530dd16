"""Synthetic signals from a hidden linear generator x = W c, c ~ N(0, I_k).

The columns of W are built in the Haar domain with coefficient scale
decaying by level, so signals are smooth and compressible under the Haar
transform.  ``scale`` sets the per-entry standard deviation of x.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import RngStream
from ..transforms import UnitaryTransform, sparsify


@dataclass(frozen=True)
class DataConfig:
    d: int = 64
    k: int = 6
    scale: float = 0.5
    decay: float = 0.7  # per-level shrink of Haar coefficient std
    sparsify_s: int | None = None
    seed: int = 0


def _levels(d: int) -> np.ndarray:
    # Haar analysis rows: row 0 is the mean, then 2^j rows at level j
    lv = np.zeros(d)
    i, j = 1, 0
    while i < d:
        lv[i:2 * i] = j
        i, j = 2 * i, j + 1
    return lv


def ground_truth_basis(cfg: DataConfig) -> np.ndarray:
    """The hidden d x k matrix W, normalised so that Var(x_i) averages scale^2."""
    rng = RngStream(cfg.seed).child("basis")
    coeff = rng.gaussian((cfg.d, cfg.k)) * (cfg.decay ** _levels(cfg.d))[:, None]
    H = UnitaryTransform.haar(cfg.d)
    W = H.matrix @ coeff
    W *= cfg.scale / np.sqrt(np.mean(np.sum(W ** 2, axis=1)))
    return W


def make_dataset(cfg: DataConfig, n: int, split: str = "train") -> np.ndarray:
    """``n`` signals as rows; train and test splits use disjoint streams."""
    W = ground_truth_basis(cfg)
    c = RngStream(cfg.seed).child("latent", split).gaussian((n, cfg.k))
    X = c @ W.T
    if cfg.sparsify_s is not None:
        H = UnitaryTransform.haar(cfg.d)
        X = np.stack([sparsify(H, x, cfg.sparsify_s) for x in X])
    return X
