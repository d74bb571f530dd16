"""Per-pixel error, Student-t intervals, presence probability and the paired sign test."""
from __future__ import annotations

import numpy as np
from scipy import stats

from .. import numcore as nc
from ..models import ConditioningError
from ..numcore import RngStream


def per_pixel_error(x_hat, x_true) -> float:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_hat.shape != x_true.shape:
        raise nc.DimensionError(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    return float(np.sum((x_hat - x_true) ** 2) / x_true.shape[-1])


def confidence_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t halfwidth t_{(1+level)/2, n-1} * sd / sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("a confidence interval needs at least two values")
    sd = float(np.std(v, ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, v.size - 1)) * sd / np.sqrt(v.size)
    return float(np.mean(v)), half


def presence_probability(G, X_test, S, eps: float = 0.125, n_z: int = 1000,
                         rng: RngStream | None = None, per_pixel: bool = True):
    """Fraction of latent draws landing within ``eps`` of each test signal.

    Conditional generators are fed y = A x for each test signal.  With
    ``per_pixel`` the squared distance is divided by d before comparing.
    Every signal uses its own child stream of ``rng``, so two generators with
    the same latent size evaluated with the same ``rng`` see the same z draws.
    Returns (mean, stddev, per-signal probabilities).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if n_z < 1:
        raise ValueError("n_z must be at least 1")
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    if G.cond_dim not in (0, S.m):
        raise ConditioningError(f"generator cond_dim={G.cond_dim} does not match m={S.m}")
    rng = rng or RngStream(0)
    probs = []
    for i, x in enumerate(X_test):
        z = rng.child("presence", i).gaussian((n_z, G.latent_dim))
        y = S.A @ x if G.cond_dim else None
        out = np.asarray(nc.value_of(G.forward(z, y)))
        dist = np.sum((out - x) ** 2, axis=1)
        if per_pixel:
            dist = dist / x.shape[0]
        probs.append(float(np.mean(dist < eps)))
    probs = np.array(probs)
    return float(probs.mean()), float(probs.std()), probs


def sign_test(better, worse) -> tuple[int, int, float]:
    """One-sided sign test that ``better`` is smaller than ``worse`` pairwise.

    Ties are dropped.  Returns (wins, non-tied pairs, p-value).
    """
    a = np.asarray(better, dtype=np.float64)
    b = np.asarray(worse, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    wins = int(np.sum(a < b))
    n = int(np.sum(a != b))
    if n == 0:
        return 0, 0, 1.0
    return wins, n, float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)
