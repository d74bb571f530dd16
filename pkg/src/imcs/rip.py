"""Restricted isometry checks over explicit support families.

Singular values come from a one-sided (Hestenes) Jacobi sweep over the
column submatrix, which is accurate for the small supports involved here
(|support| <= 2s, typically well under 64 columns).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

import numpy as np

from .numcore import RngStream
from .transforms import UnitaryTransform, forward, hard_threshold

JACOBI_TOL = 1e-12
CONVENTIONS = ("linear", "squared")


class EmptySupportError(ValueError):
    pass


def jacobi_singular_values(M, tol: float = JACOBI_TOL, max_sweeps: int = 60) -> np.ndarray:
    """All singular values of a tall matrix (rows >= columns), descending."""
    X = np.array(M, dtype=np.float64)
    m, k = X.shape
    if k > m:
        raise ValueError(f"need at least as many rows as columns, got {X.shape}")
    for _ in range(max_sweeps):
        rotated = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                xp, xq = X[:, p], X[:, q]
                alpha = xp @ xp
                beta = xq @ xq
                gamma = xp @ xq
                if abs(gamma) <= tol * math.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                X[:, p], X[:, q] = c * xp - s * xq, s * xp + c * xq
        if not rotated:
            break
    return np.sort(np.sqrt(np.einsum("ij,ij->j", X, X)))[::-1]


def extreme_singular_values(M, support: Iterable[int]) -> tuple[float, float]:
    """(sigma_min, sigma_max) of the columns of ``M`` indexed by ``support``."""
    M = np.asarray(M, dtype=np.float64)
    cols = sorted(int(i) for i in support)
    if not cols:
        raise EmptySupportError("support is empty")
    if len(cols) > min(M.shape):
        raise ValueError(f"support of size {len(cols)} exceeds min{M.shape}")
    if cols[0] < 0 or cols[-1] >= M.shape[1]:
        raise IndexError(f"support {cols} out of range for {M.shape[1]} columns")
    sv = jacobi_singular_values(M[:, cols])
    return float(sv[-1]), float(sv[0])


@dataclass(frozen=True)
class SupportFamily:
    supports: tuple[tuple[int, ...], ...]
    max_size: int

    def __post_init__(self):
        uniq = sorted({tuple(sorted(int(i) for i in s)) for s in self.supports})
        for s in uniq:
            if len(s) > self.max_size:
                raise ValueError(f"support {s} larger than max_size={self.max_size}")
        object.__setattr__(self, "supports", tuple(uniq))

    def __len__(self):
        return len(self.supports)

    def __iter__(self):
        return iter(self.supports)


@dataclass
class RipReport:
    gamma_target: float
    convention: str
    per_support: list[tuple[tuple[int, ...], float, float]] = field(default_factory=list)
    passed: bool = True
    worst_support: tuple[int, ...] = ()

    @property
    def sigma_min(self) -> float:
        return min(lo for _, lo, _ in self.per_support)

    @property
    def sigma_max(self) -> float:
        return max(hi for _, _, hi in self.per_support)

    def to_dict(self) -> dict:
        return {
            "gamma_target": self.gamma_target,
            "convention": self.convention,
            "pass": self.passed,
            "worst_support": list(self.worst_support),
            "per_support": [
                {"support": list(s), "sigma_min": lo, "sigma_max": hi}
                for s, lo, hi in self.per_support
            ],
        }


def rip_bounds(gamma: float, convention: str = "linear") -> tuple[float, float]:
    """Admissible [lo, hi] interval for singular values.

    ``linear`` is (1-g)|x| <= |Ax| <= (1+g)|x|; ``squared`` bounds |Ax|^2 by
    (1-g)|x|^2 and (1+g)|x|^2, i.e. singular values in [sqrt(1-g), sqrt(1+g)].
    """
    if convention == "linear":
        return 1.0 - gamma, 1.0 + gamma
    if convention == "squared":
        return math.sqrt(max(1.0 - gamma, 0.0)), math.sqrt(1.0 + gamma)
    raise ValueError(f"unknown RIP convention {convention!r}")


def check_rip(M, family: SupportFamily | Iterable, gamma: float,
              convention: str = "linear") -> RipReport:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    supports = list(family)
    if not supports:
        raise EmptySupportError("support family is empty")
    lo, hi = rip_bounds(gamma, convention)
    report = RipReport(gamma, convention)
    worst, worst_margin = None, -math.inf
    for s in supports:
        smin, smax = extreme_singular_values(M, s)
        report.per_support.append((tuple(s), smin, smax))
        margin = max(lo - smin, smax - hi)
        if margin > worst_margin:
            worst, worst_margin = tuple(s), margin
    report.passed = all(smin >= lo and smax <= hi for _, smin, smax in report.per_support)
    report.worst_support = worst
    return report


def support_family_from_trace(trace, U: UnitaryTransform, s: int, x_true=None) -> SupportFamily:
    """Difference supports of thresholded coefficients along a recovery trace.

    For t = 0..T-1 collects supp(h_s(U^T x_t) - h_s(U^T x_true)) and
    supp(h_s(U^T x_{t+1}) - h_s(U^T x_t)).  Empty supports carry no RIP
    condition and are dropped.
    """
    iterates = getattr(trace, "iterates", None)
    if not iterates:
        raise ValueError("trace has no stored iterates; rerun with keep_iterates=True")
    if x_true is None:
        x_true = getattr(trace, "x_true", None)
    if x_true is None:
        raise ValueError("target signal is required to build the support family")
    coeffs = [hard_threshold(forward(U, x), s) for x in iterates]
    target = hard_threshold(forward(U, x_true), s)
    found = []
    for t in range(len(iterates) - 1):
        found.append(np.flatnonzero(coeffs[t] - target))
        found.append(np.flatnonzero(coeffs[t + 1] - coeffs[t]))
    return SupportFamily(tuple(tuple(f) for f in found if f.size), 2 * s)


def theorem2_min_m(s: int, T: int, tau: float, gamma: float) -> int:
    """Smallest m with m >= 2(s + ln(4T/tau)) / (sqrt(1+gamma) - 1)^2 and m >= 2s."""
    if s < 1 or T < 1:
        raise ValueError("s and T must be at least 1")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    bound = 2.0 * (s + math.log(4.0 * T / tau)) / (math.sqrt(1.0 + gamma) - 1.0) ** 2
    return max(math.ceil(bound * (1.0 - 1e-12)), 2 * s)


def random_support_family(d: int, size: int, count: int, rng: RngStream) -> SupportFamily:
    supports = [tuple(np.sort(rng.generator.choice(d, size, replace=False))) for _ in range(count)]
    return SupportFamily(tuple(supports), size)


def all_supports(d: int, size: int) -> SupportFamily:
    return SupportFamily(tuple(combinations(range(d), size)), size)


def empirical_rip_rate(m: int, d: int, s: int, T: int, gamma: float, seeds: Iterable[int],
                       U: UnitaryTransform | None = None, convention: str = "squared") -> float:
    """Fraction of Gaussian draws A (N(0,1/m)) for which A U passes RIP.

    Each seed draws A and a family of 2T random supports of size 2s, the
    largest family the sample-size bound has to cover.
    """
    from .sensing import sample_sensing

    hits = total = 0
    for seed in seeds:
        rng = RngStream(seed)
        A = sample_sensing(m, d, rng.child("A")).A
        M = A if U is None or U.matrix is None else A @ U.matrix
        fam = random_support_family(d, 2 * s, 2 * T, rng.child("supports"))
        hits += check_rip(M, fam, gamma, convention).passed
        total += 1
    return hits / total
