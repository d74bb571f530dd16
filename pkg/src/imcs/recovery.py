"""Test-phase recovery with pre-trained generators, marginal or measurement-conditional.

All routines take a generator object exposing ``latent_dim``, ``cond_dim``,
``out_dim`` and ``forward(z, y=None)`` (built from :mod:`imcs.numcore` ops so
it is differentiable in ``z``).  With ``cfg.im`` set, the test measurement is
fed to the generator on every call.

If the generator defines ``project(w, y)``, the PGD-family inner projection
uses it instead of K latent gradient steps (exact for the identity oracle).
The inner objective is differentiated in squared form ``|w - G(z)|^2``.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .models import ConditioningError
from .numcore import RngStream
from .sensing import SensingMatrix
from .transforms import UnitaryTransform, sparsify

METHODS = ("csgm", "pgdgan", "spgdgan", "sparsegen")


class RecoveryDiverged(FloatingPointError):
    pass


class EmptyWindowError(ValueError):
    pass


@dataclass(frozen=True)
class RecoveryConfig:
    method: str = "csgm"
    im: bool = False
    T: int = 10
    K: int = 100
    tau: float = 0.1
    alpha: float = 0.5
    s: int | None = None  # None -> d // 2
    lam_sg: float = 0.1
    L: int = 250
    restarts: int = 1
    seed: int = 0
    keep_iterates: bool = False
    x0: str = "zero"  # PGD family start: "zero" or "adjoint" (A^T y)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown recovery method {self.method!r}")
        if not self.tau > 0:
            raise ValueError("latent step size tau must be positive")
        if self.alpha < 0:
            raise ValueError("PGD step alpha must be non-negative")
        if self.T < 0 or self.K < 0 or self.L < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.method == "sparsegen" and self.L > self.T:
            raise ValueError("sparsegen requires L <= T")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.x0 not in ("zero", "adjoint"):
            raise ValueError(f"unknown x0 mode {self.x0!r}")

    @classmethod
    def defaults(cls, method: str, **overrides) -> "RecoveryConfig":
        """Hyperparameters used by the reference experiments for each method."""
        base = {
            "csgm": dict(T=100, tau=0.1),
            "pgdgan": dict(alpha=0.5, tau=0.1, T=10, K=100),
            "spgdgan": dict(alpha=0.5, tau=0.1, T=10, K=100),
            "sparsegen": dict(L=250, T=500, tau=0.1, lam_sg=0.1),
        }[method]
        base.update(overrides)
        return cls(method=method, **base)


@dataclass
class RecoveryTrace:
    fidelity: list[float] = field(default_factory=list)
    per_pixel_error: list[float] | None = None
    iterates: list[np.ndarray] | None = None
    x_hat: np.ndarray | None = None
    x_true: np.ndarray | None = None
    nu: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def iters(self) -> int:
        return max(len(self.fidelity) - 1, 0)

    def _record(self, x, A, y, keep: bool):
        self.fidelity.append(fidelity(A, x, y))
        if self.x_true is not None:
            self.per_pixel_error.append(float(np.sum((x - self.x_true) ** 2) / x.shape[0]))
        if keep:
            self.iterates.append(np.array(x))

    def to_dict(self) -> dict:
        return {
            "fidelity": list(self.fidelity),
            "per_pixel_error": None if self.per_pixel_error is None else list(self.per_pixel_error),
            "x_hat": None if self.x_hat is None else self.x_hat.tolist(),
            "wall_time": self.wall_time,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "fidelity", "per_pixel_error"])
        for t, f in enumerate(self.fidelity):
            e = "" if self.per_pixel_error is None else repr(self.per_pixel_error[t])
            w.writerow([t, repr(f), e])
        return buf.getvalue()


def fidelity(A, x, y) -> float:
    r = A @ x - y
    return float(r @ r)


def step_size_window(gamma: float) -> tuple[float, float]:
    """Open interval of PGD step sizes for which the contraction argument applies.

    Intersection of 1/(2(1-g)) < alpha < 1/(1-g) with alpha < 1/(1+g);
    nonempty only for 0 <= g < 1/3.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma >= 1.0 / 3.0:
        raise EmptyWindowError(
            f"no step size is covered for gamma={gamma} (needs gamma < 1/3); "
            "use an empirical step size instead")
    return 1.0 / (2.0 * (1.0 - gamma)), min(1.0 / (1.0 - gamma), 1.0 / (1.0 + gamma))


def contraction_factor(alpha: float, gamma: float) -> float:
    return 1.0 / (alpha * (1.0 - gamma)) - 1.0


# ------------------------------------------------------------------- helpers


def _condition(G, cfg: RecoveryConfig, y: np.ndarray):
    if cfg.im:
        if G.cond_dim != y.shape[0]:
            raise ConditioningError(
                f"IM recovery needs a generator conditioned on {y.shape[0]} measurements, "
                f"got cond_dim={G.cond_dim}")
        return y
    if G.cond_dim != 0:
        raise ConditioningError("marginal recovery was given a conditional generator")
    return None


def _start(S: SensingMatrix, y, x_true):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (S.m,):
        raise nc.DimensionError(f"measurement shape {y.shape} does not match m={S.m}")
    trace = RecoveryTrace(x_true=None if x_true is None else np.asarray(x_true, dtype=np.float64))
    if x_true is not None:
        trace.per_pixel_error = []
    return y, trace


def _check(value: float, where: str):
    if not math.isfinite(value):
        raise RecoveryDiverged(f"non-finite objective in {where}")


def _latent_step(G, z, ycond, loss_fn, tau):
    tape = nc.Tape()
    zv = tape.leaf(z)
    loss = loss_fn(G.forward(zv, ycond))
    (g,) = nc.grad(loss, [zv])
    return float(loss.value), z - tau * g


def _project(G, w, ycond, cfg: RecoveryConfig, rng: RngStream):
    if hasattr(G, "project"):
        return G.project(w, ycond)
    z = rng.gaussian(G.latent_dim)
    target = lambda x: nc.sq_norm(nc.sub(w, x))  # noqa: E731
    for _ in range(cfg.K):
        val, z = _latent_step(G, z, ycond, target, cfg.tau)
        _check(val, "projection")
    return np.asarray(nc.value_of(G.forward(z, ycond)))


def _rng(cfg: RecoveryConfig, rng: RngStream | None) -> RngStream:
    return rng if rng is not None else RngStream(cfg.seed)


# ---------------------------------------------------------------- algorithms


def csgm_recover(G, S: SensingMatrix, y, cfg: RecoveryConfig, rng: RngStream | None = None,
                 x_true=None):
    """Gradient descent on |y - A G(z[, y])|^2 over z, best of ``cfg.restarts`` starts."""
    start = time.perf_counter()
    y, _ = _start(S, y, x_true)
    ycond = _condition(G, cfg, y)
    rng = _rng(cfg, rng)
    A = S.A
    loss_fn = lambda x: nc.sq_norm(nc.sub(nc.matmul(A, x), y))  # noqa: E731

    best = None
    for _ in range(cfg.restarts):
        _, trace = _start(S, y, x_true)
        if cfg.keep_iterates:
            trace.iterates = []
        z = rng.gaussian(G.latent_dim)
        for _t in range(cfg.T):
            x = np.asarray(nc.value_of(G.forward(z, ycond)))
            trace._record(x, A, y, cfg.keep_iterates)
            val, z = _latent_step(G, z, ycond, loss_fn, cfg.tau)
            _check(val, "csgm")
        x = np.asarray(nc.value_of(G.forward(z, ycond)))
        trace._record(x, A, y, cfg.keep_iterates)
        _check(trace.fidelity[-1], "csgm")
        trace.x_hat = x
        if best is None or trace.fidelity[-1] < best.fidelity[-1]:
            best = trace
    best.wall_time = time.perf_counter() - start
    return best.x_hat, best


def _pgd_family(G, S, y, cfg, rng, x_true, U: UnitaryTransform | None, s: int | None):
    start = time.perf_counter()
    y, trace = _start(S, y, x_true)
    ycond = _condition(G, cfg, y)
    rng = _rng(cfg, rng)
    A = S.A
    if cfg.keep_iterates:
        trace.iterates = []
    x = np.zeros(S.d) if cfg.x0 == "zero" else A.T @ y
    trace._record(x, A, y, cfg.keep_iterates)
    for _ in range(cfg.T):
        w = x - cfg.alpha * (A.T @ (A @ x - y))
        x = _project(G, w, ycond, cfg, rng)
        if U is not None:
            x = sparsify(U, x, s)
        trace._record(x, A, y, cfg.keep_iterates)
        _check(trace.fidelity[-1], cfg.method)
    trace.x_hat = x
    trace.wall_time = time.perf_counter() - start
    return x, trace


def pgdgan_recover(G, S: SensingMatrix, y, cfg: RecoveryConfig, rng: RngStream | None = None,
                   x_true=None):
    """Projected gradient descent onto the generator range, from x_0 = 0."""
    return _pgd_family(G, S, y, cfg, rng, x_true, None, None)


def spgdgan_recover(G, S: SensingMatrix, y, U: UnitaryTransform, cfg: RecoveryConfig,
                    rng: RngStream | None = None, x_true=None):
    """PGD with generator projection followed by x <- U h_s(U^T x) each iteration."""
    s = S.d // 2 if cfg.s is None else cfg.s
    if not 0 <= s <= S.d:
        raise ValueError(f"sparsity s={s} outside [0, {S.d}]")
    if U.d != S.d:
        raise ValueError(f"transform dimension {U.d} != signal dimension {S.d}")
    return _pgd_family(G, S, y, cfg, rng, x_true, U, s)


def sparsegen_recover(G, S: SensingMatrix, y, B: UnitaryTransform, cfg: RecoveryConfig,
                      rng: RngStream | None = None, x_true=None):
    """Recover G(z[, y]) + nu with an l1 penalty on the transform coefficients of nu.

    For t < L only z moves (nu stays at its current value, zero initially);
    afterwards z and nu take joint subgradient steps on
    |A(G(z) + nu) - y|^2 + lam_sg * |B nu|_1.
    """
    start = time.perf_counter()
    y, trace = _start(S, y, x_true)
    ycond = _condition(G, cfg, y)
    rng = _rng(cfg, rng)
    A = S.A
    if B.d != S.d:
        raise ValueError(f"transform dimension {B.d} != signal dimension {S.d}")
    basis = B.dense()  # nu @ basis == U^T nu, the transform coefficients of nu
    if cfg.keep_iterates:
        trace.iterates = []

    def objective(x, nu):
        data = nc.sq_norm(nc.sub(nc.matmul(A, nc.add(x, nu)), y))
        return nc.add(data, nc.mul(cfg.lam_sg, nc.l1_norm(nc.matmul(nu, basis))))

    z = rng.gaussian(G.latent_dim)
    nu = np.zeros(S.d)
    for t in range(cfg.T):
        x = np.asarray(nc.value_of(G.forward(z, ycond)))
        trace._record(x + nu, A, y, cfg.keep_iterates)
        tape = nc.Tape()
        zv = tape.leaf(z)
        if t < cfg.L:
            loss = objective(G.forward(zv, ycond), nu)
            (gz,) = nc.grad(loss, [zv])
            z = z - cfg.tau * gz
        else:
            nv = tape.leaf(nu)
            loss = objective(G.forward(zv, ycond), nv)
            gz, gn = nc.grad(loss, [zv, nv])
            z, nu = z - cfg.tau * gz, nu - cfg.tau * gn
        _check(float(loss.value), "sparsegen")
    x = np.asarray(nc.value_of(G.forward(z, ycond))) + nu
    trace._record(x, A, y, cfg.keep_iterates)
    _check(trace.fidelity[-1], "sparsegen")
    trace.x_hat = x
    trace.nu = nu
    trace.wall_time = time.perf_counter() - start
    return x, trace


def recover(G, S: SensingMatrix, y, cfg: RecoveryConfig, U: UnitaryTransform | None = None,
            rng: RngStream | None = None, x_true=None):
    """Dispatch on ``cfg.method``; ``U`` is the sparsifying basis for spgdgan/sparsegen."""
    if cfg.method == "csgm":
        return csgm_recover(G, S, y, cfg, rng, x_true)
    if cfg.method == "pgdgan":
        return pgdgan_recover(G, S, y, cfg, rng, x_true)
    U = U if U is not None else UnitaryTransform.identity(S.d)
    if cfg.method == "spgdgan":
        return spgdgan_recover(G, S, y, U, cfg, rng, x_true)
    return sparsegen_recover(G, S, y, U, cfg, rng, x_true)


__all__ = [
    "METHODS", "EmptyWindowError", "RecoveryConfig", "RecoveryDiverged", "RecoveryTrace",
    "contraction_factor", "csgm_recover", "fidelity", "pgdgan_recover", "recover",
    "sparsegen_recover", "spgdgan_recover", "step_size_window",
]
