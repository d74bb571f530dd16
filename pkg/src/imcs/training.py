"""Generator training: DCGAN and BEGAN objectives, DCS meta-learning, checkpoints.

Every loop draws minibatches and latents from one :class:`RngStream`, so a
run is a deterministic function of (data, sensing matrix, nets, config).
Conditional runs measure each training signal internally as y = A x and
feed it to both networks.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .models import ConditioningError, DiscriminatorNet, GeneratorNet, MlpSpec, reconstruction_loss
from .numcore import RngStream
from .sensing import SensingMatrix

CHECKPOINT_VERSION = 1
LOG_EPS = 1e-12


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "dcgan"  # dcgan | began | dcs
    conditional: bool = False
    steps: int = 1000
    batch: int = 32
    lr: float = 1e-3
    optimizer: str = "sgd"  # sgd | adam
    adam_betas: tuple[float, float] = (0.5, 0.999)
    generator_loss: str = "saturating"  # saturating: ln(1 - D(G)); nonsaturating: -ln D(G)
    # BEGAN
    began_lambda: float = 1e-3
    gamma_div: float = 0.5
    zeta0: float = 0.0
    began_p: int = 1
    # DCS
    dcs_lambda: float = 1.0
    dcs_T: int = 3
    dcs_tau: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.objective not in ("dcgan", "began", "dcs"):
            raise ValueError(f"unknown training objective {self.objective!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.gamma_div <= 1.0:
            raise ValueError("gamma_div must lie in [0, 1]")
        if not 0.0 <= self.zeta0 <= 1.0:
            raise ValueError("zeta0 must lie in [0, 1]")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.generator_loss not in ("saturating", "nonsaturating"):
            raise ValueError(f"unknown generator loss {self.generator_loss!r}")
        if self.dcs_T < 0 or self.dcs_tau < 0 or self.dcs_lambda < 0:
            raise ValueError("DCS inner settings must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["adam_betas"] = list(self.adam_betas)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "adam_betas" in doc:
            doc["adam_betas"] = tuple(doc["adam_betas"])
        return cls(**doc)


class Optimizer:
    """Plain gradient descent, or Adam when ``kind == 'adam'``."""

    def __init__(self, kind: str, lr: float, betas=(0.5, 0.999), eps: float = 1e-8):
        self.kind, self.lr, self.betas, self.eps = kind, lr, betas, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.kind == "sgd":
            return params - self.lr * g
        b1, b2 = self.betas
        if self.m is None:
            self.m, self.v = np.zeros_like(g), np.zeros_like(g)
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def measure_batch(S: SensingMatrix, X: np.ndarray) -> np.ndarray:
    return X @ S.A.T


def _check_conditioning(cfg: TrainConfig, S: SensingMatrix, *nets):
    want = S.m if cfg.conditional else 0
    for net in nets:
        if net is not None and net.cond_dim != want:
            raise ConditioningError(
                f"{type(net).__name__} has cond_dim={net.cond_dim} but the run needs {want}")


def _indices(n: int, cfg: TrainConfig, rng: RngStream) -> np.ndarray:
    # batch >= n means deterministic full-batch steps
    if cfg.batch >= n:
        return np.arange(n)
    return rng.integers(0, n, size=cfg.batch)


def _batch(data: np.ndarray, S: SensingMatrix, cfg: TrainConfig, rng: RngStream):
    x = data[_indices(data.shape[0], cfg, rng)]
    y = measure_batch(S, x) if cfg.conditional else None
    return x, y


def _finite(value: float, step: int, what: str = "loss") -> float:
    if not math.isfinite(value):
        raise TrainingDiverged(step, what)
    return value


# --------------------------------------------------------------------- DCGAN


def dcgan_losses(G, D, x, y, z, theta, phi, generator_loss="saturating"):
    """Minibatch discriminator loss (negated ascent objective) and generator loss."""
    fake = G.forward(z, y, theta)
    d_real = D.forward(x, y, phi)
    d_fake = D.forward(fake, y, phi)
    d_loss = nc.neg(nc.mean(nc.add(nc.log(d_real, LOG_EPS), nc.log(nc.sub(1.0, d_fake), LOG_EPS))))
    if generator_loss == "saturating":
        g_loss = nc.mean(nc.log(nc.sub(1.0, d_fake), LOG_EPS))
    else:
        g_loss = nc.neg(nc.mean(nc.log(d_fake, LOG_EPS)))
    return d_loss, g_loss


def train_dcgan(data, S: SensingMatrix, G: GeneratorNet, D: DiscriminatorNet, cfg: TrainConfig,
                rng: RngStream | None = None):
    """Alternate one discriminator ascent step and one generator descent step per batch.

    Returns (G, D, history) where history holds per-step ``d_loss``/``g_loss``.
    """
    data = np.asarray(data, dtype=np.float64)
    _check_conditioning(cfg, S, G, D)
    if D.shape != "scalar":
        raise ValueError("DCGAN training needs a scalar discriminator")
    rng = rng or RngStream(cfg.seed)
    theta, phi = G.params.copy(), D.params.copy()
    opt_g = Optimizer(cfg.optimizer, cfg.lr, cfg.adam_betas)
    opt_d = Optimizer(cfg.optimizer, cfg.lr, cfg.adam_betas)
    history = {"d_loss": [], "g_loss": []}
    for k in range(cfg.steps):
        x, y = _batch(data, S, cfg, rng)
        z = rng.gaussian((x.shape[0], G.latent_dim))

        tape = nc.Tape()
        pv = tape.leaf(phi)
        d_loss, _ = dcgan_losses(G, D, x, y, z, theta, pv, cfg.generator_loss)
        (gphi,) = nc.grad(d_loss, [pv])
        history["d_loss"].append(_finite(float(d_loss.value), k, "discriminator loss"))
        phi = opt_d.step(phi, gphi)

        tape = nc.Tape()
        tv = tape.leaf(theta)
        _, g_loss = dcgan_losses(G, D, x, y, z, tv, phi, cfg.generator_loss)
        (gtheta,) = nc.grad(g_loss, [tv])
        history["g_loss"].append(_finite(float(g_loss.value), k, "generator loss"))
        theta = opt_g.step(theta, gtheta)
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(phi))):
            raise TrainingDiverged(k, "parameters")
    return G.with_params(theta), D.with_params(phi), history


# --------------------------------------------------------------------- BEGAN


def zeta_update(zeta: float, lam: float, gamma_div: float, r_real: float, r_fake: float) -> float:
    return min(max(zeta + lam * (gamma_div * r_real - r_fake), 0.0), 1.0)


def train_began(data, S: SensingMatrix, G: GeneratorNet, D: DiscriminatorNet, cfg: TrainConfig,
                rng: RngStream | None = None):
    """Autoencoder-discriminator training with the clamped balance variable zeta.

    Per step, with both gradients taken at the current (theta, phi):
    phi descends mean R(x) - zeta R(G(z_D)); theta descends mean R(G(z_G));
    zeta <- clip(zeta + lambda (gamma_div R(x) - R(G(z_G))), 0, 1).
    """
    data = np.asarray(data, dtype=np.float64)
    _check_conditioning(cfg, S, G, D)
    if D.shape != "autoencoder":
        raise ValueError("BEGAN training needs an autoencoder discriminator")
    rng = rng or RngStream(cfg.seed)
    theta, phi = G.params.copy(), D.params.copy()
    opt_g = Optimizer(cfg.optimizer, cfg.lr, cfg.adam_betas)
    opt_d = Optimizer(cfg.optimizer, cfg.lr, cfg.adam_betas)
    zeta = cfg.zeta0
    history = {"zeta": [zeta], "r_real": [], "r_fake": [], "d_loss": []}
    p = cfg.began_p
    for k in range(cfg.steps):
        x, y = _batch(data, S, cfg, rng)
        zD = rng.gaussian((x.shape[0], G.latent_dim))
        zG = rng.gaussian((x.shape[0], G.latent_dim))

        tape = nc.Tape()
        pv = tape.leaf(phi)
        fake_d = np.asarray(G.forward(zD, y, theta))
        r_real = nc.mean(reconstruction_loss(D, x, y, p, pv))
        r_fake_d = nc.mean(reconstruction_loss(D, fake_d, y, p, pv))
        d_loss = nc.sub(r_real, nc.mul(zeta, r_fake_d))
        (gphi,) = nc.grad(d_loss, [pv])

        tape = nc.Tape()
        tv = tape.leaf(theta)
        r_fake = nc.mean(reconstruction_loss(D, G.forward(zG, y, tv), y, p, phi))
        (gtheta,) = nc.grad(r_fake, [tv])

        rr = _finite(float(r_real.value), k, "real reconstruction loss")
        rf = _finite(float(r_fake.value), k, "fake reconstruction loss")
        history["d_loss"].append(_finite(float(d_loss.value), k))
        history["r_real"].append(rr)
        history["r_fake"].append(rf)
        phi = opt_d.step(phi, gphi)
        theta = opt_g.step(theta, gtheta)
        zeta = zeta_update(zeta, cfg.began_lambda, cfg.gamma_div, rr, rf)
        history["zeta"].append(zeta)
    return G.with_params(theta), D.with_params(phi), history


# ----------------------------------------------------------------------- DCS


def dcs_inner(G, A, y, z0, theta, T: int, tau: float, conditional: bool):
    """T latent gradient steps per sample on |y_i - A G(z_i[, y_i])|^2 with theta fixed."""
    z = z0
    ycond = y if conditional else None
    for _ in range(T):
        tape = nc.Tape()
        zv = tape.leaf(z)
        x = G.forward(zv, ycond, theta)
        loss = nc.sq_norm(nc.sub(nc.matmul(x, A.T), y))  # sum over samples: per-row gradients
        (g,) = nc.grad(loss, [zv])
        z = z - tau * g
    return z


def isometry_gap(A, x1, x2):
    """Per-sample (|A(x1 - x2)| - |x1 - x2|)^2."""
    diff = nc.sub(x1, x2)
    gap = nc.sub(nc.l2_norm(nc.matmul(diff, A.T), axis=-1), nc.l2_norm(diff, axis=-1))
    return nc.mul(gap, gap)


def dcs_objective(G, A, x, y, z0, zT, theta, lam: float, conditional: bool):
    """M(theta) + lam * R(theta) on a batch, latents treated as constants.

    R averages (|A(x1 - x2)| - |x1 - x2|)^2 over the three distinct pairs of
    {x, G(z_0), G(z_T)}; identical pairs contribute zero.
    """
    ycond = y if conditional else None
    g0 = G.forward(z0, ycond, theta)
    gT = G.forward(zT, ycond, theta)
    n = x.shape[0]
    M = nc.mul(nc.sq_norm(nc.sub(y, nc.matmul(gT, A.T))), 1.0 / n)
    pairs = [(x, g0), (x, gT), (g0, gT)]
    R = 0.0
    for a, b in pairs:
        R = nc.add(R, nc.sum_(isometry_gap(A, a, b)))
    R = nc.mul(R, 1.0 / (len(pairs) * n))
    return nc.add(M, nc.mul(lam, R)), M, R


def train_dcs(data, S: SensingMatrix, G: GeneratorNet, cfg: TrainConfig,
              rng: RngStream | None = None):
    """Meta-learn generator weights jointly with per-sample latent adaptation."""
    data = np.asarray(data, dtype=np.float64)
    _check_conditioning(cfg, S, G)
    rng = rng or RngStream(cfg.seed)
    A = S.A
    theta = G.params.copy()
    opt = Optimizer(cfg.optimizer, cfg.lr, cfg.adam_betas)
    history = {"loss": [], "M": [], "R": []}
    for k in range(cfg.steps):
        x = data[_indices(data.shape[0], cfg, rng)]
        y = measure_batch(S, x)
        z0 = rng.gaussian((x.shape[0], G.latent_dim))
        zT = dcs_inner(G, A, y, z0, theta, cfg.dcs_T, cfg.dcs_tau, cfg.conditional)

        tape = nc.Tape()
        tv = tape.leaf(theta)
        loss, M, R = dcs_objective(G, A, x, y, z0, zT, tv, cfg.dcs_lambda, cfg.conditional)
        (g,) = nc.grad(loss, [tv])
        history["loss"].append(_finite(float(loss.value), k))
        history["M"].append(float(nc.value_of(M)))
        history["R"].append(float(nc.value_of(R)))
        theta = opt.step(theta, g)
        if not np.all(np.isfinite(theta)):
            raise TrainingDiverged(k, "parameters")
    return G.with_params(theta), history


# --------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    generator: GeneratorNet
    discriminator: DiscriminatorNet | None = None
    sensing: SensingMatrix | None = None
    config: dict = field(default_factory=dict)
    final_losses: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @property
    def cond_dim(self) -> int:
        return self.generator.cond_dim

    def to_dict(self) -> dict:
        G, D = self.generator, self.discriminator
        return {
            "version": self.version,
            "spec": G.spec.to_dict(),
            "params": G.params.tolist(),
            "latent_dim": G.latent_dim,
            "cond_dim": G.cond_dim,
            "discriminator": None if D is None else {
                "spec": D.spec.to_dict(), "params": D.params.tolist(),
                "shape": D.shape, "cond_dim": D.cond_dim,
            },
            "sensing_seed": None if self.sensing is None else self.sensing.seed,
            "sensing": None if self.sensing is None else self.sensing.to_dict(embed=True),
            "config": self.config,
            "final_losses": self.final_losses,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Checkpoint":
        version = doc.get("version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {version!r} is not supported (expected {CHECKPOINT_VERSION})")
        try:
            G = GeneratorNet(MlpSpec.from_dict(doc["spec"]), np.asarray(doc["params"], dtype=np.float64),
                             int(doc["latent_dim"]), int(doc["cond_dim"]))
            D = None
            if doc.get("discriminator"):
                dd = doc["discriminator"]
                D = DiscriminatorNet(MlpSpec.from_dict(dd["spec"]), np.asarray(dd["params"], dtype=np.float64),
                                     dd["shape"], int(dd["cond_dim"]))
            S = SensingMatrix.from_dict(doc["sensing"]) if doc.get("sensing") else None
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpointError(f"malformed checkpoint: {exc}") from exc
        return cls(G, D, S, doc.get("config", {}), doc.get("final_losses", {}), version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_text(json.dumps(ckpt.to_dict()))


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: not a valid checkpoint ({exc})") from exc
    if not isinstance(doc, dict):
        raise CorruptCheckpointError(f"{path}: checkpoint must be a JSON object")
    return Checkpoint.from_dict(doc)
