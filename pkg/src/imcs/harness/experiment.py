"""Experiment orchestration: train generators per (m, IM flag), run paired recovery trials.

A run is a pure function of its :class:`ExperimentConfig`.  Every trained
net and every recovery trial draws from its own stream keyed by a stable
hash of its labels, so results do not depend on ``jobs`` or on the order in
which cells finish.  Rows are sorted by (method, im, m, trial) on output.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..models import make_discriminator, make_generator
from ..numcore import RngStream, stream_id
from ..recovery import RecoveryConfig, recover
from ..sensing import SensingMatrix, sample_sensing
from ..training import (
    Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_began, train_dcgan, train_dcs,
)
from ..transforms import UnitaryTransform
from .data import DataConfig, make_dataset
from .metrics import confidence_interval, per_pixel_error, sign_test

CSV_HEADER = ["method", "im", "m", "trial", "per_pixel_error", "ci_halfwidth", "iters", "wall_ms"]
EXPERIMENT_METHODS = ("csgm", "pgdgan", "spgdgan", "sparsegen", "dcs")

DEFAULT_TRAIN = {
    "steps": 2000, "batch": 64, "lr": 1e-3, "optimizer": "adam",
    "generator_loss": "nonsaturating", "dcs_lambda": 1.0, "dcs_T": 3, "dcs_tau": 0.01,
}
# tau = 0.1 makes the nu-step of sparsegen unstable once |A^T A| > 10, as happens for m << d
DEFAULT_RECOVERY = {"sparsegen": {"tau": 0.02}}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 64
    k: int = 10
    scale: float = 0.5
    ms: tuple[int, ...] = (8, 16, 32)
    methods: tuple[str, ...] = EXPERIMENT_METHODS
    im: tuple[bool, ...] = (False, True)
    latent_dim: int = 8
    latent_dim_im: int = 8
    ablation: bool = False  # marginal latent becomes m + latent_dim_im
    hidden: tuple[int, ...] = (128,)
    hidden_act: str = "tanh"
    gan_objective: str = "dcgan"
    n_train: int = 2000
    n_test: int = 1
    trials: int = 50
    train: dict = field(default_factory=dict)
    recovery: dict = field(default_factory=dict)
    transform: str = "haar"
    seed: int = 0
    checkpoint_dir: str | None = None
    record_timing: bool = False

    def __post_init__(self):
        for name in ("ms", "methods", "im", "hidden"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_test < 1 or self.trials < 1:
            raise ConfigError("n_test and trials must be at least 1")
        if self.d < 1 or self.k < 1 or not self.ms or any(m < 1 for m in self.ms):
            raise ConfigError("d, k and every m must be positive")
        for meth in self.methods:
            if meth not in EXPERIMENT_METHODS:
                raise ConfigError(f"unknown method {meth!r}")
        if self.gan_objective not in ("dcgan", "began"):
            raise ConfigError(f"unknown GAN objective {self.gan_objective!r}")
        if self.transform not in ("haar", "identity"):
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.checkpoint_dir is not None:
            for fam, im, m in self.train_cells():
                path = Path(self.checkpoint_dir) / checkpoint_name(fam, im, m)
                if not path.exists():
                    raise ConfigError(f"missing checkpoint {path}")
        try:
            self.train_config("gan", False)
            for meth in self.methods:
                self.recovery_config(meth, False)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @property
    def data_config(self) -> DataConfig:
        return DataConfig(d=self.d, k=self.k, scale=self.scale, seed=self.seed)

    def latent_for(self, im: bool, m: int) -> int:
        if im:
            return self.latent_dim_im
        return m + self.latent_dim_im if self.ablation else self.latent_dim

    def train_config(self, family: str, im: bool) -> TrainConfig:
        opts = {**DEFAULT_TRAIN, **self.train}
        objective = "dcs" if family == "dcs" else self.gan_objective
        return TrainConfig.from_dict({**opts, "objective": objective, "conditional": im})

    def recovery_config(self, method: str, im: bool) -> RecoveryConfig:
        if method == "dcs":
            tc = self.train_config("dcs", im)
            base, opts = "csgm", {"T": tc.dcs_T, "tau": tc.dcs_tau}
        else:
            base, opts = method, dict(DEFAULT_RECOVERY.get(method, {}))
        opts.update(self.recovery.get(method, {}))
        return RecoveryConfig.defaults(base, im=im, **opts)

    def train_cells(self) -> list[tuple[str, bool, int]]:
        fams = sorted({"dcs" if meth == "dcs" else "gan" for meth in self.methods})
        return [(f, im, m) for f in fams for im in sorted(self.im) for m in self.ms]


@dataclass
class TrialReport:
    method: str
    im: bool
    m: int
    trial: int
    per_pixel_error: float
    ci_halfwidth: float
    iters: int
    wall_ms: float = 0.0
    status: str = "ok"
    errors: list[float] = field(default_factory=list)

    @property
    def key(self):
        return (self.method, self.im, self.m, self.trial)

    def csv_row(self) -> list[str]:
        return [self.method, str(int(self.im)), str(self.m), str(self.trial),
                repr(self.per_pixel_error), repr(self.ci_halfwidth), str(self.iters),
                repr(round(self.wall_ms, 3))]


def checkpoint_name(family: str, im: bool, m: int) -> str:
    return f"{family}_{'im' if im else 'marginal'}_m{m}.json"


def sensing_for(cfg: ExperimentConfig, m: int) -> SensingMatrix:
    return sample_sensing(m, cfg.d, RngStream(stream_id("sensing", cfg.seed, m)))


def train_cell(cfg: ExperimentConfig, family: str, im: bool, m: int) -> Checkpoint:
    """Train the generator used by ``family`` ('gan' or 'dcs') for one (IM flag, m)."""
    S = sensing_for(cfg, m)
    X = make_dataset(cfg.data_config, cfg.n_train, "train")
    tcfg = replace(cfg.train_config(family, im), seed=stream_id("train", cfg.seed, family, im, m))
    rng = RngStream(tcfg.seed)
    cond = m if im else 0
    G = make_generator(cfg.latent_for(im, m), cfg.d, cfg.hidden, cond, cfg.hidden_act, "linear",
                       rng=rng.child("init", "G"))
    D = None
    if family == "dcs":
        G, hist = train_dcs(X, S, G, tcfg, rng.child("loop"))
        final = {"loss": hist["loss"][-1] if hist["loss"] else None}
    else:
        shape = "scalar" if tcfg.objective == "dcgan" else "autoencoder"
        D = make_discriminator(cfg.d, cfg.hidden, cond, shape, "relu", rng=rng.child("init", "D"))
        loop = train_dcgan if tcfg.objective == "dcgan" else train_began
        G, D, hist = loop(X, S, G, D, tcfg, rng.child("loop"))
        final = {k: v[-1] for k, v in hist.items() if v}
    return Checkpoint(G, D, S, {"experiment": cfg.to_dict(), "train": tcfg.to_dict()}, final)


def _obtain_cell(cfg: ExperimentConfig, cell) -> Checkpoint:
    if cfg.checkpoint_dir is not None:
        ckpt = load_checkpoint(Path(cfg.checkpoint_dir) / checkpoint_name(*cell))
        if ckpt.cond_dim != (cell[2] if cell[1] else 0):
            raise ConfigError(f"checkpoint for {cell} has cond_dim={ckpt.cond_dim}")
        return ckpt
    return train_cell(cfg, *cell)


def run_trial(cfg: ExperimentConfig, G, S: SensingMatrix, X_test, method: str, im: bool, m: int,
              trial: int) -> TrialReport:
    """One paired trial: the same test signals for every (method, im) at this m."""
    try:
        rcfg = cfg.recovery_config(method, im)
        U = UnitaryTransform(cfg.transform, cfg.d)
        rng = RngStream(stream_id("recover", cfg.seed, method, im, m, trial))
        signals = X_test[trial * cfg.n_test:(trial + 1) * cfg.n_test]
        errs, iters, wall = [], 0, 0.0
        for i, x in enumerate(signals):
            x_hat, trace = recover(G, S, S.A @ x, rcfg, U=U, rng=rng.child(i))
            errs.append(per_pixel_error(x_hat, x))
            iters = max(iters, trace.iters)
            wall += trace.wall_time
        half = confidence_interval(errs)[1] if len(errs) >= 2 else math.nan
        return TrialReport(method, im, m, trial, float(np.mean(errs)), half, iters,
                           1000.0 * wall if cfg.record_timing else 0.0, "ok", errs)
    except Exception as exc:  # a failing cell is reported, the run continues
        return TrialReport(method, im, m, trial, math.nan, math.nan, 0, 0.0,
                           f"failed: {type(exc).__name__}: {exc}")


def _trial_task(args):
    cfg, G, S, X_test, method, im, m, trial = args
    return run_trial(cfg, G, S, X_test, method, im, m, trial)


def _train_task(args):
    cfg, cell = args
    try:
        return cell, _obtain_cell(cfg, cell), None
    except Exception as exc:
        return cell, None, f"failed: {type(exc).__name__}: {exc}"


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, len(tasks))) as ex:
        return list(ex.map(fn, tasks))


def train_all(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    """Checkpoints for every (family, im, m) cell the config needs, keyed by that tuple."""
    out = {}
    for cell, ckpt, err in _map(_train_task, [(cfg, c) for c in cfg.train_cells()], jobs):
        out[cell] = ckpt if err is None else err
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, checkpoints: dict | None = None):
    """All (method, im, m, trial) cells; returns (sorted reports, checkpoints)."""
    checkpoints = checkpoints if checkpoints is not None else train_all(cfg, jobs)
    X_test = make_dataset(cfg.data_config, cfg.trials * cfg.n_test, "test")
    tasks, reports = [], []
    for method in cfg.methods:
        family = "dcs" if method == "dcs" else "gan"
        for im in cfg.im:
            for m in cfg.ms:
                ckpt = checkpoints[(family, im, m)]
                for trial in range(cfg.trials):
                    if isinstance(ckpt, str):
                        reports.append(TrialReport(method, im, m, trial, math.nan, math.nan, 0,
                                                   0.0, ckpt))
                    else:
                        tasks.append((cfg, ckpt.generator, ckpt.sensing, X_test, method, im, m, trial))
    reports.extend(_map(_trial_task, tasks, jobs))
    reports.sort(key=lambda r: (r.method, r.im, r.m, r.trial))
    return reports, checkpoints


def paired_table(reports: list[TrialReport]) -> list[dict]:
    """IM against marginal per (method, m): means, sign-test wins and one-sided p-value."""
    by = {}
    for r in reports:
        by.setdefault((r.method, r.m), {}).setdefault(r.im, {})[r.trial] = r.per_pixel_error
    rows = []
    for (method, m), side in sorted(by.items()):
        if True not in side or False not in side:
            continue
        trials = sorted(set(side[True]) & set(side[False]))
        a = np.array([side[True][t] for t in trials])
        b = np.array([side[False][t] for t in trials])
        ok = np.isfinite(a) & np.isfinite(b)
        wins, n, p = sign_test(a[ok], b[ok])
        rows.append({
            "method": method, "m": m, "trials": int(ok.sum()),
            "im_mean": float(np.mean(a[ok])) if ok.any() else math.nan,
            "marginal_mean": float(np.mean(b[ok])) if ok.any() else math.nan,
            "im_wins": wins, "non_tied": n, "p_value": p, "pass": bool(p < 0.05),
        })
    return rows


def results_csv(reports: list[TrialReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    return x


def write_outputs(out_dir, cfg: ExperimentConfig, reports: list[TrialReport], extra=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(reports))
    report = {
        "config": cfg.to_dict(),
        "trials": [asdict(r) for r in reports],
        "paired": paired_table(reports),
        "failed": [list(r.key) for r in reports if r.status != "ok"],
    }
    if extra:
        report.update(extra)
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=1, sort_keys=True))
    return report


def save_checkpoints(out_dir, checkpoints: dict) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for cell, ckpt in sorted(checkpoints.items()):
        if isinstance(ckpt, Checkpoint):
            path = out / checkpoint_name(*cell)
            save_checkpoint(path, ckpt)
            paths.append(path)
    return paths
