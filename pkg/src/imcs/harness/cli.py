"""Command-line entry point.

Every subcommand reads an optional flat JSON object (``--config``) whose
keys are listed in ``SCHEMAS`` / :class:`ExperimentConfig`; ``--seed``
overrides the config seed.  Exit codes: 0 success, 1 config error,
2 runtime failure, 3 a failed ``verify-thm1`` audit.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..numcore import RngStream, stream_id
from ..rip import empirical_rip_rate, theorem2_min_m
from ..transforms import UnitaryTransform
from .data import ground_truth_basis, make_dataset
from .experiment import (
    ConfigError, ExperimentConfig, _jsonable, run_experiment, save_checkpoints, train_all,
    write_outputs,
)
from .metrics import presence_probability, sign_test
from .theorem import theorem1_verification

log = logging.getLogger("imcs")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3

SCHEMAS = {
    "rip": {"m": None, "d": 64, "s": 4, "T": 10, "tau": 0.1, "gamma": 3.0, "n_seeds": 200,
            "transforms": ["identity", "haar"], "convention": "squared", "seed": 0},
    "bound": {"s": 4, "T": 10, "tau": 0.1, "gamma": 3.0},
    "verify-thm1": {"d": 2048, "m": None, "s": 4, "gamma": 0.25, "T": 60, "n_seeds": 10,
                    "transform": "identity", "alpha": None, "seed": 0},
    "presence": {"m": 16, "eps": 0.125, "n_z": 1000, "n_signals": 64, "per_pixel": True,
                 "experiment": {}},
}


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _flat(command: str, doc: dict, seed) -> dict:
    schema = SCHEMAS[command]
    unknown = set(doc) - set(schema)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
    out = {**schema, **doc}
    if seed is not None and "seed" in schema:
        out["seed"] = seed
    return out


def _experiment(doc: dict, seed, **defaults) -> ExperimentConfig:
    doc = {**defaults, **doc}
    if seed is not None:
        doc["seed"] = seed
    return ExperimentConfig.from_dict(doc)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True))


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args, doc):
    cfg = _experiment(doc, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "train.csv", make_dataset(cfg.data_config, cfg.n_train, "train"), delimiter=",")
    np.savetxt(out / "test.csv", make_dataset(cfg.data_config, cfg.trials * cfg.n_test, "test"),
               delimiter=",")
    np.savetxt(out / "basis.csv", ground_truth_basis(cfg.data_config), delimiter=",")
    return EXIT_OK


def cmd_train(args, doc):
    cfg = _experiment(doc, args.seed)
    ckpts = train_all(cfg, args.jobs)
    paths = save_checkpoints(Path(args.out) / "checkpoints", ckpts)
    failed = {str(k): v for k, v in ckpts.items() if isinstance(v, str)}
    _write_json(Path(args.out) / "train.json",
                {"checkpoints": [p.name for p in paths], "failed": failed})
    return EXIT_RUNTIME if failed else EXIT_OK


def _run_and_write(args, cfg: ExperimentConfig, timing: bool):
    start = time.perf_counter()
    reports, _ = run_experiment(cfg, args.jobs)
    report = write_outputs(args.out, cfg, reports)
    if timing:
        # wall-clock numbers live outside results.csv so that file stays reproducible
        _write_json(Path(args.out) / "timing.json", {
            "total_s": time.perf_counter() - start, "jobs": args.jobs,
        })
    for row in report["paired"]:
        log.info("%-9s m=%-3d IM %.4g vs marginal %.4g  wins %d/%d  p=%.3g", row["method"],
                 row["m"], row["im_mean"], row["marginal_mean"], row["im_wins"], row["non_tied"],
                 row["p_value"])
    return EXIT_RUNTIME if report["failed"] else EXIT_OK


def cmd_recover(args, doc):
    return _run_and_write(args, _experiment(doc, args.seed), timing=False)


def cmd_bench(args, doc):
    """The matched-budget ablation: marginal latent size m + IM latent size."""
    cfg = _experiment(doc, args.seed, methods=["csgm"], ablation=True)
    return _run_and_write(args, cfg, timing=True)


def cmd_rip(args, doc):
    c = _flat("rip", doc, args.seed)
    m = c["m"] if c["m"] is not None else theorem2_min_m(c["s"], c["T"], c["tau"], c["gamma"])
    seeds = [stream_id("rip", c["seed"], i) for i in range(c["n_seeds"])]
    n = c["n_seeds"]
    p_target = 1 - c["tau"]
    floor = p_target - 3 * np.sqrt(p_target * (1 - p_target) / n)
    rows = {}
    for kind in c["transforms"]:
        U = UnitaryTransform(kind, c["d"])
        rate = empirical_rip_rate(m, c["d"], c["s"], c["T"], c["gamma"], seeds, U, c["convention"])
        rows[kind] = {"pass_rate": rate, "floor": floor, "ok": bool(rate >= floor)}
    _write_json(Path(args.out) / "rip.json", {"config": c, "m": m, "transforms": rows})
    print(json.dumps({"m": m, **{k: v["pass_rate"] for k, v in rows.items()}}))
    return EXIT_OK


def cmd_bound(args, doc):
    c = _flat("bound", doc, None)
    for key in ("s", "T", "tau", "gamma"):
        if getattr(args, key) is not None:
            c[key] = getattr(args, key)
    m = theorem2_min_m(c["s"], c["T"], c["tau"], c["gamma"])
    print(m)
    if args.out:
        _write_json(Path(args.out) / "bound.json", {**c, "m": m})
    return EXIT_OK


def cmd_presence(args, doc):
    c = _flat("presence", doc, None)
    cfg = _experiment(c["experiment"], args.seed, ms=[c["m"]], methods=["csgm"])
    ckpts = train_all(cfg, args.jobs)
    cond, marg = ckpts[("gan", True, c["m"])], ckpts[("gan", False, c["m"])]
    for ck in (cond, marg):
        if isinstance(ck, str):
            raise RuntimeError(ck)
    X = make_dataset(cfg.data_config, c["n_signals"], "presence")
    rng = RngStream(stream_id("presence", cfg.seed))  # matched z draws for both generators
    pc = presence_probability(cond.generator, X, cond.sensing, c["eps"], c["n_z"], rng, c["per_pixel"])
    pm = presence_probability(marg.generator, X, marg.sensing, c["eps"], c["n_z"], rng, c["per_pixel"])
    wins, n, p = sign_test(-pc[2], -pm[2])
    doc = {"config": c, "conditional": {"mean": pc[0], "std": pc[1]},
           "marginal": {"mean": pm[0], "std": pm[1]},
           "sign_test": {"wins": wins, "non_tied": n, "p_value": p}}
    _write_json(Path(args.out) / "presence.json", doc)
    print(f"conditional {pc[0]:.3f} ± {pc[1]:.3f}  marginal {pm[0]:.3f} ± {pm[1]:.3f}  p={p:.3g}")
    return EXIT_OK


def cmd_verify_thm1(args, doc):
    c = _flat("verify-thm1", doc, args.seed)
    m = c["m"] if c["m"] is not None else theorem2_min_m(c["s"], 10, 0.1, c["gamma"])
    rep = theorem1_verification(c["d"], m, c["s"], c["gamma"], range(c["n_seeds"]), T=c["T"],
                                transform=c["transform"], alpha=c["alpha"], base_seed=c["seed"])
    _write_json(Path(args.out) / "thm1.json", rep.to_dict())
    print(f"rip-passing seeds {len(rep.rip_passing)}/{len(rep.audits)}  "
          f"contraction {rep.contraction_rate:.3f}  R^2 {rep.r_squared:.4f}")
    return EXIT_OK if rep.passed else EXIT_ASSERT


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "recover": cmd_recover, "bench": cmd_bench,
    "rip": cmd_rip, "bound": cmd_bound, "presence": cmd_presence, "verify-thm1": cmd_verify_thm1,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="imcs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "bound":
            p.add_argument("--s", type=int)
            p.add_argument("--T", type=int)
            p.add_argument("--tau", type=float)
            p.add_argument("--gamma", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc = _read_config(args.config)
        return COMMANDS[args.command](args, doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
