"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import time
from itertools import combinations

import numpy as np
import pytest

from imcs import numcore as nc
from imcs.harness import cli
from imcs.harness.data import make_dataset
from imcs.harness.experiment import ExperimentConfig, paired_table, results_csv, run_experiment, train_all
from imcs.harness.metrics import presence_probability, sign_test
from imcs.harness.theorem import theorem1_verification
from imcs.models import (
    ACTIVATIONS, GeneratorNet, IdentityGenerator, MlpSpec, make_discriminator, make_generator,
    reconstruction_loss,
)
from imcs.numcore import RngStream, stream_id
from imcs.recovery import RecoveryConfig, spgdgan_recover
from imcs.rip import empirical_rip_rate, theorem2_min_m
from imcs.sensing import sample_sensing
from imcs.training import dcgan_losses, dcs_objective
from imcs.transforms import UnitaryTransform, hard_threshold

from conftest import central_diff, rel_err


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        return ok
    return emit


# ------------------------------------------------------------------ 1. gradients


def _random_net(rng):
    depth = int(rng.integers(1, 4))
    widths = [int(w) for w in rng.integers(1, 7, size=depth + 1)]
    acts = [str(a) for a in rng.choice(["relu", "tanh", "sigmoid", "linear"], size=depth)]
    cond = int(rng.integers(0, min(widths[0], 3) + 1))
    latent = widths[0] - cond
    if latent == 0:
        widths[0] += 1
        latent = 1
    spec = MlpSpec(tuple(widths), tuple(acts))
    # random biases too, so no unit sits exactly on a relu kink
    return GeneratorNet(spec, rng.normal(size=spec.n_params), latent, cond)


def _relu_margin(G, z, y):
    """Smallest |pre-activation| feeding a relu; central differences need it away from 0."""
    h = z if y is None else np.concatenate([z, y], axis=-1)
    margin = np.inf
    for (w_off, b_off, fan_in, fan_out), act in zip(G.spec.layout(), G.spec.activations):
        pre = h @ G.params[w_off:b_off].reshape(fan_in, fan_out) + G.params[b_off:b_off + fan_out]
        if act == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
        h = np.asarray(nc.value_of(ACTIVATIONS[act](pre)))
    return margin


def _objective_cases():
    """(name, fn, args) for every loss the recovery and training loops differentiate."""
    r = RngStream(42)
    d, m, v = 8, 4, 3
    A = sample_sensing(m, d, r.child("A")).A
    y = r.child("y").gaussian(m)
    w = r.child("w").gaussian(d)
    G = make_generator(v, d, hidden=(6,), cond_dim=m, hidden_act="tanh", out_act="linear", rng=r.child("G"))
    M = make_generator(v, d, hidden=(6,), hidden_act="tanh", out_act="linear", rng=r.child("M"))
    basis = UnitaryTransform.haar(d).dense()
    z = r.child("z").gaussian(v)
    nu = r.child("nu").gaussian(d)  # away from the l1 kink
    cases = [
        ("csgm", lambda zz: nc.sq_norm(nc.sub(nc.matmul(A, M.forward(zz)), y)), [z]),
        ("csgm-im", lambda zz: nc.sq_norm(nc.sub(nc.matmul(A, G.forward(zz, y)), y)), [z]),
        ("pgd-projection", lambda zz: nc.sq_norm(nc.sub(w, M.forward(zz))), [z]),
        ("pgd-projection-im", lambda zz: nc.sq_norm(nc.sub(w, G.forward(zz, y))), [z]),
        ("sparsegen", lambda zz, n: nc.add(nc.sq_norm(nc.sub(nc.matmul(A, nc.add(G.forward(zz, y), n)), y)),
                                           nc.mul(0.5, nc.l1_norm(nc.matmul(n, basis)))), [z, nu]),
    ]
    # training objectives
    X = r.child("X").gaussian((5, d))
    Y = X @ A.T
    Z = r.child("Z").gaussian((5, v))
    D = make_discriminator(d, hidden=(5,), cond_dim=m, hidden_act="tanh", rng=r.child("D"))
    E = make_discriminator(d, hidden=(5,), cond_dim=m, shape="autoencoder", hidden_act="tanh", rng=r.child("E"))
    cases += [
        ("dcgan-d", lambda p: dcgan_losses(G, D, X, Y, Z, G.params, p)[0], [D.params]),
        ("dcgan-g", lambda p: dcgan_losses(G, D, X, Y, Z, p, D.params, "nonsaturating")[1], [G.params]),
        ("began-d", lambda p: nc.sub(nc.mean(reconstruction_loss(E, X, Y, 2, p)),
                                     nc.mul(0.4, nc.mean(reconstruction_loss(E, np.asarray(G(Z, Y)), Y, 2, p)))),
         [E.params]),
        ("began-g", lambda p: nc.mean(reconstruction_loss(E, G.forward(Z, Y, p), Y, 2)), [G.params]),
        ("dcs", lambda p: dcs_objective(G, A, X, Y, Z, Z + 0.3, p, 1.0, True)[0], [G.params]),
    ]
    return cases


def _fd_check(fn, args):
    """Relative error of the full gradient (all inputs stacked) against central differences."""
    _, grads = nc.value_and_grad(fn, *args)
    fd = []
    for i, a in enumerate(args):
        def f(x, i=i):
            vals = list(args)
            vals[i] = x
            return float(nc.value_of(fn(*vals)))
        fd.append(central_diff(f, a).ravel())
    return rel_err(np.concatenate([g.ravel() for g in grads]), np.concatenate(fd))


def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_net = 0.0
    for _ in range(200):
        while True:
            G = _random_net(rng)
            z = rng.normal(size=(2, G.latent_dim))
            y = rng.normal(size=(2, G.cond_dim)) if G.cond_dim else None
            if _relu_margin(G, z, y) > 1e-3:
                break
        c = rng.normal(size=(2, G.out_dim))
        if y is None:
            fn = lambda p, zz: nc.sum_(nc.mul(c, G.forward(zz, None, p)))  # noqa: E731
            args = [G.params, z]
        else:
            fn = lambda p, zz, yy: nc.sum_(nc.mul(c, G.forward(zz, yy, p)))  # noqa: E731
            args = [G.params, z, y]
        worst_net = max(worst_net, _fd_check(fn, args))
    worst_obj = {name: _fd_check(fn, args) for name, fn, args in _objective_cases()}
    elapsed = time.perf_counter() - start
    ok = worst_net < 1e-5 and max(worst_obj.values()) < 1e-5 and elapsed < 30
    verdict(1, ok, f"200 nets worst rel err {worst_net:.2e}; objectives worst "
                   f"{max(worst_obj.values()):.2e} ({', '.join(worst_obj)}); {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------- 2. projection oracle


def _brute_projection_dist(v, s):
    d = len(v)
    best = np.inf
    for keep in combinations(range(d), s):
        rest = np.delete(v, keep) if keep else v
        best = min(best, float(np.sum(rest ** 2)))
    return best


def test_criterion_2_projection_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    cases = bad = 0
    for d in range(1, 11):
        for s in range(0, d + 1):
            vectors = [rng.normal(size=d) for _ in range(6)]
            vectors += [rng.integers(-2, 3, size=d).astype(float) for _ in range(4)]  # ties
            for v in vectors:
                h = hard_threshold(v, s)
                cases += 1
                feasible = np.count_nonzero(h) <= s and np.all((h == 0) | (h == v))
                if not feasible or abs(np.sum((v - h) ** 2) - _brute_projection_dist(v, s)) > 1e-12:
                    bad += 1
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 10
    verdict(2, ok, f"{cases} (d, s, v) cases, d <= 10, every s; {bad} mismatches; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------------- 3. IHT equivalence


def iht_reference(A, y, s, step, iters):
    x = np.zeros(A.shape[1])
    for _ in range(iters):
        g = x - step * (A.T @ (A @ x - y))
        keep = np.argsort(np.abs(g))[-s:]
        x = np.zeros_like(g)
        x[keep] = g[keep]
    return x


def test_criterion_3_iht_equivalence(verdict):
    start = time.perf_counter()
    d, m, s = 32, 16, 4
    identical = 0
    for seed in range(50):
        r = RngStream(seed)
        S = sample_sensing(m, d, r.child("A"))
        x = np.zeros(d)
        x[r.permutation(d)[:s]] = r.gaussian(s)
        cfg = RecoveryConfig(method="spgdgan", T=25, alpha=0.5, s=s)
        x_hat, _ = spgdgan_recover(IdentityGenerator(d), S, S.A @ x, UnitaryTransform.identity(d), cfg)
        ref = iht_reference(S.A, S.A @ x, s, 0.5, 25)
        identical += np.array_equal(x_hat.view(np.uint64), ref.view(np.uint64))
    elapsed = time.perf_counter() - start
    ok = identical == 50 and elapsed < 30
    verdict(3, ok, f"{identical}/50 problems bitwise identical to reference IHT; {elapsed:.1f}s")
    assert ok


# -------------------------------------------------------------- 4. sample-size bound


def test_criterion_4_sample_size_bound(verdict):
    start = time.perf_counter()
    m = theorem2_min_m(4, 10, 0.1, 3)
    tau, n = 0.1, 200
    floor = 1 - tau - 3 * np.sqrt(tau * (1 - tau) / n)
    rates = {}
    for kind in ("identity", "haar"):
        U = UnitaryTransform(kind, 64)
        rates[kind] = empirical_rip_rate(m, 64, 4, 10, 3.0, range(n), U, "squared")
    # informative extra point where the bound is far from trivial
    m_half = theorem2_min_m(4, 10, 0.1, 0.5)
    extra = empirical_rip_rate(m_half, 512, 4, 10, 0.5, range(20), UnitaryTransform.haar(512), "squared")
    elapsed = time.perf_counter() - start
    ok = m == 20 and all(r >= floor for r in rates.values()) and elapsed < 120
    verdict(4, ok, f"min m = {m}; pass rate I {rates['identity']:.3f}, Haar {rates['haar']:.3f} "
                   f"(floor {floor:.3f}); gamma=0.5 -> m={m_half}, Haar rate {extra:.2f}; {elapsed:.1f}s")
    assert ok


# -------------------------------------------------------------- 5. contraction audit


def test_criterion_5_contraction(verdict):
    start = time.perf_counter()
    m = theorem2_min_m(4, 10, 0.1, 0.25)
    reps = [theorem1_verification(2048, m, 4, 0.25, range(10), T=60, transform=kind)
            for kind in ("identity", "haar")]
    elapsed = time.perf_counter() - start
    ok = all(r.passed for r in reps) and elapsed < 120
    parts = [f"{r.transform}: RIP on realized supports {len(r.rip_passing)}/{len(r.audits)}, "
             f"contraction {r.contraction_rate:.0%}, T(eps) R^2 {r.r_squared:.4f}" for r in reps]
    verdict(5, ok, f"d=2048, m={m}, gamma=0.25, alpha={reps[0].alpha:.4f}; " + "; ".join(parts)
            + f"; {elapsed:.1f}s")
    assert ok


# ------------------------------------------------------ 6. presence probability


def test_criterion_6_presence(verdict):
    start = time.perf_counter()
    m = 16
    cfg = ExperimentConfig(ms=(m,), methods=("csgm",))
    ckpts = train_all(cfg)
    cond, marg = ckpts[("gan", True, m)], ckpts[("gan", False, m)]
    X = make_dataset(cfg.data_config, 64, "presence")
    rng = RngStream(stream_id("presence", cfg.seed))
    pc = presence_probability(cond.generator, X, cond.sensing, 0.125, 1000, rng)
    pm = presence_probability(marg.generator, X, marg.sensing, 0.125, 1000, rng)
    wins, n, p = sign_test(-pc[2], -pm[2])
    elapsed = time.perf_counter() - start
    ok = pc[0] > pm[0] and p < 0.05 and elapsed < 600
    verdict(6, ok, f"conditional {pc[0]:.3f} ± {pc[1]:.3f} vs marginal {pm[0]:.3f} ± {pm[1]:.3f}; "
                   f"sign test {wins}/{n}, p={p:.2g}; {elapsed:.1f}s")
    assert ok


# --------------------------------------------------- 7. IM vs marginal recovery


def test_criterion_7_im_improves_recovery(verdict):
    start = time.perf_counter()
    cfg = ExperimentConfig()  # d=64, m in {8, 16, 32}, 50 paired trials, all five methods
    reports, _ = run_experiment(cfg)
    table = paired_table(reports)
    elapsed = time.perf_counter() - start
    passed = sum(row["pass"] for row in table)
    lines = [f"{r['method']}@m={r['m']}: {r['im_mean']:.3g} vs {r['marginal_mean']:.3g} "
             f"({r['im_wins']}/{r['non_tied']}, p={r['p_value']:.2g}){'' if r['pass'] else ' FAIL'}"
             for r in table]
    ok = len(table) == 15 and passed >= 13 and elapsed < 1800
    verdict(7, ok, f"{passed}/15 cells pass; {elapsed:.0f}s\n    " + "\n    ".join(lines))
    assert ok


# ------------------------------------------------------------------ 8. ablation


def test_criterion_8_ablation(verdict):
    start = time.perf_counter()
    cfg = ExperimentConfig(methods=("csgm",), ablation=True, trials=20)
    a, _ = run_experiment(cfg)
    b, _ = run_experiment(cfg)
    same = results_csv(a) == results_csv(b)
    table = paired_table(a)
    complete = len(table) == 3 and all(r.status == "ok" for r in a)
    elapsed = time.perf_counter() - start
    summary = ", ".join(f"m={r['m']} (latent {r['m'] + cfg.latent_dim_im} vs {cfg.latent_dim_im}): "
                        f"IM {r['im_mean']:.3g} vs {r['marginal_mean']:.3g}, {r['im_wins']}/{r['non_tied']}"
                        for r in table)
    ok = same and complete
    verdict(8, ok, f"ran end to end, deterministic={same}; {summary}; {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------- 9. determinism


def test_criterion_9_cli_determinism(verdict, tmp_path):
    import json
    start = time.perf_counter()
    doc = {"ms": [8, 16], "trials": 4, "n_test": 2, "n_train": 400, "train": {"steps": 150}}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    outs = {}
    for cmd in ("recover", "bench"):
        for jobs in (1, 3):
            out = tmp_path / f"{cmd}-{jobs}"
            assert cli.main([cmd, "--config", str(cfg), "--seed", "5", "--jobs", str(jobs), "--out", str(out)]) == 0
            outs[cmd, jobs] = (out / "results.csv").read_bytes()
        out = tmp_path / f"{cmd}-again"
        cli.main([cmd, "--config", str(cfg), "--seed", "5", "--out", str(out)])
        outs[cmd, "again"] = (out / "results.csv").read_bytes()
    same = all(outs[c, 1] == outs[c, 3] == outs[c, "again"] for c in ("recover", "bench"))
    elapsed = time.perf_counter() - start
    verdict(9, same, f"recover and bench results.csv byte-identical across --jobs 1/3 and reruns; "
                     f"{elapsed:.0f}s")
    assert same
