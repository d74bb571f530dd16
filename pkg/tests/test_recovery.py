import numpy as np
import pytest

from imcs.models import ConditionedGenerator, ConditioningError, IdentityGenerator, LinearGenerator, make_generator
from imcs.numcore import RngStream
from imcs.recovery import (
    EmptyWindowError, RecoveryConfig, RecoveryDiverged, contraction_factor, csgm_recover,
    pgdgan_recover, recover, sparsegen_recover, spgdgan_recover, step_size_window,
)
from imcs.sensing import SensingMatrix, sample_sensing
from imcs.transforms import UnitaryTransform, forward


def test_config_validation():
    with pytest.raises(ValueError):
        RecoveryConfig(tau=0.0)
    with pytest.raises(ValueError):
        RecoveryConfig(method="sparsegen", L=10, T=5)
    with pytest.raises(ValueError):
        RecoveryConfig(method="lasso")
    d = RecoveryConfig.defaults("pgdgan")
    assert (d.alpha, d.tau, d.T, d.K) == (0.5, 0.1, 10, 100)
    sg = RecoveryConfig.defaults("sparsegen")
    assert (sg.L, sg.T) == (250, 500)


def test_step_size_window():
    assert step_size_window(0.0) == (0.5, 1.0)
    lo, hi = step_size_window(0.2)
    assert lo == pytest.approx(0.625) and hi == pytest.approx(1 / 1.2)
    with pytest.raises(EmptyWindowError):
        step_size_window(1 / 3)
    assert contraction_factor(0.8, 0.0) == pytest.approx(0.25)


def test_csgm_identity_least_squares_converges():
    d = 8
    S = SensingMatrix(np.eye(d))
    x = np.random.default_rng(0).normal(size=d)
    cfg = RecoveryConfig(method="csgm", T=500, tau=0.25)
    x_hat, trace = csgm_recover(IdentityGenerator(d), S, x, cfg, x_true=x)
    assert trace.fidelity[-1] < 1e-8
    assert len(trace.fidelity) == 501 and len(trace.per_pixel_error) == 501


def test_csgm_zero_steps_returns_initial_sample():
    G = make_generator(3, 6, seed=0)
    S = sample_sensing(4, 6, RngStream(0))
    x_hat, _ = csgm_recover(G, S, np.zeros(4), RecoveryConfig(T=0), RngStream(5))
    assert np.array_equal(x_hat, G(RngStream(5).gaussian(3)))


def test_csgm_restarts_keep_best():
    G = make_generator(3, 6, seed=0)
    S = sample_sensing(4, 6, RngStream(0))
    y = np.ones(4)
    _, one = csgm_recover(G, S, y, RecoveryConfig(T=5, restarts=1), RngStream(1))
    _, many = csgm_recover(G, S, y, RecoveryConfig(T=5, restarts=4), RngStream(1))
    assert many.fidelity[-1] <= one.fidelity[-1]


def test_cond_dim_mismatch():
    S = sample_sensing(4, 6, RngStream(0))
    y = np.ones(4)
    with pytest.raises(ConditioningError):
        csgm_recover(make_generator(3, 6, seed=0), S, y, RecoveryConfig(im=True))
    with pytest.raises(ConditioningError):
        csgm_recover(make_generator(3, 6, cond_dim=4, seed=0), S, y, RecoveryConfig(im=False))
    with pytest.raises(ConditioningError):
        csgm_recover(make_generator(3, 6, cond_dim=3, seed=0), S, y, RecoveryConfig(im=True))


def test_im_matches_marginal_on_induced_generator():
    G = make_generator(3, 8, cond_dim=4, seed=2)
    S = sample_sensing(4, 8, RngStream(1))
    y = S.A @ np.linspace(-1, 1, 8)
    cfg = RecoveryConfig(T=20, tau=0.05)
    a, ta = csgm_recover(G, S, y, RecoveryConfig(T=20, tau=0.05, im=True), RngStream(3))
    b, tb = csgm_recover(ConditionedGenerator(G, y), S, y, cfg, RngStream(3))
    assert np.array_equal(a, b) and ta.fidelity == tb.fidelity


def test_conditional_oracle_beats_marginal():
    # toy subspace x = W c; the conditional oracle decodes y nearly exactly
    d, k, m = 16, 3, 6
    wins = 0
    for t in range(50):
        r = RngStream(t)
        W = r.child("W").gaussian((d, k)) / np.sqrt(k)
        S = sample_sensing(m, d, r.child("A"))
        x = W @ r.child("c").gaussian(k)
        C = W @ np.linalg.pinv(S.A @ W)
        cond = LinearGenerator(0.01 * W, C=C)
        marg = LinearGenerator(W)
        cfg = RecoveryConfig(T=10, tau=0.05)
        _, ti = csgm_recover(cond, S, S.A @ x, RecoveryConfig(T=10, tau=0.05, im=True), r.child("z"))
        _, tm = csgm_recover(marg, S, S.A @ x, cfg, r.child("z"))
        wins += ti.fidelity[-1] <= tm.fidelity[-1]
    assert wins >= 45


def test_pgdgan_identity_is_gradient_descent():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(4, 8)) / 2
    S = SensingMatrix(A)
    x = rng.normal(size=8)
    y = A @ x
    cfg = RecoveryConfig(method="pgdgan", T=30, alpha=0.3)
    x_hat, trace = pgdgan_recover(IdentityGenerator(8), S, y, cfg)
    ref = np.zeros(8)
    for _ in range(30):
        ref = ref - 0.3 * A.T @ (A @ ref - y)
    assert abs(trace.fidelity[-1] - float(np.sum((A @ ref - y) ** 2))) < 1e-8
    assert np.allclose(x_hat, ref, atol=1e-12)


def test_pgdgan_zero_alpha_stays_at_projection_of_start():
    S = sample_sensing(3, 6, RngStream(0))
    cfg = RecoveryConfig(method="pgdgan", T=3, alpha=0.0, keep_iterates=True)
    _, trace = pgdgan_recover(IdentityGenerator(6), S, np.ones(3), cfg)
    assert all(np.array_equal(it, np.zeros(6)) for it in trace.iterates)


def test_pgdgan_with_latent_projection_improves_fidelity():
    G = make_generator(4, 8, hidden=(16,), hidden_act="tanh", out_act="linear", seed=3)
    S = sample_sensing(6, 8, RngStream(2))
    x = np.asarray(G(RngStream(9).gaussian(4)))
    cfg = RecoveryConfig(method="pgdgan", T=10, K=50, tau=0.05, alpha=0.5)
    _, trace = pgdgan_recover(G, S, S.A @ x, cfg, RngStream(0))
    assert trace.fidelity[-1] < trace.fidelity[0]


def test_spgdgan_iterates_are_s_sparse():
    d, s = 16, 3
    U = UnitaryTransform.haar(d)
    G = make_generator(4, d, seed=5, out_act="linear")
    S = sample_sensing(8, d, RngStream(3))
    cfg = RecoveryConfig(method="spgdgan", T=4, K=10, s=s, keep_iterates=True)
    _, trace = spgdgan_recover(G, S, np.ones(8), U, cfg, RngStream(1))
    for it in trace.iterates[1:]:
        assert np.count_nonzero(np.abs(forward(U, it)) > 1e-12) <= s


def test_spgdgan_full_s_equals_pgdgan():
    d = 8
    G = make_generator(3, d, seed=6, out_act="linear")
    S = sample_sensing(5, d, RngStream(4))
    y = np.arange(5.0)
    a = RecoveryConfig(method="spgdgan", T=3, K=5, s=d)
    b = RecoveryConfig(method="pgdgan", T=3, K=5)
    xa, ta = spgdgan_recover(G, S, y, UnitaryTransform.haar(d), a, RngStream(2))
    xb, tb = pgdgan_recover(G, S, y, b, RngStream(2))
    assert np.array_equal(xa, xb) and ta.fidelity == tb.fidelity


def test_sparsegen_long_first_phase_equals_csgm():
    G = make_generator(3, 8, seed=7, out_act="linear")
    S = sample_sensing(5, 8, RngStream(5))
    y = np.linspace(0, 1, 5)
    xs, ts = sparsegen_recover(G, S, y, UnitaryTransform.identity(8),
                               RecoveryConfig(method="sparsegen", T=40, L=40, tau=0.05), RngStream(1))
    xc, tc = csgm_recover(G, S, y, RecoveryConfig(T=40, tau=0.05), RngStream(1))
    assert np.array_equal(ts.nu, np.zeros(8))
    assert np.array_equal(xs, xc) and ts.fidelity == tc.fidelity


def test_sparsegen_huge_penalty_suppresses_deviation():
    G = make_generator(3, 8, seed=7, out_act="linear")
    S = sample_sensing(5, 8, RngStream(5))
    cfg = RecoveryConfig(method="sparsegen", T=60, L=10, tau=1e-10, lam_sg=1e6)
    _, trace = sparsegen_recover(G, S, np.ones(5), UnitaryTransform.haar(8), cfg, RngStream(0))
    assert np.linalg.norm(trace.nu) <= 1e-3


def test_sparsegen_recovers_out_of_range_spike():
    d, k, m = 16, 3, 10
    wins = 0
    for t in range(50):
        r = RngStream(t)
        W = r.child("W").gaussian((d, k)) / np.sqrt(k)
        G = LinearGenerator(W)
        S = sample_sensing(m, d, r.child("A"))
        x = W @ r.child("c").gaussian(k)
        x[r.integers(0, d)] += 2.0
        y = S.A @ x
        xc, _ = csgm_recover(G, S, y, RecoveryConfig(T=500, tau=0.05), r.child("z"))
        xs, _ = sparsegen_recover(G, S, y, UnitaryTransform.identity(d),
                                  RecoveryConfig(method="sparsegen", T=500, L=100, tau=0.05), r.child("z"))
        wins += np.mean((xs - x) ** 2) < np.mean((xc - x) ** 2)
    assert wins >= 40


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    S = SensingMatrix(10 * np.eye(4))
    with pytest.raises(RecoveryDiverged):
        csgm_recover(IdentityGenerator(4), S, np.ones(4), RecoveryConfig(T=2000, tau=1.0))


def test_trace_exports():
    S = SensingMatrix(np.eye(3))
    x = np.ones(3)
    _, trace = recover(IdentityGenerator(3), S, x, RecoveryConfig(method="pgdgan", T=2), x_true=x)
    lines = trace.to_csv().splitlines()
    assert lines[0] == "t,fidelity,per_pixel_error" and len(lines) == 4
    assert trace.to_dict()["fidelity"] == trace.fidelity
    assert all(f >= 0 for f in trace.fidelity)
