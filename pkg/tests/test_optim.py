"""Trigger machinery, EMA statistics, LookSAM algebra, and the step rule."""

import math

import numpy as np
import pytest

from samkit.data import make_dataset
from samkit.errors import ConfigurationError, DegenerateGradient, UsageError
from samkit.models import AnalyticLandscape, Mlp, MlpSpec
from samkit.optim import (
    GradNormStats,
    Optimizer,
    ThresholdSchedule,
    ema_update,
    looksam_compose,
    looksam_decompose,
    looksam_trigger,
    sam_fraction,
    sam_perturb,
    sam_trigger,
    sam_zeta,
    ss_sam_trigger,
    threshold_at,
    train,
)

EXP_M10 = math.exp(-10.0)


# --- EMA statistics ----------------------------------------------------------

def test_ema_first_observation_matches_hand_evaluation():
    stats = GradNormStats()  # mu=0, sigma2=e^-10, decay=0.9
    out = ema_update(stats, 1.0)
    assert out.mu == pytest.approx(0.1, abs=1e-15)
    expected_sigma2 = 0.9 * EXP_M10 + 0.1 * (1.0 - 0.1) ** 2
    assert out.sigma2 == pytest.approx(expected_sigma2, abs=1e-12)
    assert out.sigma2 == pytest.approx(0.0810, abs=5e-5)


def test_ema_full_memory_never_changes():
    stats = GradNormStats(mu=0.3, sigma2=0.2, decay=1.0)
    for g2 in (0.0, 5.0, 123.0):
        out = ema_update(stats, g2)
        assert out.mu == 0.3 and out.sigma2 == 0.2


def test_ema_no_memory_tracks_latest_exactly():
    stats = GradNormStats(mu=0.3, sigma2=0.2, decay=0.0)
    out = ema_update(stats, 7.5)
    assert out.mu == 7.5 and out.sigma2 == 0.0


def test_ema_sigma2_stays_nonnegative_on_random_streams():
    rng = np.random.default_rng(0)
    stats = GradNormStats()
    for g2 in rng.exponential(size=5000):
        stats = ema_update(stats, float(g2))
        assert stats.sigma2 >= 0.0


def test_ema_replay_matches_independent_reference():
    rng = np.random.default_rng(1)
    seq = rng.exponential(size=20_000)
    stats = GradNormStats()
    mus, sig2s = [], []
    for g2 in seq:
        stats = ema_update(stats, float(g2))
        mus.append(stats.mu)
        sig2s.append(stats.sigma2)

    # independent single-pass recomputation of the two recurrences
    mu, s2 = 0.0, EXP_M10
    for i, g2 in enumerate(seq):
        mu = 0.9 * mu + 0.1 * g2
        s2 = 0.9 * s2 + 0.1 * (g2 - mu) ** 2
        assert abs(mus[i] - mu) <= 1e-12
        assert abs(sig2s[i] - s2) <= 1e-12


def test_ema_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        GradNormStats(decay=1.5)
    with pytest.raises(ConfigurationError):
        GradNormStats(sigma2=-1.0)
    with pytest.raises(ValueError):
        ema_update(GradNormStats(), -0.1)


# --- threshold schedule -------------------------------------------------------

def test_threshold_endpoints_and_midpoint():
    sched = ThresholdSchedule(lambda1=-1.0, lambda2=1.0, total_steps=10)
    assert threshold_at(sched, 0) == 1.0
    assert threshold_at(sched, 10) == -1.0
    assert threshold_at(sched, 5) == 0.0


def test_threshold_is_affine_in_t():
    sched = ThresholdSchedule(lambda1=2.0, lambda2=-3.0, total_steps=7)
    values = [threshold_at(sched, t) for t in range(8)]
    diffs = np.diff(values)
    np.testing.assert_allclose(diffs, diffs[0], atol=1e-12)


def test_threshold_validation():
    with pytest.raises(ConfigurationError):
        ThresholdSchedule(0.0, 0.0, 0)
    sched = ThresholdSchedule(0.0, 1.0, 5)
    with pytest.raises(ConfigurationError):
        threshold_at(sched, 6)
    with pytest.raises(ConfigurationError):
        threshold_at(sched, -1)


# --- triggers -----------------------------------------------------------------

def test_sam_trigger_inclusive_at_equality():
    stats = GradNormStats(mu=0.5, sigma2=0.04, decay=0.9)
    boundary = 0.5 + 2.0 * 0.2
    assert sam_trigger(boundary, stats, 2.0) is True
    assert sam_trigger(boundary - 1e-12, stats, 2.0) is False


def test_sam_trigger_extreme_thresholds():
    stats = GradNormStats(mu=1.0, sigma2=1.0, decay=0.9)
    assert sam_trigger(1.0, stats, -1e6) is True
    assert sam_trigger(1.0, stats, 1e6) is False


def test_sam_trigger_simple_case():
    assert sam_trigger(0.5, GradNormStats(mu=0.0, sigma2=1.0, decay=0.9), 0.0) is True


def test_sam_trigger_monotonicity():
    rng = np.random.default_rng(2)
    for _ in range(200):
        stats = GradNormStats(
            mu=float(rng.uniform(0, 2)), sigma2=float(rng.uniform(0, 2)), decay=0.9
        )
        g2 = float(rng.uniform(0, 3))
        cs = np.sort(rng.uniform(-3, 3, size=5))
        results = [sam_trigger(g2, stats, float(c)) for c in cs]
        assert all(a >= b for a, b in zip(results, results[1:]))  # non-increasing in c
        c = float(rng.uniform(-3, 3))
        g2s = np.sort(rng.uniform(0, 3, size=5))
        results = [sam_trigger(float(g), stats, c) for g in g2s]
        assert all(a <= b for a, b in zip(results, results[1:]))  # non-decreasing in g2


def test_ss_sam_trigger_degenerate_probabilities():
    rng = np.random.Generator(np.random.Philox(key=0))
    assert all(ss_sam_trigger(rng, 1.0) for _ in range(100))
    assert not any(ss_sam_trigger(rng, 0.0) for _ in range(100))
    with pytest.raises(ConfigurationError):
        ss_sam_trigger(rng, 1.5)


def test_ss_sam_trigger_binomial_concentration():
    # Binomial(10000, 0.5): +-3 sigma = +-150 around 5000.
    rng = np.random.Generator(np.random.Philox(key=123))
    count = sum(ss_sam_trigger(rng, 0.5) for _ in range(10_000))
    assert 4850 <= count <= 5150


def test_ss_sam_trigger_deterministic_per_stream():
    draws = lambda key: [
        ss_sam_trigger(np.random.Generator(np.random.Philox(key=key)), 0.5)
        for _ in range(1)
    ]
    assert draws(9) == draws(9)


def test_looksam_trigger_period():
    assert all(looksam_trigger(t, 1) for t in range(10))
    hits = [t for t in range(100) if looksam_trigger(t, 5)]
    assert hits == list(range(0, 100, 5))
    assert len(hits) == 20
    with pytest.raises(ConfigurationError):
        looksam_trigger(3, 0)


# --- perturbation and decomposition -------------------------------------------

def test_sam_perturb_normalized_example():
    eps = sam_perturb(np.array([3.0, 4.0]), rho=1.0, mode="normalized")
    np.testing.assert_allclose(eps, [0.6, 0.8], atol=1e-15)


def test_sam_perturb_raw_example():
    np.testing.assert_array_equal(
        sam_perturb(np.array([3.0, 4.0]), rho=1.0, mode="raw"), [3.0, 4.0]
    )


def test_sam_perturb_normalized_radius_invariant():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = rng.normal(size=17)
        eps = sam_perturb(g, rho=0.05, mode="normalized")
        assert np.linalg.norm(eps) == pytest.approx(0.05, rel=1e-12)


def test_sam_perturb_degenerate_and_validation():
    with pytest.raises(DegenerateGradient):
        sam_perturb(np.zeros(4), rho=0.1, mode="normalized")
    with pytest.raises(ConfigurationError):
        sam_perturb(np.ones(4), rho=0.0)
    with pytest.raises(ConfigurationError):
        sam_perturb(np.ones(4), rho=0.1, mode="sideways")


def test_looksam_decompose_examples():
    g = np.array([1.0, 0.0])
    np.testing.assert_array_equal(looksam_decompose(g, np.array([1.0, 1.0])), [0.0, 1.0])
    g = np.random.default_rng(4).normal(size=6)
    np.testing.assert_array_equal(looksam_decompose(g, 2.0 * g), np.zeros(6))
    with pytest.raises(DegenerateGradient):
        looksam_decompose(np.zeros(3), np.ones(3))


def test_looksam_decompose_orthogonality_and_reconstruction():
    rng = np.random.default_rng(5)
    for _ in range(200):
        g = rng.normal(size=50)
        g_s = rng.normal(size=50)
        g_v = looksam_decompose(g, g_s)
        assert abs(g @ g_v) <= 1e-9 * np.linalg.norm(g) * np.linalg.norm(g_s)
        recon = (float(g @ g_s) / float(g @ g)) * g + g_v
        err = np.linalg.norm(recon - g_s) / np.linalg.norm(g_s)
        assert err <= 1e-12


def test_looksam_compose_examples():
    g = np.array([1.0, 0.0])
    np.testing.assert_array_equal(looksam_compose(g, np.array([0.0, 2.0]), 1.0), [1.0, 1.0])
    np.testing.assert_array_equal(looksam_compose(g, np.array([0.0, 2.0]), 0.0), g)
    np.testing.assert_array_equal(looksam_compose(g, np.zeros(2), 0.7), g)
    np.testing.assert_array_equal(looksam_compose(g, None, 0.7), g)


# --- the step rule ------------------------------------------------------------

def quadratic_optimizer(algorithm, **kw):
    L = AnalyticLandscape("quadratic", 2)
    defaults = dict(lr=0.1, total_steps=100, rho=0.1, seed=0)
    defaults.update(kw)
    return Optimizer(L, algorithm, **defaults), L


def test_erm_step_on_identity_quadratic():
    opt, _ = quadratic_optimizer("erm")
    w1, trace = opt.step(np.array([1.0, 0.0]))
    np.testing.assert_array_equal(w1, [0.9, 0.0])
    assert trace.xi == 0 and trace.loss == 0.5 and trace.grad_sq == 1.0


def test_sam_raw_step_on_identity_quadratic():
    opt, _ = quadratic_optimizer("sam", perturb_mode="raw")
    w1, trace = opt.step(np.array([1.0, 0.0]))
    np.testing.assert_array_equal(w1, [0.89, 0.0])
    assert trace.xi == 1
    assert opt.grad_evals == 2


def test_step_records_updated_stats_before_trigger():
    opt, _ = quadratic_optimizer("ae-sam")
    _, trace = opt.step(np.array([1.0, 0.0]))
    # g2 = 1, so the trace must show mu = 0.1, the post-update mean
    assert trace.grad_sq == 1.0
    assert trace.mu == pytest.approx(0.1, abs=1e-15)
    assert trace.c == 1.0  # lambda2 at t=0


def test_degenerate_gradient_falls_back_to_erm():
    opt, _ = quadratic_optimizer("sam")
    w1, trace = opt.step(np.zeros(2))
    np.testing.assert_array_equal(w1, np.zeros(2))
    assert trace.xi == 0
    assert opt.grad_evals == 1


def test_step_budget_enforced():
    opt, _ = quadratic_optimizer("erm", total_steps=1)
    opt.step(np.array([1.0, 0.0]))
    with pytest.raises(UsageError):
        opt.step(np.array([1.0, 0.0]))


def test_ae_looksam_first_step_forces_sam_branch():
    # huge threshold would never trigger, but the reuse direction must exist
    opt, _ = quadratic_optimizer("ae-looksam", lambda1=1e6, lambda2=1e6)
    _, trace = opt.step(np.array([1.0, 0.5]))
    assert trace.xi == 1
    assert opt.reused_direction is not None
    _, trace2 = opt.step(np.array([1.0, 0.5]))
    assert trace2.xi == 0  # reuse branch afterwards


def test_looksam_reuses_direction_between_periods():
    from samkit.data import minibatch_iter

    ds = make_dataset("blobs", n=64, seed=0)
    model = Mlp(MlpSpec((2, 8, 3)))
    opt = Optimizer(model, "looksam", lr=0.05, total_steps=10, period=5, seed=0)
    w = model.init_params(0)
    xis = []
    for epoch in range(10):  # one batch per epoch at n == batch size
        X, y = next(minibatch_iter(ds, 64, 0, epoch))
        w, tr = opt.step(w, (X, y))
        xis.append(tr.xi)
    assert xis == [1, 0, 0, 0, 0, 1, 0, 0, 0, 0]


def test_cosine_schedule_endpoints():
    opt, _ = quadratic_optimizer("erm", lr=0.2, lr_schedule="cosine", total_steps=10)
    assert opt.lr_at(0) == 0.2
    assert opt.lr_at(10) == pytest.approx(0.0, abs=1e-17)
    assert opt.lr_at(5) == pytest.approx(0.1, rel=1e-12)


def test_constructor_validation():
    L = AnalyticLandscape("quadratic", 2)
    with pytest.raises(ConfigurationError):
        Optimizer(L, "sgd", lr=0.1, total_steps=10)
    with pytest.raises(ConfigurationError):
        Optimizer(L, "erm", lr=-0.1, total_steps=10)
    with pytest.raises(ConfigurationError):
        Optimizer(L, "erm", lr=0.1, total_steps=10, bernoulli_p=2.0)
    with pytest.raises(ConfigurationError):
        Optimizer(L, "erm", lr=0.1, total_steps=0)


# --- trajectory equivalences and accounting ------------------------------------

def run_training(algorithm, T=120, **kw):
    ds = make_dataset("blobs", n=256, seed=5, cluster_std=1.5)
    model = Mlp(MlpSpec((2, 16, 3)))
    opt = Optimizer(model, algorithm, lr=0.1, total_steps=T, rho=0.05, seed=5, **kw)
    epochs = T // 4  # 4 batches of 64 per epoch
    w, traces = train(opt, model.init_params(5), ds, 64, epochs, seed=5)
    return w, traces, opt


def test_ae_sam_extreme_thresholds_match_sam_and_erm_bitwise():
    w_sam, tr_sam, _ = run_training("sam", perturb_mode="raw")
    w_lo, tr_lo, _ = run_training(
        "ae-sam", perturb_mode="raw", lambda1=-1e6, lambda2=-1e6
    )
    np.testing.assert_array_equal(w_sam, w_lo)
    assert [t.xi for t in tr_lo] == [1] * len(tr_lo)

    w_erm, _, _ = run_training("erm")
    w_hi, tr_hi, _ = run_training("ae-sam", lambda1=1e6, lambda2=1e6)
    np.testing.assert_array_equal(w_erm, w_hi)
    assert [t.xi for t in tr_hi] == [0] * len(tr_hi)


def test_gradient_evaluation_accounting():
    for algorithm in ("erm", "sam", "ss-sam", "looksam", "ae-sam", "ae-looksam"):
        _, traces, opt = run_training(algorithm)
        sam_steps = sum(t.xi for t in traces)
        assert opt.grad_evals == len(traces) + sam_steps


def test_sam_fraction_aggregates():
    _, traces, _ = run_training("sam")
    assert sam_fraction(traces) == 100.0
    assert sam_zeta(traces) == 1.0
    _, traces, _ = run_training("erm")
    assert sam_fraction(traces) == 0.0
    _, traces, _ = run_training("looksam", T=120)
    assert sam_fraction(traces) == pytest.approx(100.0 * 24 / 120)
    with pytest.raises(ConfigurationError):
        sam_fraction([])
