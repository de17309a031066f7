import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from automo.hyperopt import (
    HyperPoint,
    ObjectiveError,
    SurrogateState,
    Trial,
    bayes_optimize,
    expected_improvement,
    gp_fit_predict,
    gp_posterior,
    init_design,
)


def quadratic(mp, lam):
    return -(mp - 0.3) ** 2 - (lam - 0.7) ** 2


def naive_gp(X, y, Q, ell=0.2, sf2=1.0, sn2=1e-4):
    """Textbook GP regression on standardized targets, written out with solve()."""
    mu, sd = y.mean(), y.std() or 1.0
    z = (y - mu) / sd
    def k(a, b):
        return sf2 * np.exp(-np.sum((a[:, None] - b[None]) ** 2, -1) / (2 * ell * ell))
    K = k(X, X) + sn2 * np.eye(len(X))
    Ks = k(Q, X)
    mean = mu + sd * Ks @ np.linalg.solve(K, z)
    var = sf2 - np.sum(Ks * np.linalg.solve(K, Ks.T).T, axis=1)
    return mean, sd * np.sqrt(np.maximum(var, 0))


def _state(X, fn=quadratic, **kw):
    s = SurrogateState(**kw)
    for x in X:
        s.observe(x, fn(*x))
    return s


# -- expected improvement ------------------------------------------------------------------


def test_ei_closed_forms():
    assert expected_improvement(0.2, 0.0, 0.5) == 0.0
    assert expected_improvement(0.5, 0.0, 0.5) == 0.0
    assert expected_improvement(0.8, 0.0, 0.5) == pytest.approx(0.3, abs=1e-15)
    assert abs(expected_improvement(1.3, 1.0, 1.3) - 1 / math.sqrt(2 * math.pi)) <= 1e-12
    assert abs(expected_improvement(0.0, 1.0, 0.0) - 0.39894) <= 1e-5


def test_ei_rejects_negative_stddev():
    with pytest.raises(ValueError):
        expected_improvement(0.0, -1.0, 0.0)


@settings(max_examples=200)
@given(st.floats(-3, 3), st.floats(0, 5), st.floats(-3, 3))
def test_ei_non_negative(mean, sd, best):
    assert expected_improvement(mean, sd, best) >= 0


@settings(max_examples=200)
@given(st.floats(0.01, 3), st.floats(0.01, 3), st.floats(0.001, 2))
def test_ei_increases_with_stddev_below_best(gap, sd, step):
    # keep z = -gap/sd within the range where EI does not underflow to zero
    sd = max(sd, gap / 8)
    assert expected_improvement(-gap, sd + step, 0.0) > expected_improvement(-gap, sd, 0.0)


def test_ei_vectorized():
    out = expected_improvement(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 0.0)
    np.testing.assert_allclose(out, [1 / math.sqrt(2 * math.pi), 1.0])


# -- GP posterior --------------------------------------------------------------------------


def test_gp_matches_naive_oracle_on_dense_grid():
    rng = np.random.default_rng(0)
    X = rng.random((7, 2))
    s = _state(X)
    axis = np.linspace(0, 1, 41)
    Q = np.array([(a, b) for a in axis for b in axis])
    got_m, got_s = gp_posterior(s, Q)
    want_m, want_s = naive_gp(X, s.y, Q)
    np.testing.assert_allclose(got_m, want_m, atol=1e-9)
    np.testing.assert_allclose(got_s, want_s, atol=1e-6)


def test_gp_quadratic_midpoints():
    X = np.array([[0.2, 0.6], [0.4, 0.6], [0.3, 0.7], [0.2, 0.8], [0.4, 0.8]])
    s = _state(X)
    mids = ((X[:, None] + X[None]) / 2).reshape(-1, 2)
    mean, _ = gp_posterior(s, mids)
    assert np.max(np.abs(mean - quadratic(mids[:, 0], mids[:, 1]))) <= 0.05


def test_gp_interpolates_without_noise():
    X = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.3]])
    s = _state(X, noise_var=0.0)
    for x, y in zip(X, s.y):
        m, sd = gp_fit_predict(s, x)
        assert abs(m - y) <= 1e-6
        assert sd <= 1e-4
    m, _ = gp_fit_predict(s, HyperPoint(0.1, 0.2))
    assert abs(m - s.y[0]) <= 1e-6


def test_gp_reverts_to_prior_far_away():
    X = np.array([[0.0, 0.0], [0.05, 0.0]])
    s = _state(X)
    m, sd = gp_fit_predict(s, (1.0, 1.0))
    assert m == pytest.approx(s.y.mean(), abs=1e-9)
    assert sd == pytest.approx(s.y.std() * math.sqrt(s.signal_var), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_gp_variance_non_negative(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    X[-1] = X[0]  # duplicated inputs stress the factorization
    s = _state(X)
    _, sd = gp_posterior(s, rng.random((50, 2)))
    assert np.all(sd >= 0) and np.all(np.isfinite(sd))


def test_gp_needs_observations():
    with pytest.raises(ValueError):
        gp_fit_predict(SurrogateState(), (0.5, 0.5))


def test_observe_rejects_non_finite():
    with pytest.raises(ValueError):
        SurrogateState().observe((0.1, 0.1), float("nan"))


# -- optimizer -----------------------------------------------------------------------------


def test_init_design_in_box_and_deterministic():
    a, b = init_design(5, 3), init_design(5, 3)
    assert a.shape == (5, 2) and np.array_equal(a, b)
    assert np.all((a >= 0) & (a <= 1))


def test_budget_one_returns_that_point():
    hist = []
    best = bayes_optimize(quadratic, 1, seed=4, history=hist)
    assert len(hist) == 1
    assert (best.mp, best.lam, best.objective) == (hist[0].mp, hist[0].lam, hist[0].objective)


@pytest.mark.parametrize("seed", range(5))
def test_finds_quadratic_optimum(seed):
    best = bayes_optimize(quadratic, 25, seed=seed)
    assert max(abs(best.mp - 0.3), abs(best.lam - 0.7)) <= 0.05


def test_returns_argmax_of_evaluated_points():
    hist: list[Trial] = []
    best = bayes_optimize(quadratic, 12, seed=1, history=hist)
    top = max(hist, key=lambda t: t.objective)
    assert (best.mp, best.lam, best.objective) == (top.mp, top.lam, top.objective)
    assert [t.trial for t in hist] == list(range(12))


def test_best_is_monotone_in_budget():
    hist = []
    bayes_optimize(quadratic, 15, seed=2, history=hist)
    running = np.maximum.accumulate([t.objective for t in hist])
    # a shorter budget replays the same prefix, so its best is running[k-1]
    for k in (1, 5, 9, 15):
        assert bayes_optimize(quadratic, k, seed=2).objective == running[k - 1]


def test_deterministic_trajectories():
    h1, h2 = [], []
    bayes_optimize(quadratic, 10, seed=7, history=h1)
    bayes_optimize(quadratic, 10, seed=7, history=h2)
    assert [t.row() for t in h1] == [t.row() for t in h2]


def test_random_search_fallback_uses_same_budget():
    hist = []
    best = bayes_optimize(quadratic, 10, seed=0, random_search=True, history=hist)
    assert len(hist) == 10
    assert best.objective == max(t.objective for t in hist)


def test_objective_failure_carries_point():
    def boom(mp, lam):
        raise RuntimeError("diverged")
    with pytest.raises(ObjectiveError) as info:
        bayes_optimize(boom, 3, seed=0)
    assert len(info.value.point) == 2 and "diverged" in str(info.value)


def test_budget_and_bounds_checks():
    with pytest.raises(ValueError):
        bayes_optimize(quadratic, 0)
    with pytest.raises(ValueError):
        HyperPoint(1.5, 0.2)
