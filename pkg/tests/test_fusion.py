import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from automo.data import AugConfig
from automo.fusion import (
    FusedOutcome,
    FusionConfig,
    NoBalancedModelError,
    Opinion,
    Predictions,
    ensemble_weights,
    entropy,
    ere_combine,
    ere_masses,
    model_weight,
    nearest_rank,
    normalize_weights,
    opinion_from_mean,
    predict,
    predict_batch,
    stratify_by_uncertainty,
    tta_opinion,
)
from automo.imia import Candidate
from automo.metrics import EvalMetrics, balance
from automo.mixer import MixerConfig, init_params, predict_proba, unflatten

from oracles import literal_ere

DESK = MixerConfig()


def metrics(sen, spe, auc):
    return EvalMetrics(sen, spe, auc, 0.5 * (sen + spe), balance(sen, spe))


def constant_model(p1, seed=0):
    """A desk Mixer whose head ignores its input and emits logits giving (p1, 1 - p1)."""
    params = init_params(DESK, seed)
    t = unflatten(DESK, params)
    t["head.w"][:] = 0
    if p1 in (0.0, 1.0):
        t["head.b"][:] = (60.0, -60.0) if p1 == 1.0 else (-60.0, 60.0)
    else:
        t["head.b"][:] = (math.log(p1), math.log(1 - p1))
    return Candidate(DESK, params, metrics(0.9, 0.9, 0.9), f"const{p1}")


def random_opinions(rng, J):
    return rng.dirichlet([1.0, 1.0, 1.0], J), rng.dirichlet(np.ones(J))


# -- weights -------------------------------------------------------------------------------


def test_model_weight_examples():
    assert model_weight(metrics(0.6, 0.8, 0.7), 0.8) == pytest.approx(0.74, abs=1e-15)
    assert model_weight(metrics(0.36, 0.9, 0.99), 0.8) == 0.0
    assert abs(model_weight(metrics(0.7, 0.7, 0.844), 0.8) - 0.9688) <= 1e-12
    assert model_weight(metrics(0.0, 0.0, 0.5), 0.8) == 0.0


@settings(max_examples=200)
@given(st.floats(0.01, 1), st.floats(0.5, 1), st.floats(0, 1), st.floats(0, 1), st.booleans())
def test_model_weight_formula(hi, ratio, auc, lam, swap):
    lo = hi * ratio
    sen, spe = (lo, hi) if swap else (hi, lo)
    r = min(sen, spe) / max(sen, spe)
    expect = lam * r + (1 - lam) * auc if r >= 0.5 else 0.0
    assert model_weight(metrics(sen, spe, auc), lam) == expect


@settings(max_examples=100)
@given(st.floats(0.51, 1), st.floats(0.5, 1), st.floats(0, 1), st.floats(0, 1))
def test_model_weight_monotone_in_auc(spe, sen_frac, a, b):
    sen = spe * sen_frac
    lo, hi = sorted((a, b))
    assert model_weight(metrics(sen, spe, lo), 0.8) <= model_weight(metrics(sen, spe, hi), 0.8)


def test_normalize_weights_examples():
    assert normalize_weights([2, 2]) == [0.5, 0.5]
    assert normalize_weights([0.9, 0, 0.1]) == [0.9, 0, 0.1]
    with pytest.raises(NoBalancedModelError, match="no balanced model"):
        normalize_weights([0, 0])
    with pytest.raises(ValueError):
        normalize_weights([1, -1])


def test_ensemble_weights_zero_filtering_then_normalize():
    models = [Candidate(DESK, None, metrics(0.9, 0.1, 0.9), "a"),
              Candidate(DESK, None, metrics(0.8, 0.8, 0.5), "b")]
    assert ensemble_weights(models, 0.8) == [0.0, 1.0]


# -- entropy / opinions --------------------------------------------------------------------


def test_entropy_grid_extremes():
    p = np.linspace(0, 1, 101)
    h = entropy(np.column_stack([p, 1 - p]))
    assert np.argmax(h) == 50 and h[50] == pytest.approx(math.log(2))
    assert h[0] == 0 and h[-1] == 0
    assert entropy([0.5, 0.5], 2) == pytest.approx(1.0)


def test_opinion_from_uniform_mean():
    op = opinion_from_mean([0.5, 0.5])
    ln2 = math.log(2)
    np.testing.assert_allclose(op, [0.5 / (1 + ln2), 0.5 / (1 + ln2), ln2 / (1 + ln2)], atol=1e-15)
    np.testing.assert_allclose(op, [0.29530, 0.29530, 0.40939], atol=1e-5)


def test_tta_opinion_constant_models():
    img = np.random.default_rng(0).random((28, 28))
    certain = tta_opinion(constant_model(1.0), img, T=8, rng=np.random.default_rng(0))
    assert certain == Opinion(1.0, 0.0, 0.0)
    half = tta_opinion(constant_model(0.5), img, T=8, rng=np.random.default_rng(0))
    np.testing.assert_allclose(half, [0.29530, 0.29530, 0.40939], atol=1e-5)


def test_tta_single_draw_equals_its_output():
    model = Candidate(DESK, init_params(DESK, 3), None, "r")
    img = np.random.default_rng(1).random((28, 28)).astype(np.float32)
    aug = AugConfig(flip_prob=0.0, max_shift=0, noise_sigma=0.0)
    op = tta_opinion(model, img, T=1, aug=aug, rng=np.random.default_rng(0))
    np.testing.assert_allclose(op, opinion_from_mean(predict_proba(DESK, model.params, img[None])[0]), atol=1e-12)
    with pytest.raises(ValueError):
        tta_opinion(model, img, T=0)


# -- evidential combination ----------------------------------------------------------------


def test_single_opinion_identity():
    out = ere_combine([Opinion(0.6, 0.3, 0.1)], [1.0])
    np.testing.assert_allclose(out[:3], (0.6, 0.3, 0.1), atol=1e-12)
    assert [float(v) for v in literal_ere([("0.6", "0.3", "0.1")], [1])] == [0.6, 0.3, 0.1]


def test_two_opinion_regression_value():
    out = ere_combine([(0.7, 0.2, 0.1), (0.6, 0.3, 0.1)], [0.5, 0.5])
    # frozen from the exact rational oracle: 185/267, 61/267, 7/89
    np.testing.assert_allclose(out[:3], (185 / 267, 61 / 267, 7 / 89), atol=1e-15)
    exact = literal_ere([("0.7", "0.2", "0.1"), ("0.6", "0.3", "0.1")], ["0.5", "0.5"])
    assert exact == [Fraction(185, 267), Fraction(61, 267), Fraction(7, 89)]
    assert out.p_fin1 > out.p_fin2 and out.decision == 1


@pytest.mark.parametrize("seed", range(25))
def test_combine_matches_exact_oracle(seed):
    rng = np.random.default_rng(seed)
    ops, w = random_opinions(rng, int(rng.integers(1, 9)))
    want = [float(v) for v in literal_ere(ops.tolist(), w.tolist())]
    np.testing.assert_allclose(ere_combine(ops, w)[:3], want, atol=1e-12)
    np.testing.assert_allclose(np.array(ere_masses(ops[:, 0], ops[:, 1], w)), want, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_fused_masses_sum_to_one_and_permute(seed, J):
    rng = np.random.default_rng(seed)
    ops, w = random_opinions(rng, J)
    out = ere_combine(ops, w)
    assert abs(out.p_fin1 + out.p_fin2 + out.u_fin - 1) <= 1e-9
    assert all(-1e-12 <= v <= 1 + 1e-12 for v in out[:3])
    perm = rng.permutation(J)
    assert ere_combine(ops[perm], w[perm]) == out


def test_vectorized_permutation_is_bitwise():
    rng = np.random.default_rng(0)
    p = rng.dirichlet([1, 1, 1], (5, 40))
    w = rng.dirichlet(np.ones(5))
    perm = rng.permutation(5)
    a = ere_masses(p[..., 0], p[..., 1], w)
    b = ere_masses(p[perm, :, 0], p[perm, :, 1], w[perm])
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_certain_unanimous_opinions():
    out = ere_combine([(1, 0, 0)] * 3, [0.2, 0.3, 0.5])
    assert out.p_fin1 == 1.0 and out.u_fin == 0.0 and out.decision == 1


def test_zero_weight_opinion_is_invisible():
    rng = np.random.default_rng(4)
    ops, w = random_opinions(rng, 3)
    base = ere_combine(ops, w)
    extra = ere_combine(np.vstack([ops, [[0.1, 0.8, 0.1]]]), np.append(w, 0.0))
    assert extra == base


def test_tie_goes_to_negative_class():
    out = ere_combine([(0.4, 0.4, 0.2)], [1.0])
    assert out.decision == 2 and out.score == pytest.approx(0.5)


@pytest.mark.parametrize("ops,w", [
    ([(0.5, 0.5, 0.5)], [1.0]),
    ([(-0.1, 0.6, 0.5)], [1.0]),
    ([(0.5, 0.3, 0.2)], [0.5]),
    ([(0.5, 0.3, 0.2)], [1.0, 0.0]),
    ([], []),
])
def test_combine_rejects_invalid(ops, w):
    with pytest.raises(ValueError):
        ere_combine(ops, w)


# -- prediction ----------------------------------------------------------------------------


def test_single_model_decision_is_tta_argmax():
    model = Candidate(DESK, init_params(DESK, 11), metrics(0.8, 0.8, 0.8), "m")
    img = np.random.default_rng(2).random((28, 28)).astype(np.float32)
    out = predict([model], [1.0], img, rng=np.random.default_rng(5))
    op = tta_opinion(model, img, 8, AugConfig(), np.random.default_rng(5))
    np.testing.assert_allclose(out[:3], op, atol=1e-12)
    assert out.decision == (1 if op.p1 > op.p2 else 2)


def test_unanimous_certain_models():
    ens = [constant_model(1.0, s) for s in range(3)]
    out = predict(ens, [0.2, 0.3, 0.5], np.zeros((28, 28)), rng=np.random.default_rng(0))
    assert out.decision == 1 and out.u_fin == 0.0


def test_predict_deterministic_and_batch_consistent():
    ens = [Candidate(DESK, init_params(DESK, s), None, f"m{s}") for s in range(3)]
    w = [0.5, 0.0, 0.5]
    imgs = np.random.default_rng(3).random((6, 28, 28)).astype(np.float32)
    a = predict_batch(ens, w, imgs, FusionConfig(), seed=8)
    b = predict_batch(ens, w, imgs, FusionConfig(), seed=8)
    assert all(np.array_equal(x, y) for x, y in ((a.p_fin1, b.p_fin1), (a.u_fin, b.u_fin)))
    # a subset of samples gets the same per-sample streams
    sub = predict_batch(ens, w, imgs[:3], FusionConfig(), seed=8)
    np.testing.assert_array_equal(sub.p_fin1, a.p_fin1[:3])
    np.testing.assert_allclose(a.p_fin1 + a.p_fin2 + a.u_fin, 1.0, atol=1e-9)
    outs = a.outcomes()
    assert isinstance(outs[0], FusedOutcome) and len(a) == 6


def test_zero_weight_model_skipped_in_batch():
    ens = [Candidate(DESK, init_params(DESK, s), None, f"m{s}") for s in range(2)]
    imgs = np.random.default_rng(3).random((4, 28, 28)).astype(np.float32)
    with_zero = predict_batch(ens, [1.0, 0.0], imgs, seed=1)
    alone = predict_batch(ens[:1], [1.0], imgs, seed=1)
    np.testing.assert_array_equal(with_zero.p_fin1, alone.p_fin1)


# -- stratification ------------------------------------------------------------------------


def _preds(u, score):
    score = np.asarray(score, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return Predictions(score * (1 - u), (1 - score) * (1 - u), u)


def test_nearest_rank():
    assert nearest_rank([0.4, 0.1, 0.3, 0.2], 0.5) == 0.2
    assert nearest_rank([0.4, 0.1, 0.3, 0.2], 0.25) == 0.1
    assert nearest_rank([0.4, 0.1, 0.3, 0.2], 1.0) == 0.4


def test_median_cohort_is_two_smallest():
    rows = stratify_by_uncertainty(_preds([0.1, 0.2, 0.3, 0.4], [0.9, 0.2, 0.8, 0.4]), [1, 2, 1, 1])
    assert [r.uncertainty for r in rows] == [0.4, 0.3, 0.2, 0.1]
    assert [r.n for r in rows] == [4, 3, 2, 1]
    median = rows[2]
    assert (median.sen, median.spe, median.acc, median.auc) == (1.0, 1.0, 1.0, 1.0)
    assert math.isnan(rows[3].spe) and math.isnan(rows[3].auc)


def test_equal_uncertainty_gives_identical_rows():
    rows = stratify_by_uncertainty(_preds([0.3] * 6, [0.9, 0.1, 0.7, 0.6, 0.2, 0.4]), [1, 2, 1, 2, 2, 1])
    first = rows[0]
    for r in rows[1:]:
        assert (r.uncertainty, r.n, r.sen, r.spe, r.auc, r.acc) == \
            (first.uncertainty, first.n, first.sen, first.spe, first.auc, first.acc)


def test_stratify_accepts_outcome_lists_and_checks_size():
    p = _preds([0.1, 0.2, 0.3, 0.4], [0.9, 0.2, 0.8, 0.4])
    a = stratify_by_uncertainty(p.outcomes(), [1, 2, 1, 1])
    b = stratify_by_uncertainty(p, [1, 2, 1, 1])
    assert [r.acc for r in a] == [r.acc for r in b]
    with pytest.raises(ValueError):
        stratify_by_uncertainty(_preds([0.1, 0.2, 0.3], [0.5, 0.5, 0.5]), [1, 2, 1])
    with pytest.raises(ValueError):
        stratify_by_uncertainty(p, [1, 2, 1])
