"""Test-time fusion of a Pareto ensemble.

Each model's reliability weight mixes its sensitivity/specificity balance with
its AUC.  For every test image each model produces an opinion: class masses
from test-time augmentation plus an entropy-based uncertainty mass, rescaled to
sum to one.  The opinions are merged by the analytic evidential-reasoning rule
into fused class masses and a residual uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import metrics as M
from .data import AugConfig, random_augment
from .imia import Candidate
from .mixer import predict_proba

MASS_TOL = 1e-9


class NoBalancedModelError(ValueError):
    """Every model in the ensemble received a zero weight."""


class Opinion(NamedTuple):
    p1: float
    p2: float
    u: float


class FusedOutcome(NamedTuple):
    p_fin1: float
    p_fin2: float
    u_fin: float
    decision: int
    score: float


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.8
    T: int = 8
    aug: AugConfig = field(default_factory=AugConfig)
    log_base: float = math.e

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.T < 1:
            raise ValueError("T must be >= 1")


# ---------------------------------------------------------------------------
# weights


def model_weight(metrics: M.EvalMetrics, lam: float) -> float:
    """Raw reliability weight; zero for models whose sen/spe ratio is below 0.5."""
    sen, spe = metrics.sen, metrics.spe
    if max(sen, spe) == 0:
        return 0.0
    ratio = min(sen, spe) / max(sen, spe)
    if ratio < 0.5:
        return 0.0
    return lam * ratio + (1.0 - lam) * metrics.auc


def normalize_weights(raws: Sequence[float]) -> list[float]:
    raws = [float(r) for r in raws]
    if any(r < 0 for r in raws):
        raise ValueError("raw weights must be non-negative")
    total = math.fsum(raws)
    if total <= 0:
        raise NoBalancedModelError("no balanced model available: all weights are zero")
    return [r / total for r in raws]


def ensemble_weights(models: Sequence[Candidate], lam: float) -> list[float]:
    return normalize_weights([model_weight(m.metrics, lam) for m in models])


# ---------------------------------------------------------------------------
# opinions


def entropy(probs: np.ndarray, log_base: float = math.e) -> np.ndarray:
    """Shannon entropy along the last axis with 0 log 0 = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1) / math.log(log_base)


def opinion_from_mean(mean_probs: np.ndarray, log_base: float = math.e) -> np.ndarray:
    """Append the entropy mass to mean class probabilities and rescale to sum 1.

    ``mean_probs`` has shape ``(..., 2)``; the result has shape ``(..., 3)``.
    """
    mean_probs = np.asarray(mean_probs, dtype=np.float64)
    u = entropy(mean_probs, log_base)
    masses = np.concatenate([mean_probs, u[..., None]], axis=-1)
    return masses / masses.sum(axis=-1, keepdims=True)


def augmented_stack(image: np.ndarray, T: int, aug: AugConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([random_augment(image, aug, rng) for _ in range(T)])


def tta_opinion(model: Candidate, image, T: int = 8, aug: AugConfig | None = None,
                rng: np.random.Generator | None = None, log_base: float = math.e) -> Opinion:
    """Opinion of one model on one image from ``T`` augmented copies."""
    if T < 1:
        raise ValueError("T must be >= 1")
    aug = aug or AugConfig()
    rng = rng if rng is not None else np.random.default_rng()
    probs = predict_proba(model.config, model.params, augmented_stack(np.asarray(image), T, aug, rng))
    return Opinion(*opinion_from_mean(probs.astype(np.float64).mean(axis=0), log_base))


def sample_rng(seed: int, sample_index: int, model_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, sample_index, model_index]))


def tta_opinions(model: Candidate, images: np.ndarray, fusion: FusionConfig, seed: int,
                 model_index: int) -> np.ndarray:
    """Opinions of one model over a batch of images; returns ``(n, 3)``."""
    n = len(images)
    stack = np.concatenate([
        augmented_stack(images[i], fusion.T, fusion.aug, sample_rng(seed, i, model_index))
        for i in range(n)
    ])
    probs = predict_proba(model.config, model.params, stack).astype(np.float64)
    mean = probs.reshape(n, fusion.T, 2).mean(axis=1)
    return opinion_from_mean(mean, fusion.log_base)


# ---------------------------------------------------------------------------
# evidential reasoning


def ere_masses(p1, p2, w):
    """Vectorized analytic ER rule over the leading (model) axis.

    ``p1``, ``p2`` have shape ``(J, ...)`` and ``w`` shape ``(J,)``; returns
    fused ``(p_fin1, p_fin2, u_fin)`` arrays of shape ``(...)``.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64).reshape((-1,) + (1,) * (p1.ndim - 1))
    w = np.broadcast_to(w, p1.shape)
    # canonical model order makes the floating-point products permutation invariant bitwise
    order = np.lexsort((p2, p1, w), axis=0)
    p1, p2, w = (np.take_along_axis(a, order, axis=0) for a in (p1, p2, w))
    assigned = w * (p1 + p2)
    both = np.prod(1.0 - assigned, axis=0)
    class1 = np.prod(w * p1 + 1.0 - assigned, axis=0)
    class2 = np.prod(w * p2 + 1.0 - assigned, axis=0)
    unweighted = np.prod(1.0 - w, axis=0)
    mu = 1.0 / (class1 + class2 - both)
    denom = 1.0 - mu * unweighted
    p_fin1 = mu * (class1 - both) / denom
    p_fin2 = mu * (class2 - both) / denom
    u_fin = mu * (both - unweighted) / denom
    out = np.stack([p_fin1, p_fin2, u_fin])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite value in evidential combination")
    return p_fin1, p_fin2, u_fin


def _check_opinions(masses: np.ndarray) -> None:
    if np.any(masses < -MASS_TOL):
        raise ValueError("opinion masses must be non-negative")
    if np.any(np.abs(masses.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("opinion masses must sum to 1")


def _check_weights(weights: np.ndarray, J: int) -> None:
    if weights.shape != (J,):
        raise ValueError(f"expected {J} weights, got {weights.shape}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")


def _outcome(p_fin1: float, p_fin2: float, u_fin: float) -> FusedOutcome:
    decision = 1 if p_fin1 > p_fin2 else 2
    assigned = p_fin1 + p_fin2
    score = p_fin1 / assigned if assigned > 0 else 0.5
    return FusedOutcome(float(p_fin1), float(p_fin2), float(u_fin), decision, float(score))


def _ere_scalar(masses: np.ndarray, weights: np.ndarray) -> tuple[float, float, float]:
    """Same rule as :func:`ere_masses` for one opinion set, in plain floats."""
    rows = sorted(zip(weights.tolist(), masses[:, 0].tolist(), masses[:, 1].tolist()))
    class1 = math.prod(w * a + 1.0 - w * (a + b) for w, a, b in rows)
    class2 = math.prod(w * b + 1.0 - w * (a + b) for w, a, b in rows)
    both = math.prod(1.0 - w * (a + b) for w, a, b in rows)
    unweighted = math.prod(1.0 - w for w, _, _ in rows)
    mu = 1.0 / (class1 + class2 - both)
    denom = 1.0 - mu * unweighted
    out = (mu * (class1 - both) / denom, mu * (class2 - both) / denom, mu * (both - unweighted) / denom)
    if not all(math.isfinite(v) for v in out):
        raise FloatingPointError("non-finite value in evidential combination")
    return out


def ere_combine(opinions: Sequence[Opinion], weights: Sequence[float]) -> FusedOutcome:
    masses = np.asarray(opinions, dtype=np.float64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64)
    if len(masses) == 0:
        raise ValueError("need at least one opinion")
    _check_opinions(masses)
    _check_weights(weights, len(masses))
    return _outcome(*_ere_scalar(masses, weights))


# ---------------------------------------------------------------------------
# prediction


@dataclass
class Predictions:
    """Fused outputs for a batch of images (arrays of length n)."""

    p_fin1: np.ndarray
    p_fin2: np.ndarray
    u_fin: np.ndarray

    @property
    def score(self) -> np.ndarray:
        assigned = self.p_fin1 + self.p_fin2
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(assigned > 0, self.p_fin1 / assigned, 0.5)

    @property
    def decision(self) -> np.ndarray:
        return np.where(self.p_fin1 > self.p_fin2, 1, 2)

    def __len__(self):
        return len(self.u_fin)

    def outcomes(self) -> list[FusedOutcome]:
        return [_outcome(a, b, c) for a, b, c in zip(self.p_fin1, self.p_fin2, self.u_fin)]


def active_members(ensemble: Sequence[Candidate], weights: Sequence[float]):
    weights = np.asarray(weights, dtype=np.float64)
    models = list(ensemble)
    if not models:
        raise ValueError("empty ensemble")
    _check_weights(weights, len(models))
    # zero-weight models contribute neutral factors, so they are skipped outright
    return [(j, m, w) for j, (m, w) in enumerate(zip(models, weights)) if w > 0]


def predict_batch(ensemble: Sequence[Candidate], weights: Sequence[float], images,
                  fusion: FusionConfig | None = None, seed: int = 0) -> Predictions:
    """TTA opinions for every (model, image) followed by per-image fusion.

    Model ``j`` on sample ``i`` draws its augmentations from a stream derived
    from ``(seed, i, j)``, so results do not depend on evaluation order.
    """
    fusion = fusion or FusionConfig()
    images = np.asarray(images)
    active = active_members(ensemble, weights)
    masses = np.stack([tta_opinions(m, images, fusion, seed, j) for j, m, _ in active])
    w = np.array([w for _, _, w in active])
    return Predictions(*ere_masses(masses[..., 0], masses[..., 1], w))


def predict(ensemble: Sequence[Candidate], weights: Sequence[float], image,
            T: int = 8, rng: np.random.Generator | None = None,
            fusion: FusionConfig | None = None) -> FusedOutcome:
    """Fused outcome for a single image."""
    fusion = fusion or FusionConfig(T=T)
    rng = rng if rng is not None else np.random.default_rng()
    active = active_members(ensemble, weights)
    opinions = [tta_opinion(m, image, fusion.T, fusion.aug, rng, fusion.log_base) for _, m, _ in active]
    w = np.array([w for _, _, w in active])
    masses = np.asarray(opinions)
    return _outcome(*ere_masses(masses[:, 0], masses[:, 1], w))


def ensemble_metrics(pred: Predictions, labels) -> M.EvalMetrics:
    return M.evaluate_scores(pred.score, labels, 0.5)


# ---------------------------------------------------------------------------
# uncertainty stratification


@dataclass(frozen=True)
class StratumRow:
    uncertainty: float
    n: int
    sen: float
    spe: float
    auc: float
    acc: float


STRATUM_FIELDS = ("uncertainty", "SEN", "SPE", "AUC", "ACC")


def nearest_rank(values, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*n)-th smallest value (1-based)."""
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    k = max(1, math.ceil(q * ordered.size))
    return float(ordered[k - 1])


def _cohort_metrics(score, decision, labels):
    pos = labels == 1
    neg = ~pos
    nan = float("nan")
    sen = float(np.mean(decision[pos] == 1)) if pos.any() else nan
    spe = float(np.mean(decision[neg] == 2)) if neg.any() else nan
    area = M.auc(score, labels) if pos.any() and neg.any() else nan
    acc = float(np.mean(decision == labels))
    return sen, spe, area, acc


def stratify_by_uncertainty(outcomes, labels, quantiles=(1.0, 0.75, 0.5, 0.25)) -> list[StratumRow]:
    """Metrics on cohorts with fused uncertainty at or below quantile cutoffs.

    ``outcomes`` is a :class:`Predictions` or a sequence of :class:`FusedOutcome`.
    Metrics of a class absent from a cohort are NaN.  Rows come in
    descending-cutoff order.
    """
    if isinstance(outcomes, Predictions):
        u, score, decision = outcomes.u_fin, outcomes.score, outcomes.decision
    else:
        u = np.array([o.u_fin for o in outcomes])
        score = np.array([o.score for o in outcomes])
        decision = np.array([o.decision for o in outcomes])
    labels = np.asarray(labels)
    if u.size < 4:
        raise ValueError("stratification needs at least 4 samples")
    if u.size != labels.size:
        raise ValueError("outcomes and labels differ in length")
    rows = []
    for q in sorted(quantiles, reverse=True):
        cutoff = nearest_rank(u, q)
        keep = u <= cutoff
        rows.append(StratumRow(cutoff, int(keep.sum()), *_cohort_metrics(score[keep], decision[keep], labels[keep])))
    return rows
