"""Binary classification metrics: sensitivity, specificity, AUC, accuracy, balance.

Labels use the convention 1 = positive, 2 = negative throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

DEFAULT_THRESHOLD = 0.5
METRIC_FIELDS = ("sen", "spe", "auc", "acc", "balance")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class EvalMetrics:
    sen: float
    spe: float
    auc: float
    acc: float
    balance: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_inputs(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1:
        raise ValueError("scores and labels must be one-dimensional")
    if scores.size == 0:
        raise ValueError("empty input")
    if scores.size != labels.size:
        raise ValueError(f"length mismatch: {scores.size} scores, {labels.size} labels")
    if not np.all(np.isin(labels, (1, 2))):
        raise ValueError("labels must be 1 (positive) or 2 (negative)")
    return scores, labels


def confusion(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ConfusionCounts:
    """Tally the confusion matrix; a sample is predicted positive iff score > threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    scores, labels = _check_inputs(scores, labels)
    pred_pos = scores > threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred_pos & pos)),
        fn=int(np.sum(~pred_pos & pos)),
        fp=int(np.sum(pred_pos & ~pos)),
        tn=int(np.sum(~pred_pos & ~pos)),
    )


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted one half."""
    scores, labels = _check_inputs(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)  # midranks
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def balance(sen: float, spe: float) -> float:
    """min/max ratio of two rates; 1 for (0, 0), 0 if exactly one of them is 0."""
    hi = max(sen, spe)
    if hi == 0:
        return 1.0
    return min(sen, spe) / hi


def sensitivity(counts: ConfusionCounts) -> float:
    if counts.tp + counts.fn < 1:
        raise ValueError("no positive samples: sensitivity undefined")
    return counts.tp / (counts.tp + counts.fn)


def specificity(counts: ConfusionCounts) -> float:
    if counts.tn + counts.fp < 1:
        raise ValueError("no negative samples: specificity undefined")
    return counts.tn / (counts.tn + counts.fp)


def eval_metrics(counts: ConfusionCounts, scores=None, labels=None) -> EvalMetrics:
    """Metrics from a confusion matrix; AUC needs the raw scores and labels.

    When ``scores`` is omitted the AUC field is NaN.
    """
    sen = sensitivity(counts)
    spe = specificity(counts)
    acc = (counts.tp + counts.tn) / counts.total
    area = auc(scores, labels) if scores is not None else float("nan")
    return EvalMetrics(sen=sen, spe=spe, auc=area, acc=acc, balance=balance(sen, spe))


def evaluate_scores(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> EvalMetrics:
    return eval_metrics(confusion(scores, labels, threshold), scores, labels)
