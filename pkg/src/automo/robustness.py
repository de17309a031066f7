"""FGSM attacks and accuracy-versus-epsilon sweeps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .data import Dataset
from .fusion import FusionConfig, active_members, predict_batch
from .imia import Candidate
from .mixer import label_index, input_gradient, input_gradient_from_probs_grad, predict_proba

DEFAULT_EPSILONS = (0.0, 0.01, 0.02, 0.04, 0.06, 0.08)

GradientFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def ensemble_surrogate_gradient(ensemble: Sequence[Candidate], weights, image, label, dtype=np.float32):
    """Input gradient of -log of the weight-averaged true-class probability.

    The weighted mean ``sum_j w_j p_j(x)`` stands in for the evidential fusion,
    which is not differentiable through its augmentation sampling.
    """
    active = active_members(ensemble, weights)
    image = np.asarray(image)
    single = image.ndim == 2
    batch = image[None] if single else image
    idx = label_index(label)
    rows = np.arange(len(idx))
    mixed = sum(w * predict_proba(m.config, m.params, batch, dtype)[rows, idx] for _, m, w in active)
    grad = np.zeros(batch.shape, dtype=np.float64)
    for _, m, w in active:
        def dlogits(probs, w=w):
            onehot = np.zeros_like(probs)
            onehot[rows, idx] = 1.0
            py = probs[rows, idx][:, None]
            return -(w / mixed)[:, None].astype(probs.dtype) * py * (onehot - probs)

        g, _ = input_gradient_from_probs_grad(m.config, m.params, batch, dlogits, dtype)
        grad += g
    grad = grad.astype(dtype)
    return grad[0] if single else grad


def gradient_fn(target: Union[Candidate, tuple, GradientFn]) -> GradientFn:
    """Normalize an attack target to ``f(images, labels) -> gradient``.

    ``target`` may be a single :class:`Candidate`, an ``(ensemble, weights)``
    pair, or already such a function.
    """
    if isinstance(target, Candidate):
        return lambda x, y: input_gradient(target.config, target.params, x, y)
    if isinstance(target, tuple):
        ensemble, weights = target
        return lambda x, y: ensemble_surrogate_gradient(ensemble, weights, x, y)
    if callable(target):
        return target
    raise TypeError(f"cannot attack {type(target).__name__}")


def fgsm(target, image, label, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size ``epsilon``, clamped to [0, 1]."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    image = np.asarray(image)
    if epsilon == 0:
        return image.copy()
    grad = gradient_fn(target)(image, label)
    adv = image + np.asarray(epsilon, dtype=image.dtype) * np.sign(grad).astype(image.dtype)
    return np.clip(adv, 0.0, 1.0)


@dataclass(frozen=True)
class RobustnessRow:
    epsilon: float
    acc: float


def robustness_sweep(ensemble: Sequence[Candidate], weights, dataset: Dataset,
                     epsilons: Sequence[float] = DEFAULT_EPSILONS,
                     fusion: FusionConfig | None = None, seed: int = 0) -> list[RobustnessRow]:
    """Attack the surrogate at each epsilon and score the full fused pipeline.

    Attacks use one clean forward pass (no augmentation).  Every epsilon reuses
    the same augmentation streams, so the epsilon-0 row equals clean accuracy.
    """
    if list(epsilons) != sorted(epsilons):
        raise ValueError("epsilons must be sorted ascending")
    fusion = fusion or FusionConfig()
    grad = None
    rows = []
    for eps in epsilons:
        if eps == 0:
            adv = dataset.images
        else:
            if grad is None:
                # the gradient depends only on the clean input, so compute it once
                grad = ensemble_surrogate_gradient(ensemble, weights, dataset.images, dataset.labels)
            adv = np.clip(dataset.images + np.float32(eps) * np.sign(grad), 0.0, 1.0)
        pred = predict_batch(ensemble, weights, adv, fusion, seed)
        rows.append(RobustnessRow(float(eps), float(np.mean(pred.decision == dataset.labels))))
    return rows
