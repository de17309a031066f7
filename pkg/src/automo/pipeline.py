"""Training and testing stages wired together from a :class:`RunConfig`.

All randomness derives from ``cfg.seed`` through :func:`derive_seed` with a
fixed key per stage, so a config fully determines every result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import metrics as M
from .config import RunConfig, derive_seed
from .data import Dataset, inject_label_noise, stratified_split, synth_generate
from .fusion import NoBalancedModelError, Predictions, ensemble_metrics, ensemble_weights, predict_batch, stratify_by_uncertainty
from .hyperopt import HyperPoint, Trial, bayes_optimize
from .imia import ParetoSet, run_imia
from .robustness import robustness_sweep

log = logging.getLogger(__name__)

# sub-stream keys
TRAIN_DATA, TEST_DATA, IMIA, TTA, TUNE_SPLIT, LABEL_NOISE, TUNE = range(1, 8)


def synthetic_splits(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    train = synth_generate(cfg.synth_spec("train"), derive_seed(cfg.seed, TRAIN_DATA), "train")
    test = synth_generate(cfg.synth_spec("test"), derive_seed(cfg.seed, TEST_DATA), "test")
    return train, test


def train_ensemble(train: Dataset, cfg: RunConfig, mp: float | None = None,
                   lam: float | None = None, on_iteration=None) -> tuple[ParetoSet, list[float]]:
    """Run the immune algorithm and weight the resulting Pareto set."""
    im = cfg.imia
    pareto = run_imia(
        train, cfg.grid(), N=im.n, mp=im.mp if mp is None else mp, sigma=im.sigma,
        max_iter=im.max_iter, seed=derive_seed(cfg.seed, IMIA), clone_budget=im.clone_budget,
        mutate_fraction=im.mutate_fraction, threshold=im.threshold, on_iteration=on_iteration,
    )
    weights = ensemble_weights(pareto.models, cfg.fusion.lam if lam is None else lam)
    return pareto, weights


def fused_predict(pareto: ParetoSet, weights, dataset: Dataset, cfg: RunConfig,
                  repeat: int = 0, lam: float | None = None) -> Predictions:
    seed = derive_seed(cfg.seed, TTA, repeat)
    return predict_batch(pareto.models, weights, dataset.images, cfg.fusion_config(lam), seed)


def tune_hyperparameters(train: Dataset, cfg: RunConfig) -> tuple[HyperPoint, list[Trial]]:
    """Bayesian search over (MP, lambda) scored by fused AUC on a held-out split."""
    fit, val = stratified_split(train, cfg.tune.validation_fraction, derive_seed(cfg.seed, TUNE_SPLIT))
    im = cfg.imia

    def objective(mp: float, lam: float) -> float:
        pareto = run_imia(
            fit, cfg.grid(), N=cfg.tune.n, mp=mp, sigma=im.sigma, max_iter=cfg.tune.max_iter,
            seed=derive_seed(cfg.seed, IMIA), clone_budget=cfg.tune.n,
            mutate_fraction=im.mutate_fraction, threshold=im.threshold,
        )
        try:
            weights = ensemble_weights(pareto.models, lam)
        except NoBalancedModelError:
            # no usable ensemble at this point: score it as the worst possible AUC
            log.info("tune mp=%.4f lambda=%.4f -> no balanced model", mp, lam)
            return 0.0
        pred = fused_predict(pareto, weights, val, cfg, lam=lam)
        value = M.auc(pred.score, val.labels)
        log.info("tune mp=%.4f lambda=%.4f -> auc=%.4f", mp, lam, value)
        return value

    history: list[Trial] = []
    best = bayes_optimize(objective, cfg.tune.budget, derive_seed(cfg.seed, TUNE),
                          random_search=cfg.tune.random_search, history=history)
    return best, history


@dataclass
class RepeatResult:
    repeat: int
    metrics: M.EvalMetrics
    predictions: Predictions


def evaluate_repeats(pareto: ParetoSet, weights, test: Dataset, cfg: RunConfig) -> list[RepeatResult]:
    out = []
    for r in range(cfg.evaluate.repeats):
        pred = fused_predict(pareto, weights, test, cfg, repeat=r)
        out.append(RepeatResult(r, ensemble_metrics(pred, test.labels), pred))
    return out


def summarize(results: list[RepeatResult]) -> dict[str, tuple[float, float]]:
    """Mean and population standard deviation of every metric over repeats."""
    table = np.array([[getattr(r.metrics, f) for f in M.METRIC_FIELDS] for r in results])
    return {f: (float(table[:, i].mean()), float(table[:, i].std())) for i, f in enumerate(M.METRIC_FIELDS)}


def noisy_test(test: Dataset, cfg: RunConfig) -> Dataset:
    if cfg.data.label_noise <= 0:
        return test
    return inject_label_noise(test, cfg.data.label_noise, derive_seed(cfg.seed, LABEL_NOISE))


def stratify(pareto: ParetoSet, weights, test: Dataset, cfg: RunConfig):
    test = noisy_test(test, cfg)
    pred = fused_predict(pareto, weights, test, cfg)
    return stratify_by_uncertainty(pred, test.labels)


def attack_repeats(pareto: ParetoSet, weights, test: Dataset, cfg: RunConfig):
    """One robustness sweep per evaluation repeat (distinct augmentation streams)."""
    return [
        robustness_sweep(pareto.models, weights, test, cfg.epsilons(), cfg.fusion_config(),
                         derive_seed(cfg.seed, TTA, r))
        for r in range(cfg.evaluate.repeats)
    ]
