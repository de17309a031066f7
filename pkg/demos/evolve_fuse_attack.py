"""Evolve a small Mixer ensemble, fuse it, then probe trust and robustness.

Uses a reduced configuration so it completes in seconds.  Pass
``--desk`` for the full 600/200-image run (several minutes).
"""

import sys
import time

from automo import pipeline as P
from automo.config import RunConfig, derive_seed
from automo.fusion import ensemble_metrics
from automo.robustness import robustness_sweep

cfg = RunConfig(seed=0)
if "--desk" not in sys.argv:
    cfg.data.train_per_class, cfg.data.test_per_class = 60, 20
    cfg.imia.n, cfg.imia.max_iter, cfg.imia.clone_budget = 10, 10, 10

train, test = P.synthetic_splits(cfg)
print(f"train classes {train.class_counts()}  test classes {test.class_counts()}")

start = time.perf_counter()
pareto, weights = P.train_ensemble(train, cfg)
print(f"evolved in {time.perf_counter() - start:.1f}s; Pareto set of {len(pareto)} models")
for rec in pareto.trace[:: max(1, len(pareto.trace) // 5)]:
    print(f"  iter {rec.iter:2d}: pop={rec.pop_size} best sen={rec.best_sen:.3f} "
          f"spe={rec.best_spe:.3f} front={rec.front_size}")

pred = P.fused_predict(pareto, weights, test, cfg)
m = ensemble_metrics(pred, test.labels)
print(f"fused test: AUC={m.auc:.3f} ACC={m.acc:.3f} sen={m.sen:.3f} spe={m.spe:.3f} balance={m.balance:.3f}")

# Corrupt 20% of test labels: the least uncertain cases should stay the most accurate.
cfg.data.label_noise = 0.2
print("uncertainty cutoff  n   ACC")
for row in P.stratify(pareto, weights, test, cfg):
    print(f"  {row.uncertainty:.4f}  {row.n:4d}  {row.acc:.3f}")

rows = robustness_sweep(pareto.models, weights, test, cfg.epsilons(), cfg.fusion_config(),
                        derive_seed(cfg.seed, P.TTA, 0))
print("FGSM epsilon -> ACC:", ", ".join(f"{r.epsilon:g}:{r.acc:.3f}" for r in rows))
