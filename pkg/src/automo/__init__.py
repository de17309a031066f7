"""Evolved MLP-Mixer ensembles for balanced, uncertainty-aware binary prediction.

Training evolves a population of small Mixer classifiers under simultaneous
sensitivity and specificity objectives and keeps the Pareto-optimal set.
Testing fuses the set's test-time-augmented opinions with an evidential
reasoning rule that also yields a per-sample uncertainty.
"""

from .data import AugConfig, Dataset, SynthSpec, augment, load_manifest, save_dataset, synth_generate
from .fusion import (
    FusedOutcome,
    FusionConfig,
    Opinion,
    ere_combine,
    model_weight,
    normalize_weights,
    predict,
    predict_batch,
    stratify_by_uncertainty,
    tta_opinion,
)
from .hyperopt import HyperPoint, bayes_optimize, expected_improvement, gp_fit_predict
from .imia import ArchGrid, Candidate, ParetoSet, Population, pareto_front, run_imia
from .metrics import ConfusionCounts, EvalMetrics, auc, confusion, eval_metrics
from .mixer import MixerConfig, ProbPair, forward, init_params, input_gradient, param_count
from .persistence import load_model_set, save_model_set
from .robustness import ensemble_surrogate_gradient, fgsm, robustness_sweep

__version__ = "0.1.0"
