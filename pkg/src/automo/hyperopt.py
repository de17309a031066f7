"""Bayesian optimization of the mutation gate and balance weight on [0, 1]^2.

A Gaussian process with a fixed squared-exponential kernel models the
objective (higher is better); expected improvement is maximized over a
64 x 64 grid.  Five scrambled-Sobol points seed the search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

INIT_POINTS = 5
GRID_SIZE = 64
JITTER = 1e-10


class ObjectiveError(RuntimeError):
    """The objective raised; ``point`` holds the offending (mp, lambda)."""

    def __init__(self, point, cause):
        super().__init__(f"objective failed at mp={point[0]:.6g}, lambda={point[1]:.6g}: {cause}")
        self.point = tuple(point)


@dataclass
class HyperPoint:
    mp: float
    lam: float
    objective: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.mp <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError(f"point ({self.mp}, {self.lam}) outside [0, 1]^2")

    @property
    def x(self) -> np.ndarray:
        return np.array([self.mp, self.lam])


@dataclass
class SurrogateState:
    X: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    y: np.ndarray = field(default_factory=lambda: np.empty(0))
    length_scale: float = 0.2
    signal_var: float = 1.0
    noise_var: float = 1e-4

    def observe(self, x, value: float) -> None:
        if not np.isfinite(value):
            raise ValueError("observed objective must be finite")
        self.X = np.vstack([self.X, np.asarray(x, dtype=np.float64).reshape(1, -1)])
        self.y = np.append(self.y, float(value))


def se_kernel(A: np.ndarray, B: np.ndarray, length_scale: float, signal_var: float) -> np.ndarray:
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1)
    return signal_var * np.exp(-0.5 * d2 / length_scale ** 2)


def gp_posterior(state: SurrogateState, queries) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at ``queries`` (shape ``(m, 2)``).

    Observations are standardized (zero mean, unit variance) before the
    fixed kernel is applied, so the prior mean is the observed mean and the
    prior standard deviation is ``sqrt(signal_var)`` times the observed spread.
    """
    if len(state.y) == 0:
        raise ValueError("GP needs at least one observation")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    K = se_kernel(state.X, state.X, state.length_scale, state.signal_var)
    K[np.diag_indices_from(K)] += state.noise_var + JITTER
    try:
        factor = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("kernel matrix is not positive definite even with jitter") from exc
    prior, scale = _standardizer(state.y)
    alpha = cho_solve(factor, (state.y - prior) / scale)
    Ks = se_kernel(Q, state.X, state.length_scale, state.signal_var)
    mean = prior + scale * (Ks @ alpha)
    v = cho_solve(factor, Ks.T)
    var = state.signal_var - np.einsum("ij,ji->i", Ks, v)
    return mean, scale * np.sqrt(np.maximum(var, 0.0))


def _standardizer(y: np.ndarray) -> tuple[float, float]:
    scale = float(y.std())
    return float(y.mean()), (scale if scale > 0 else 1.0)


def gp_fit_predict(state: SurrogateState, query: HyperPoint | Sequence[float]) -> tuple[float, float]:
    x = query.x if isinstance(query, HyperPoint) else np.asarray(query, dtype=np.float64)
    mean, std = gp_posterior(state, x.reshape(1, -1))
    return float(mean[0]), float(std[0])


def expected_improvement(mean, stddev, best_so_far):
    """EI for maximization; reduces to max(mean - best, 0) when stddev is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    stddev = np.asarray(stddev, dtype=np.float64)
    if np.any(stddev < 0):
        raise ValueError("stddev must be non-negative")
    gain = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(stddev > 0, gain / np.where(stddev > 0, stddev, 1.0), 0.0)
        ei = np.where(stddev > 0, gain * norm.cdf(z) + stddev * norm.pdf(z), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _grid(size: int = GRID_SIZE) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, size)
    mp, lam = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([mp.ravel(), lam.ravel()])


def init_design(n: int, seed: int) -> np.ndarray:
    sampler = qmc.Sobol(d=2, scramble=True, seed=seed)
    # Sobol balance holds for powers of two; draw 8 and keep the first n
    pts = sampler.random(max(8, 1 << (max(n, 1) - 1).bit_length()))
    return pts[:n]


@dataclass
class Trial:
    trial: int
    mp: float
    lam: float
    objective: float

    def row(self) -> dict:
        return {"trial": self.trial, "mp": self.mp, "lambda": self.lam, "objective": self.objective}


TUNING_FIELDS = ("trial", "mp", "lambda", "objective")


def _evaluate(objective_fn, x) -> float:
    try:
        value = float(objective_fn(float(x[0]), float(x[1])))
    except Exception as exc:  # noqa: BLE001 -- any objective failure is re-raised with its point
        raise ObjectiveError(x, exc) from exc
    if not np.isfinite(value):
        raise ObjectiveError(x, f"non-finite objective {value}")
    return value


def bayes_optimize(
    objective_fn: Callable[[float, float], float],
    budget: int,
    seed: int = 0,
    random_search: bool = False,
    state: SurrogateState | None = None,
    history: list[Trial] | None = None,
) -> HyperPoint:
    """Maximize ``objective_fn(mp, lam)`` over the unit square.

    Returns the best *evaluated* point.  ``history``, when given, receives one
    :class:`Trial` per evaluation.  With ``random_search`` the EI steps are
    replaced by uniform draws (same budget).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    state = state or SurrogateState()
    history = history if history is not None else []
    rng = np.random.default_rng(seed)
    grid = _grid()

    def record(x):
        value = _evaluate(objective_fn, x)
        state.observe(x, value)
        history.append(Trial(len(history), float(x[0]), float(x[1]), value))

    for x in init_design(min(INIT_POINTS, budget), seed):
        record(x)
    for _ in range(budget - min(INIT_POINTS, budget)):
        if random_search:
            x = rng.random(2)
        else:
            mean, std = gp_posterior(state, grid)
            ei = expected_improvement(mean, std, state.y.max())
            x = grid[int(np.argmax(ei))]
        record(x)
    best = int(np.argmax(state.y))
    return HyperPoint(float(state.X[best, 0]), float(state.X[best, 1]), float(state.y[best]))
