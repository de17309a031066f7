"""Iterative multi-objective immune algorithm over Mixer weight genomes.

One iteration runs: proportional cloning -> mutation -> deletion of
duplicate (sen, spe) points -> update (non-dominated truncation back to N).
The loop stops after ``max_iter`` iterations and the non-dominated members of
the final population form the Pareto set.  There are no gradient steps: the
genomes are evolved directly.

Mutation gate: a candidate mutates when its uniform draw is *larger* than
``mp``.  A larger ``mp`` therefore means less mutation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import metrics as M
from .data import Dataset
from .mixer import MixerConfig, init_params, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArchGrid:
    """Discrete architecture choices sampled at initialization."""

    num_layers: tuple[int, ...] = (2, 3, 4)
    hidden_c: tuple[int, ...] = (32, 38, 45, 51)
    mlp_ds: tuple[int, ...] = (32, 48, 64, 80)
    mlp_dc: tuple[int, ...] = (64, 128, 192, 256, 320)
    image_side: int = 28
    patch_size: int = 7

    @classmethod
    def scaled(cls, image_side: int = 28, patch_size: int = 7, base_c: int = 32) -> "ArchGrid":
        """Grid with the published multipliers applied to desk-scale bases.

        Token-MLP widths scale the sequence length, channel widths scale ``base_c``.
        """
        seq = (image_side // patch_size) ** 2
        return cls(
            num_layers=(2, 3, 4),
            hidden_c=tuple(int(round(base_c * m)) for m in (1.0, 1.2, 1.4, 1.6)),
            mlp_ds=tuple(seq * m for m in (2, 3, 4, 5)),
            mlp_dc=tuple(base_c * m for m in (2, 4, 6, 8, 10)),
            image_side=image_side,
            patch_size=patch_size,
        )

    @classmethod
    def full(cls) -> "ArchGrid":
        """Full-size grid for 224px inputs with 16px patches (196 tokens)."""
        return cls(
            num_layers=(2, 3, 4),
            hidden_c=tuple(int(round(256 * m)) for m in (1.0, 1.2, 1.4, 1.6)),
            mlp_ds=tuple(196 * m for m in (2, 3, 4, 5)),
            mlp_dc=tuple(256 * m for m in (2, 4, 6, 8, 10)),
            image_side=224,
            patch_size=16,
        )

    def sample(self, rng: np.random.Generator) -> MixerConfig:
        return MixerConfig(
            image_side=self.image_side,
            patch_size=self.patch_size,
            num_layers=int(rng.choice(self.num_layers)),
            hidden_c=int(rng.choice(self.hidden_c)),
            mlp_ds=int(rng.choice(self.mlp_ds)),
            mlp_dc=int(rng.choice(self.mlp_dc)),
        )

    def contains(self, config: MixerConfig) -> bool:
        return (
            config.num_layers in self.num_layers
            and config.hidden_c in self.hidden_c
            and config.mlp_ds in self.mlp_ds
            and config.mlp_dc in self.mlp_dc
        )


@dataclass
class Candidate:
    config: MixerConfig
    params: np.ndarray
    metrics: M.EvalMetrics | None
    id: str
    seed: int | None = None

    @property
    def objectives(self) -> tuple[float, float]:
        return self.metrics.sen, self.metrics.spe

    @property
    def fitness(self) -> float:
        return 0.5 * (self.metrics.sen + self.metrics.spe)


@dataclass
class Population:
    members: list[Candidate]
    capacity: int

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


@dataclass
class IterationRecord:
    iter: int
    pop_size: int
    best_sen: float
    best_spe: float
    best_auc: float
    front_size: int
    front: list[tuple[float, float]] = field(repr=False, default_factory=list)
    dedup_idempotent: bool = True

    def row(self) -> dict:
        return {
            "iter": self.iter,
            "pop_size": self.pop_size,
            "best_sen": self.best_sen,
            "best_spe": self.best_spe,
            "best_auc": self.best_auc,
            "front_size": self.front_size,
        }


TRACE_FIELDS = ("iter", "pop_size", "best_sen", "best_spe", "best_auc", "front_size")


@dataclass
class ParetoSet:
    models: list[Candidate]
    trace: list[IterationRecord] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)


class IdSource:
    """Sequential candidate ids; one per run keeps ids reproducible."""

    def __init__(self, prefix: str = "m"):
        self._counter = itertools.count()
        self.prefix = prefix

    def __call__(self) -> str:
        return f"{self.prefix}{next(self._counter):06d}"


# ---------------------------------------------------------------------------
# evaluation


def evaluate_candidate(candidate: Candidate, dataset: Dataset, threshold: float = M.DEFAULT_THRESHOLD) -> M.EvalMetrics:
    probs = predict_proba(candidate.config, candidate.params, dataset.images)
    return M.evaluate_scores(probs[:, 0], dataset.labels, threshold)


def _evaluate_all(members: Sequence[Candidate], dataset: Dataset, threshold: float) -> None:
    for cand in members:
        if cand.metrics is None:
            cand.metrics = evaluate_candidate(cand, dataset, threshold)


# ---------------------------------------------------------------------------
# dominance helpers


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True if ``a`` is at least as good on both objectives and better on one."""
    return a[0] >= b[0] and a[1] >= b[1] and (a[0] > b[0] or a[1] > b[1])


def nondominated_fronts(points: Sequence[tuple[float, float]]) -> list[list[int]]:
    """Fast non-dominated sort; returns fronts as lists of indices in input order."""
    n = len(points)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for i in range(n):
        for j in range(n):
            if i != j and dominates(points[i], points[j]):
                dominated_by[i].append(j)
            elif i != j and dominates(points[j], points[i]):
                count[i] += 1
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


# ---------------------------------------------------------------------------
# the six steps


def initialize_population(
    grid: ArchGrid,
    N: int,
    seed: int,
    dataset: Dataset | None = None,
    threshold: float = M.DEFAULT_THRESHOLD,
    ids: IdSource | None = None,
) -> Population:
    if N < 2:
        raise ValueError("population size N must be >= 2")
    ids = ids or IdSource()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    members = []
    for _ in range(N):
        config = grid.sample(rng)
        weight_seed = int(rng.integers(2**31))
        members.append(Candidate(config, init_params(config, weight_seed), None, ids(), weight_seed))
    if dataset is not None:
        _evaluate_all(members, dataset, threshold)
    return Population(members, N)


def apportion(shares: Sequence[float], budget: int) -> list[int]:
    """Largest-remainder apportionment of ``budget`` seats by ``shares``."""
    shares = np.asarray(shares, dtype=np.float64)
    total = shares.sum()
    if total <= 0:
        shares = np.ones_like(shares)
        total = shares.sum()
    quotas = shares / total * budget
    counts = np.floor(quotas).astype(int)
    remainder = budget - counts.sum()
    # stable sort keeps earlier members first among equal remainders
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts.tolist()


def clone_counts(fitness: Sequence[float], budget: int) -> list[int]:
    """Clone counts proportional to fitness, each >= 1 whenever budget allows."""
    counts = apportion(fitness, budget)
    if budget >= len(counts):
        for i in range(len(counts)):
            if counts[i] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[i] = 1
    return counts


def proportional_clone(pop: Population, budget: int | None = None, ids: IdSource | None = None) -> Population:
    budget = pop.capacity if budget is None else budget
    ids = ids or IdSource("c")
    counts = clone_counts([c.fitness for c in pop], budget)
    clones = []
    for cand, k in zip(pop, counts):
        for _ in range(k):
            clones.append(replace(cand, params=cand.params.copy(), id=ids()))
    return Population(clones, pop.capacity)


def mutate(pop: Population, mp: float, sigma: float, rng: np.random.Generator, fraction: float = 0.1) -> Population:
    """Gaussian-perturb a random ``fraction`` of weights of each candidate whose draw exceeds ``mp``."""
    if not 0.0 <= mp <= 1.0:
        raise ValueError("mutation probability must lie in [0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    out = []
    for cand in pop:
        draw = rng.random()
        if draw > mp:
            q = cand.params.size
            k = max(1, int(np.ceil(fraction * q)))
            where = rng.choice(q, size=k, replace=False)
            params = cand.params.copy()
            params[where] += rng.normal(0.0, sigma, size=k).astype(np.float32)
            out.append(replace(cand, params=params, metrics=None))
        else:
            out.append(cand)
    return Population(out, pop.capacity)


def dedup(pop: Population) -> Population:
    """Keep one candidate per (sen, spe) point: the highest AUC, earliest on ties."""
    best: dict[tuple[float, float], int] = {}
    for i, cand in enumerate(pop):
        key = cand.objectives
        j = best.get(key)
        if j is None or cand.metrics.auc > pop.members[j].metrics.auc:
            best[key] = i
    keep = sorted(best.values())
    return Population([pop.members[i] for i in keep], pop.capacity)


def truncate_nondominated(pop: Population, N: int | None = None) -> Population:
    """Admit whole non-dominated fronts in order; split the last one by AUC."""
    N = pop.capacity if N is None else N
    if len(pop) <= N:
        return Population(list(pop.members), pop.capacity)
    fronts = nondominated_fronts([c.objectives for c in pop])
    kept: list[Candidate] = []
    for front in fronts:
        members = [pop.members[i] for i in front]
        room = N - len(kept)
        if len(members) <= room:
            kept.extend(members)
        else:
            members.sort(key=lambda c: -c.metrics.auc)
            kept.extend(members[:room])
        if len(kept) >= N:
            break
    return Population(kept, pop.capacity)


def pareto_front(pop: Population | Sequence[Candidate]) -> ParetoSet:
    members = list(pop)
    if not members:
        raise ValueError("empty population has no Pareto front")
    points = [c.objectives for c in members]
    front = [
        c for i, c in enumerate(members)
        if not any(dominates(points[j], points[i]) for j in range(len(members)) if j != i)
    ]
    return ParetoSet(front)


def _record(t: int, pop: Population) -> IterationRecord:
    best = max(pop, key=lambda c: c.fitness)
    front = pareto_front(pop)
    return IterationRecord(
        iter=t,
        pop_size=len(pop),
        best_sen=best.metrics.sen,
        best_spe=best.metrics.spe,
        best_auc=max(c.metrics.auc for c in pop),
        front_size=len(front),
        front=sorted(c.objectives for c in front),
    )


def run_imia(
    dataset: Dataset,
    grid: ArchGrid,
    N: int = 20,
    mp: float = 0.5,
    sigma: float = 0.05,
    max_iter: int = 30,
    seed: int = 0,
    clone_budget: int | None = None,
    mutate_fraction: float = 0.1,
    threshold: float = M.DEFAULT_THRESHOLD,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> ParetoSet:
    """Evolve a population of Mixers and return the final Pareto set with its trace."""
    dataset.require_both_classes()
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    ids = IdSource()
    pop = initialize_population(grid, N, seed, dataset, threshold, ids)
    trace = [_record(0, pop)]
    for t in range(1, max_iter + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, t]))
        clones = proportional_clone(pop, clone_budget or N, ids)
        clones = mutate(clones, mp, sigma, rng, mutate_fraction)
        _evaluate_all(clones.members, dataset, threshold)
        merged = Population(pop.members + clones.members, N)
        merged = dedup(merged)
        idempotent = [c.id for c in dedup(merged)] == [c.id for c in merged]
        pop = truncate_nondominated(merged, N)
        record = _record(t, pop)
        record.dedup_idempotent = idempotent
        trace.append(record)
        log.debug("iter %d: %s", t, record.row())
        if on_iteration is not None:
            on_iteration(record)
    result = pareto_front(pop)
    result.trace = trace
    return result
