"""Independent reference implementations used by the unit and acceptance tests."""

from fractions import Fraction
from math import prod


def concordance_auc(scores, labels):
    """O(n^2) pairwise AUC, exact in rationals."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 2]
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return wins / (len(pos) * len(neg))


def _dom(a, b):
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def brute_front(points):
    return [i for i, p in enumerate(points) if not any(_dom(q, p) for q in points)]


def brute_ranks(points):
    """Front rank by repeated peeling."""
    rank, remaining, r = {}, list(range(len(points))), 0
    while remaining:
        sub = [points[i] for i in remaining]
        front = [remaining[k] for k in brute_front(sub)]
        for i in front:
            rank[i] = r
        remaining = [i for i in remaining if i not in front]
        r += 1
    return rank


def brute_truncate(points, N):
    """Indices kept from (sen, spe, auc) points: front first, then AUC, then input order."""
    if len(points) <= N:
        return list(range(len(points)))
    rank = brute_ranks([p[:2] for p in points])
    order = sorted(range(len(points)), key=lambda i: (rank[i], -points[i][2], i))
    return order[:N]


def literal_ere(opinions, weights):
    """Exact rational evaluation of the combination rule, term by term."""
    ops = [tuple(Fraction(v) for v in o) for o in opinions]
    ws = [Fraction(w) for w in weights]
    cls = [prod(w * o[c] + 1 - w * (o[0] + o[1]) for o, w in zip(ops, ws)) for c in (0, 1)]
    both = prod(1 - w * (o[0] + o[1]) for o, w in zip(ops, ws))
    mu = 1 / (sum(cls) - both)
    none = prod(1 - w for w in ws)
    den = 1 - mu * none
    return [mu * (c - both) / den for c in cls] + [mu * (both - none) / den]
