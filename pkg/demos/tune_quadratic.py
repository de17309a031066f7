"""Bayesian optimization against random search on a known quadratic.

The optimum sits at (mp, lambda) = (0.3, 0.7).
"""

from automo.hyperopt import bayes_optimize


def objective(mp, lam):
    return -(mp - 0.3) ** 2 - (lam - 0.7) ** 2


for seed in range(5):
    bo = bayes_optimize(objective, 25, seed=seed)
    rs = bayes_optimize(objective, 25, seed=seed, random_search=True)
    print(f"seed {seed}: GP-EI ({bo.mp:.3f}, {bo.lam:.3f}) f={bo.objective:.2e}   "
          f"random ({rs.mp:.3f}, {rs.lam:.3f}) f={rs.objective:.2e}")
