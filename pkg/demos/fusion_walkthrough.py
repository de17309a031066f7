"""How two model opinions become one fused decision with an uncertainty.

Runs in well under a second:  python demos/fusion_walkthrough.py
"""

import numpy as np

from automo.fusion import ere_combine, model_weight, opinion_from_mean
from automo.metrics import EvalMetrics, balance

# Two validation summaries.  The second model is lopsided (sen/spe ratio < 0.5)
# and therefore receives zero weight.
good = EvalMetrics(sen=0.7, spe=0.7, auc=0.844, acc=0.7, balance=balance(0.7, 0.7))
lopsided = EvalMetrics(sen=0.95, spe=0.40, auc=0.80, acc=0.68, balance=balance(0.95, 0.40))
for name, m in [("good", good), ("lopsided", lopsided)]:
    print(f"{name:9s} balance={m.balance:.3f} weight(lambda=0.8)={model_weight(m, 0.8):.4f}")

# An opinion is mean class probability plus an entropy mass, rescaled to sum 1.
# A near-certain mean leaves little uncertainty mass; an even split leaves the most.
confident = np.array(opinion_from_mean(np.array([0.95, 0.05])))
torn = np.array(opinion_from_mean(np.array([0.9, 0.1, 0.1, 0.9]).reshape(2, 2).mean(axis=0)))
print("confident opinion:", np.round(confident, 4))
print("torn opinion:     ", np.round(torn, 4))

# Weighted combination.  Order of models never matters; one model with weight 1
# reproduces its own opinion exactly.
fused = ere_combine([confident, torn], [0.6, 0.4])
print(f"fused: p1={fused.p_fin1:.4f} p2={fused.p_fin2:.4f} u={fused.u_fin:.4f} -> class {fused.decision}")
swapped = ere_combine([torn, confident], [0.4, 0.6])
print("order invariant:", swapped == fused)
print("identity:", np.allclose(ere_combine([confident], [1.0])[:3], confident))
