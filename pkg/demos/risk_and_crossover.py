"""
Closed-form risk and when to prefer k-RR
========================================

The empirical estimators have exact squared-l2 risk. Their ratio tells which
mechanism is better at a given alphabet size and privacy level.
"""
import numpy as np

import ldpdist as ld

n = 10_000
for k in (4, 16, 64):
    p = np.full(k, 1 / k)
    for eps in (0.5, np.log(k)):
        a = ld.krr_risk(p, n, eps).l2_squared
        b = ld.rappor_risk(p, n, eps).l2_squared
        f = ld.crossover_f(k, eps)
        print(f"k={k:<3} eps={eps:.2f}  k-RR {a:.2e}  k-RAPPOR {b:.2e}  ratio {f:.3f}")

# how many more samples than non-private estimation each mechanism needs
for mech in ("krr", "rappor"):
    print(mech, [round(ld.sample_size_factor(32, eps, mech), 1) for eps in (1, 2, 4)])
