"""
Randomized response channels and their privacy level
=====================================================

Build the k-RR and k-RAPPOR channels, check their likelihood ratios, and
privatize a few symbols.
"""
import math

import numpy as np

import ldpdist as ld

# k-RR at eps = ln 3 on a binary alphabet is Warner's 3:1 coin
print(ld.build_krr_channel(2, "ln3"))

# every channel built here is tight: the worst likelihood ratio is e^eps
for k in (3, 8):
    q = ld.build_krr_channel(k, 1.0)
    print("k-RR", k, ld.verify_channel_dp(q, 1.0).max_ratio, math.e)

# k-RAPPOR reports a k-bit vector; the full channel has 2^k columns
print("k-RAPPOR", ld.verify_rappor_dp(6, 1.0).max_ratio)

# privatize symbols with a reproducible stream
rng = ld.make_rng(seed=1, stream_id=0)
x = np.array([0, 0, 1, 2, 3])
print(ld.encode_krr(x, 4, "ln4", rng))
print(ld.encode_rappor(x, 4, "ln4", rng))

# aggregate samplers draw the report histogram of many clients at once
counts = rng.multinomial(10_000, [0.5, 0.3, 0.15, 0.05])
print(ld.krr_report_counts(counts, 1.0, rng))
