"""
Decoding privatized reports
===========================

Compare the standard, normalized, projected and maximum-likelihood decoders
on one batch of k-RR and k-RAPPOR reports.
"""
import numpy as np

import ldpdist as ld

k, n, eps = 16, 10_000, np.log(8)
p = ld.make_distribution(ld.DistributionSpec("geometric", (), k))
rng = ld.make_rng(seed=7)
x = rng.multinomial(n, p)

# k-RR: decode from the histogram of reports
y = ld.krr_report_counts(x, eps, rng)
raw = ld.decode_krr_empirical(y / n, k, eps)
for name, est in [("standard", raw),
                  ("normalized", ld.normalize_truncate(raw)),
                  ("projected", ld.project_simplex(raw)),
                  ("ml", ld.decode_krr_ml(y, n, eps))]:
    print(f"k-RR     {name:<10} l1 = {np.abs(est - x / n).sum():.4f}")

# k-RAPPOR: decode from the per-bit counts
t = ld.rappor_bit_counts(x, eps, rng)
raw = ld.decode_rappor_empirical(t, n, eps)
for name, est in [("standard", raw),
                  ("normalized", ld.normalize_truncate(raw)),
                  ("projected", ld.project_simplex(raw)),
                  ("ml", ld.decode_rappor_ml(t, n, eps))]:
    print(f"k-RAPPOR {name:<10} l1 = {np.abs(est - x / n).sum():.4f}")
