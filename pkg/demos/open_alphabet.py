"""
Open alphabets with hashing and cohorts
=======================================

O-RR hashes each string into k buckets with a per-cohort hash, then applies
k-RR. The server decodes over a candidate list by least squares.
"""
import numpy as np

import ldpdist as ld

candidates = [f"site{i}.example" for i in range(40)]
truth = ld.make_distribution(ld.DistributionSpec("geometric", (), len(candidates)))
scheme = ld.CohortScheme(num_cohorts=8, k=16, master_seed=3)
eps, n = 2.0, 50_000

# simulate clients one by one
rng = ld.make_rng(seed=11)
held = rng.choice(len(candidates), size=n, p=truth)
counts = np.zeros((scheme.num_cohorts, scheme.k), dtype=np.int64)
for cid, s in enumerate(held):
    report = ld.encode_orr(candidates[s], cid, scheme, eps, rng)
    counts[report.cohort, report.payload] += 1

est = ld.decode_orr(counts, n, candidates, scheme, eps)
print("O-RR l1 vs truth:", np.abs(est - truth).sum())

# how likely a candidate's hash signature is unique among the candidates
print(ld.distinguishability_stats(S=len(candidates), k=16, C=8))
