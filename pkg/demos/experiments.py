"""
Reproducible experiments and grid sweeps
========================================

A config fixes the mechanism, decoder, ground truth, n and eps; trials are
seeded so any thread count gives the same numbers.
"""
import ldpdist as ld

geo = ld.DistributionSpec("geometric", (), 32)
cfg = ld.ExperimentConfig("orr", "projected", geo, n=20_000, epsilon=2.0, k=8,
                          C=2, trials=20, seed=5)
res = ld.run_experiment(cfg)
print(f"median l1 {res.median:.4f}  90% band [{res.ci_low:.4f}, {res.ci_high:.4f}]")

# grid search over k and C; infeasible points are skipped, ties go to smaller parameters
sweep = ld.grid_sweep(cfg, {"k": [4, 8, 16], "C": [1, 2, 4]})
best = sweep.best[2.0].config
print("best k, C:", best.k, best.C)

records = [ld.result_record(r.config, r.result) for r in sweep.table()]
print(ld.results_to_csv(ld.best_records(records)))
