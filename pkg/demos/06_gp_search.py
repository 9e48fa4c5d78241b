"""
Genetic programming search
==========================

A short seeded run on one gate-drive condition, followed by a tiny
multi-run archive with its repeatability metrics.
"""

from dataclasses import replace

from bhvloss import generate_training_set, reference_device, reference_grid
from bhvloss.gp_engine import RunConfig, evolve, multi_run, seeded_configs
from bhvloss.pareto import filter_candidates

ts = generate_training_set(reference_grid(), reference_device()).subset([4])
config = replace(RunConfig(), population_size=100, generations=15, rng_seed=1)

result = evolve(config, ts)
front = sorted((ind for ind in result.population if ind.rank == 0),
               key=lambda ind: ind.f_complexity)
for ind in front:
    print(f"cx={ind.f_complexity:6.2f} rmse={ind.rmse:.4f} W "
          f"err_max={ind.score.err_max:6.2f}%  {ind.key}")

# three runs with seeds 1..3; N_run counts runs where a model showed up,
# N_gen is its mean number of generations present
archive = multi_run(seeded_configs(replace(config, generations=8), 3), ts)
print(len(archive.entries), "distinct models")
# thresholds loosened to match the tiny budget
candidates = filter_candidates(archive.sorted_entries(), min_n_run=2, max_err_max=150.0)
for e in candidates:
    print(f"N_run={e.n_run} N_gen={e.n_gen:.1f} rmse={e.rmse:.4f} "
          f"err_max={e.err_max:.1f}%  {e.key}")
