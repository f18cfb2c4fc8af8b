#!/usr/bin/env python3
# Building TOY time-memory tables and checking how much of the state space they see.

# %%
import time

import numpy as np

from gtl.tmto import build_table_set, coverage_exact, coverage_measure, lookup_points, toy_params

params = toy_params()
print("colors", params.colors, "dp bits", params.dp_mask_bits,
      "max steps", params.max_steps_per_color)

t = time.perf_counter()
tables = build_table_set(params, tables=4, chain_count=1 << 16, seed=7)
print(f"built 4 tables in {time.perf_counter() - t:.1f}s")
for tab in tables:
    s = tab.stats
    print(f"  table {tab.params.table_id}: kept {s.kept}, merged {s.merged} "
          f"({s.merge_fraction:.0%}), overflowed {s.overflowed}")

# %%
# exact coverage marks every chain input; the sampled figure should agree
exact = coverage_exact(tables)
cov = coverage_measure(tables, trials=10_000, seed=1)
print(f"exact {exact:.4f}  measured {cov.fraction:.4f}  95% [{cov.low:.4f}, {cov.high:.4f}]")

# %%
# lookups return only states whose keystream really matches
rng = np.random.default_rng(0)
samples = rng.integers(0, 1 << 24, size=5, dtype=np.uint64).tolist()
for s, hits in zip(samples, lookup_points(tables, samples)):
    print(format(s, "06x"), "->", [format(h, "06x") for h in sorted(hits)])
