"""Mapping areas to ranks, then cutting each area by sampled multisection."""

import numpy as np

from cortex_sim.decomposition import (apply_division, map_areas_to_processes,
                                      multisection_divide, near_cubic_parts, sample_positions)

# four areas of unequal cost shared by six ranks
costs = [4.0, 1.0, 1.0, 0.5]
amap = map_areas_to_processes(costs, 6)
print(amap)

# one area gets three cells: sample 5% of the positions and cut on the sample
rng = np.random.default_rng(1)
pts = rng.normal(size=(20_000, 3)) * [2.0, 1.0, 0.5]
parts = near_cubic_parts(3, np.ptp(pts, axis=0))
sample = pts[sample_positions(pts, 0.05, seed=2, n_cells=3)]
grid = multisection_divide(sample, parts)
cell = apply_division(pts, grid)
print("parts per dimension:", parts)
print("neurons per cell on all points:", np.bincount(cell, minlength=grid.n_cells).tolist())
for k, box in enumerate(grid.cell_boxes()):
    print(k, [(round(lo, 2), round(hi, 2)) for lo, hi in box])
