"""
Pareto ranking
==============

Rank (error, complexity) pairs into fronts and measure how crowded each
front is.
"""

import numpy as np

from bhvloss.pareto import crowding_distance, dominates, non_dominated_sort

print(dominates((1, 1), (2, 2)), dominates((1, 2), (2, 1)))

rng = np.random.default_rng(0)
pts = rng.random((12, 2))
fronts = non_dominated_sort(pts)
for k, front in enumerate(fronts):
    dist = crowding_distance(pts[front])
    print(f"front {k}: points {front}  crowding {np.round(dist, 3)}")

# a front of three evenly spaced points: the middle one sits at distance 2
print(crowding_distance([(0, 2), (1, 1), (2, 0)]))
