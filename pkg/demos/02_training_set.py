"""
Building the training set
=========================

Sweep the operating grid, store the switching loss of every cell and read
the file back.
"""

import tempfile
from pathlib import Path

import numpy as np

from bhvloss import (
    generate_training_set, load_training_set, reference_device, save_training_set, reference_grid,
)

grid = reference_grid()
print(f"{grid.n} operating points x {grid.m} gate-drive conditions")

ts = generate_training_set(grid, reference_device())
print("y shape:", ts.y.shape, " range: %.3f .. %.3f W" % (ts.y.min(), ts.y.max()))

# one row of conditions: (v_dr, r_g)
print(ts.conditions)

# mean loss per condition, the stronger drive loses less
for (v_dr, r_g), row in zip(ts.conditions, ts.y):
    print(f"v_dr={v_dr:4.1f} r_g={r_g:.0f}  mean p_sw={row.mean():.3f} W")

# the CSV keeps full float precision, so a round trip is exact
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "training.csv"
    save_training_set(ts, path)
    print(path.read_text().splitlines()[:4])
    assert load_training_set(path) == ts
    print("round trip ok:", np.array_equal(load_training_set(path).y, ts.y))
