"""
Fitting the reference law and its coefficient surface
=====================================================

Fit the three coefficients separately for every gate-drive condition,
then describe two of them as smooth functions of the drive voltage and
gate resistance.
"""

import numpy as np

from bhvloss import generate_training_set, reference_device, reference_grid
from bhvloss.expression import reference_model, serialize
from bhvloss.fitting import REFERENCE_SURFACE, fit_all, fit_coefficient_surface, percent_errors

ts = generate_training_set(reference_grid(), reference_device())
model = reference_model()

fits = fit_all(model, ts)
for (v_dr, r_g), fit in zip(ts.conditions, fits):
    p0, p1, p2 = fit.coeffs
    print(f"v_dr={v_dr:4.1f} r_g={r_g:.0f}  p0={p0:.3e} p1={p1:.4f} p2={p2:.3e}")

direct = percent_errors(model, fits, ts)
print(f"per-condition fit: mu={direct.mu_err:.2f}% sigma={direct.sigma_err:.2f}% "
      f"err_max={direct.err_max:.2f}%")

# p0 is linear in r_g (b0 pinned to zero), p2 quadratic, p1 held at its mean
surface = fit_coefficient_surface(fits, ts.conditions, REFERENCE_SURFACE, serialize(model))
for k, sc in surface.surfaced.items():
    print(f"p{k} b-matrix (rows a0, a1, a2; columns b0, b1, b2):")
    print(np.array2string(sc.b, precision=3))
print("p1 fixed at", surface.fixed[1])

surfaced = percent_errors(model, [surface.coefficients_at(v, r) for v, r in ts.conditions], ts)
print(f"surfaced model:    mu={surfaced.mu_err:.2f}% sigma={surfaced.sigma_err:.2f}% "
      f"err_max={surfaced.err_max:.2f}%")
