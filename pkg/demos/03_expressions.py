"""
Expression trees
================

Parse a model, evaluate it, score its complexity and reduce it to the
canonical form used to recognize the same model across runs.
"""

import numpy as np

from bhvloss.expression import (
    canonicalize, complexity, evaluate, parse, reference_model, serialize,
)

e = parse("(add (mul p0 fs) p1)")
print(e, "uses", e.n_coefficients, "coefficients")
print(evaluate(e, {"fs": 45e3}, [2.0, 1.0]))

# the three-coefficient reference law
ref = reference_model()
print(serialize(ref))
point = {"fs": 75e3, "vin": 300.0, "d": 0.5, "rt": 70.0}
print("value:", evaluate(ref, point, [1e-7, 1.0, 1e-9]), "W")

# evaluation is vectorized over arrays of operating points
fs = np.array([45e3, 75e3, 105e3])
print(evaluate(ref, {**point, "fs": fs}, [1e-7, 1.0, 1e-9]))

# complexity: nesting multiplies factors, sums and products add them,
# and direct products of variables are discounted
for text in ["fs", "(mul fs vin)", "(log (mul fs vin))", "(exp (div vin rt))"]:
    print(f"{text:24s} {complexity(parse(text)):g}")
print("reference law:", round(complexity(ref), 10))

# same model written twice, one canonical string
a = parse("(add (mul p3 vin) (mul fs p1))")
b = parse("(add (mul p0 fs) (mul vin p1))")
print(canonicalize(a)[1])
print(canonicalize(b)[1])
