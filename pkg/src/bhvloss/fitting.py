"""Coefficient fitting: per-condition Levenberg-Marquardt, RMSE aggregation,
percent-error statistics and the two-stage polynomial coefficient surface."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EvalDomain, FitError, RankDeficient, ZeroReference
from .expression import Expr, compile_expr, parse, serialize

CHI_RTOL = 1e-10
GTOL = 1e-10
STALL_GTOL = 1e-6
MAX_ITER = 200
EXCLUDE_FRACTION = 0.01


@dataclass
class ConditionFit:
    j: int
    coeffs: np.ndarray
    chi_sq: float
    converged: bool
    iterations: int
    singular: bool = False
    excluded: tuple = ()
    message: str = ""
    stationary: bool = True
    history: tuple = ()     # chi^2 after each accepted step, starting value first


@dataclass
class ErrorStats:
    mu_err: float
    sigma_err: float
    err_max: float
    errors: np.ndarray


def _as_columns(variables):
    if hasattr(variables, "variables"):
        variables = variables.variables()
    if isinstance(variables, dict):
        return tuple(np.asarray(variables[k], dtype=float) for k in ("fs", "vin", "d", "rt"))
    x = np.asarray(variables, dtype=float)
    return tuple(x[:, c] for c in range(4))


def nlls_fit(e: Expr, variables, y, p_init=None, j: int = 0,
             max_iter: int = MAX_ITER) -> ConditionFit:
    """Minimize the mean squared residual of ``e`` against ``y`` over its coefficients.

    Levenberg-Marquardt with Marquardt's diagonal scaling and a central
    difference Jacobian (step ``max(1e-6, 1e-6 |p_k|)``). Only steps that
    lower chi^2 are accepted. Stops when the relative chi^2 decrease of an
    accepted step falls below 1e-10 or the scaled gradient below 1e-10.

    ``variables`` is a TrainingSet, a ``{fs, vin, d, rt}`` mapping or an
    ``(n, 4)`` array. Points where the model is non-finite at ``p_init`` are
    dropped if they are fewer than 1% of ``n``; otherwise ``EvalDomain`` is
    raised. A rank-deficient Jacobian at the solution flags the fit as
    ``singular`` and unconverged, chi^2 is still reported.
    """
    fs, vin, d, rt = _as_columns(variables)
    y = np.asarray(y, dtype=float)
    n = y.size
    k_coef = e.n_coefficients
    if n <= k_coef:
        raise FitError(f"need more points than coefficients (n={n}, K={k_coef})")
    f = compile_expr(e)
    p = np.ones(k_coef) if p_init is None else np.array(p_init, dtype=float).ravel()
    if p.size != k_coef:
        raise FitError(f"p_init has {p.size} entries, expression needs {k_coef}")

    with np.errstate(all="ignore"):
        return _lm(e, f, fs, vin, d, rt, y, p, j, max_iter)


def _lm(e, f, fs, vin, d, rt, y, p, j, max_iter):
    n = y.size
    k_coef = p.size
    r = np.broadcast_to(f(fs, vin, d, rt, p), y.shape) - y
    bad = ~np.isfinite(r)
    excluded = ()
    if bad.any():
        if bad.sum() >= EXCLUDE_FRACTION * n:
            raise EvalDomain({"count": int(bad.sum()), "n": n}, serialize(e))
        keep = ~bad
        excluded = tuple(int(i) for i in np.flatnonzero(bad))
        fs, vin, d, rt, y, r = fs[keep], vin[keep], d[keep], rt[keep], y[keep], r[keep]
        n = y.size
    chi = float(r @ r) / n
    if not np.isfinite(chi):
        raise EvalDomain({"chi_sq": chi}, serialize(e))
    if k_coef == 0:
        return ConditionFit(j, p, chi, True, 0, excluded=excluded, message="no coefficients")

    idx = np.arange(k_coef)
    shape2 = (2 * k_coef, n)

    def residual(q):
        v = f(fs, vin, d, rt, q)
        if np.shape(v) != y.shape:
            v = np.broadcast_to(v, y.shape)
        return v - y

    def jacobian(q):
        h = np.maximum(1e-6, 1e-6 * np.abs(q))
        stack = np.repeat(q[:, None], 2 * k_coef, axis=1)
        stack[idx, idx] += h
        stack[idx, k_coef + idx] -= h
        vals = f(fs, vin, d, rt, stack[:, :, None])
        if np.shape(vals) != shape2:
            vals = np.broadcast_to(vals, shape2)
        return ((vals[:k_coef] - vals[k_coef:]) / (2 * h)[:, None]).T

    y_scale = np.sqrt(float(y @ y) / n)
    lam = 1e-3
    stationary = False
    message = "max iterations"
    it = 0
    jac = jacobian(p)
    history = [chi]
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        a = jac.T @ jac
        if not (np.isfinite(a).all() and np.isfinite(g).all()):
            message = "non-finite Jacobian"
            break
        diag = a.diagonal().copy()
        scale = np.sqrt(np.maximum(diag, 1e-300))
        rnorm = np.sqrt(chi * n)
        cosine = np.max(np.abs(g) / scale)
        if rnorm == 0 or cosine <= GTOL * rnorm:
            stationary, message = True, "gradient"
            break
        dmax = diag.max()
        diag = np.maximum(diag, 1e-12 * dmax if dmax > 0 else 1e-300)
        accepted = False
        while lam < 1e16:
            damped = a.copy()
            damped[idx, idx] += lam * diag
            try:
                step = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            q = p + step
            r_new = residual(q)
            chi_new = float(r_new @ r_new) / n
            if chi_new < chi:  # False for nan
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no representable improvement: fine if stationary or at roundoff level
            stationary = bool(cosine <= STALL_GTOL * rnorm or np.sqrt(chi) <= 1e-12 * y_scale)
            message = "stalled"
            break
        rel = (chi - chi_new) / chi
        p, r, chi = q, r_new, chi_new
        history.append(chi)
        lam = max(lam / 10, 1e-15)
        jac = jacobian(p)
        if rel < CHI_RTOL or chi == 0:
            stationary, message = True, "chi2"
            break

    singular = _rank_deficient(jac)
    return ConditionFit(j, p, chi, stationary and not singular, it, singular, excluded,
                        message, stationary, tuple(history))


def _rank_deficient(jac) -> bool:
    if jac.size == 0 or not np.all(np.isfinite(jac)):
        return True
    norms = np.linalg.norm(jac, axis=0)
    if np.any(norms == 0):
        return True
    s = np.linalg.svd(jac / norms, compute_uv=False)
    return bool(s[-1] <= max(jac.shape) * np.finfo(float).eps * s[0] * 1e3)


def fit_condition(e: Expr, variables, y, j: int = 0, max_iter: int = MAX_ITER) -> ConditionFit:
    """Fit from all-ones; retry once from all-1e-6 if no stopping criterion was met.

    A rank-deficient Jacobian alone does not trigger the retry: a restart
    cannot remove a structural redundancy between coefficients. The
    lower-chi^2 result is returned; ``EvalDomain`` only when both starts fail.
    """
    k_coef = e.n_coefficients
    best, failure = None, None
    for start in (1.0, 1e-6):
        try:
            fit = nlls_fit(e, variables, y, np.full(k_coef, start), j, max_iter)
        except EvalDomain as exc:
            failure = exc
            continue
        if best is None or fit.chi_sq < best.chi_sq:
            best = fit
        if best.stationary:
            break
    if best is None:
        raise failure
    return best


def fit_all(e: Expr, training, max_iter: int = MAX_ITER) -> list[ConditionFit]:
    """Independent per-condition fits, ordered by condition index."""
    return [fit_condition(e, training, training.y[j], j, max_iter) for j in range(training.m)]


def rmse(chi_sqs) -> float:
    chi_sqs = np.asarray(chi_sqs, dtype=float)
    if chi_sqs.size == 0:
        raise ValueError("rmse needs at least one condition")
    return float(np.sqrt(np.mean(chi_sqs)))


def predict(e: Expr, coeff_rows, training) -> np.ndarray:
    """Model values, shape ``(m, n)``; row j uses ``coeff_rows[j]``."""
    fs, vin, d, rt = _as_columns(training)
    f = compile_expr(e)
    out = np.empty((len(coeff_rows), fs.size))
    with np.errstate(all="ignore"):
        for j, p in enumerate(coeff_rows):
            out[j] = np.broadcast_to(f(fs, vin, d, rt, np.asarray(p, dtype=float)), fs.shape)
    return out


def error_stats(pred, y) -> ErrorStats:
    """Percent-error statistics of ``pred`` against reference ``y``.

    Population standard deviation; ``err_max`` is the largest absolute error.
    Non-finite predictions count as infinite error.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise ZeroReference("reference value of 0 W makes relative error undefined")
    with np.errstate(all="ignore"):
        err = (np.asarray(pred, dtype=float) - y) * 100.0 / y
    err = np.where(np.isfinite(err), err, np.inf)
    return ErrorStats(float(np.mean(err)), float(np.std(err)), float(np.max(np.abs(err))), err)


def percent_errors(e: Expr, fits, training) -> ErrorStats:
    rows = [fit.coeffs if isinstance(fit, ConditionFit) else fit for fit in fits]
    return error_stats(predict(e, rows, training), training.y)


# -- polynomial coefficient surfaces ----------------------------------------

def lls_polyfit(x, y, degree: int, force_leading_zero: bool = False) -> np.ndarray:
    """Least-squares polynomial, coefficients highest power first.

    Solved through a QR factorization of the column-scaled Vandermonde
    matrix. With ``force_leading_zero`` the highest-power coefficient is
    pinned to 0 and returned as such.
    """
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.vander(x, degree + 1)
    if force_leading_zero:
        v = v[:, 1:]
    if x.size < v.shape[1] or np.unique(x).size < v.shape[1]:
        raise RankDeficient(f"{np.unique(x).size} distinct points for {v.shape[1]} unknowns")
    norms = np.linalg.norm(v, axis=0)
    q, r = np.linalg.qr(v / norms)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-12 * diag.max():
        raise RankDeficient("Vandermonde matrix is numerically rank deficient")
    sol = np.linalg.solve(r, q.T @ y) / norms
    if force_leading_zero:
        sol = np.concatenate([[0.0], sol])
    return sol


@dataclass
class SurfaceCoefficient:
    """One surfaced coefficient: ``b[x]`` holds ``(b0, b1, b2)`` for ``a_x``.

    ``p(v_dr, r_g) = a0 v_dr^2 + a1 v_dr + a2`` with
    ``a_x(r_g) = b0 r_g^2 + b1 r_g + b2``.
    """

    b: np.ndarray
    force_b0_zero: bool
    stage1: dict = field(default_factory=dict)

    def a(self, r_g):
        r_g = np.asarray(r_g, dtype=float)
        return np.stack([np.polyval(self.b[x], r_g) for x in range(3)])

    def __call__(self, v_dr, r_g):
        a0, a1, a2 = self.a(r_g)
        v_dr = np.asarray(v_dr, dtype=float)
        return a0 * v_dr ** 2 + a1 * v_dr + a2


@dataclass
class CoefficientSurface:
    model: str
    surfaced: dict
    fixed: dict
    # per-condition inputs of the fit: rows of (v_dr, r_g, *coeffs)
    points: list = field(default_factory=list)

    @property
    def n_coefficients(self) -> int:
        return max(list(self.surfaced) + list(self.fixed)) + 1

    def coefficients_at(self, v_dr: float, r_g: float) -> np.ndarray:
        p = np.empty(self.n_coefficients)
        for k, sc in self.surfaced.items():
            p[k] = sc(v_dr, r_g)
        for k, value in self.fixed.items():
            p[k] = value
        return p

    def predict(self, training) -> np.ndarray:
        rows = [self.coefficients_at(v, r) for v, r in training.conditions]
        return predict(parse(self.model), rows, training)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "surfaced": {
                f"p{k}": {
                    "force_b0_zero": sc.force_b0_zero,
                    "b": {f"a{x}": [float(v) for v in sc.b[x]] for x in range(3)},
                    "stage1": {repr(float(r)): [float(v) for v in a]
                               for r, a in sorted(sc.stage1.items())},
                }
                for k, sc in sorted(self.surfaced.items())
            },
            "fixed": {f"p{k}": float(v) for k, v in sorted(self.fixed.items())},
            "points": [[float(v) for v in row] for row in self.points],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CoefficientSurface":
        surfaced = {}
        for name, entry in doc["surfaced"].items():
            b = np.array([entry["b"][f"a{x}"] for x in range(3)], dtype=float)
            stage1 = {float(r): np.array(a) for r, a in entry.get("stage1", {}).items()}
            surfaced[int(name[1:])] = SurfaceCoefficient(b, bool(entry["force_b0_zero"]), stage1)
        fixed = {int(name[1:]): float(v) for name, v in doc.get("fixed", {}).items()}
        return cls(doc["model"], surfaced, fixed, [list(r) for r in doc.get("points", [])])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CoefficientSurface":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_coefficient_surface(coeff_rows, conditions, which_coeffs: dict,
                            model: str = "") -> CoefficientSurface:
    """Two-stage polynomial surface over the gate-drive grid.

    ``coeff_rows[j]`` are the fitted coefficients for ``conditions[j] =
    (v_dr, r_g)``, which must cover the full ``v_dr x r_g`` grid.
    ``which_coeffs`` maps coefficient index to its ``force_b0_zero`` flag.
    Stage 1 fits each coefficient against ``v_dr`` (quadratic) per ``r_g``;
    stage 2 fits each resulting ``a_x`` against ``r_g`` (quadratic, or linear
    when flagged). Coefficients not surfaced are fixed at their mean.
    """
    rows = np.array([fit.coeffs if isinstance(fit, ConditionFit) else fit
                     for fit in coeff_rows], dtype=float)
    conditions = np.asarray(conditions, dtype=float)
    v_values = np.unique(conditions[:, 0])
    r_values = np.unique(conditions[:, 1])
    lookup = {(float(v), float(r)): j for j, (v, r) in enumerate(conditions)}
    missing = [(v, r) for v in v_values for r in r_values if (float(v), float(r)) not in lookup]
    if missing:
        raise FitError(f"coefficient grid is missing cells {missing}")

    surfaced = {}
    for k, force in sorted(which_coeffs.items()):
        stage1 = {}
        for r in r_values:
            pk = [rows[lookup[(float(v), float(r))], k] for v in v_values]
            stage1[float(r)] = lls_polyfit(v_values, pk, 2)
        a_by_r = np.array([stage1[float(r)] for r in r_values])
        b = np.array([lls_polyfit(r_values, a_by_r[:, x], 2, force_leading_zero=force)
                      for x in range(3)])
        surfaced[k] = SurfaceCoefficient(b, bool(force), stage1)
    fixed = {k: float(rows[:, k].mean()) for k in range(rows.shape[1]) if k not in which_coeffs}
    points = [[float(v), float(r), *map(float, row)] for (v, r), row in zip(conditions, rows)]
    return CoefficientSurface(model, surfaced, fixed, points)


# per-coefficient b0 constraint for the reference three-coefficient model:
# p0 linear in r_g, p2 quadratic, p1 held at its mean
REFERENCE_SURFACE = {0: True, 2: False}
