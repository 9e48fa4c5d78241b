"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line that is printed in the terminal
summary (and immediately, when output capture is off).
"""
import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

import conftest
from oracle_pareto import brute_fronts, random_instance
from oracle_physics import oracle_total
from bhvloss.dataset import expand_grid, load_training_set, save_training_set
from bhvloss.device_model import GateDriveCondition
from bhvloss.expression import (
    D, FS, VIN, canonicalize, complexity, compile_expr, evaluate, node, parse, reference_model,
    serialize,
)
from bhvloss.errors import EvalDomain
from bhvloss.fitting import (
    REFERENCE_SURFACE, fit_all, fit_coefficient_surface, nlls_fit, percent_errors,
)
from bhvloss.gp_engine import (
    ModelArchive, ModelScore, RunConfig, multi_run, random_tree, seeded_configs,
)
from bhvloss.inverter_loss import OperatingPoint, total_loss
from bhvloss.pareto import non_dominated_sort

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(number, title):
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException:
        _record(number, "FAIL", title, detail, time.perf_counter() - start)
        raise
    _record(number, "PASS", title, detail, time.perf_counter() - start)


def _record(number, status, title, detail, seconds):
    extra = " ".join(f"{k}={v}" for k, v in detail.items())
    line = f"[{number}] {status} {title} ({seconds:.1f} s) {extra}".rstrip()
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def test_1_physics_oracle(device, device_dict, grid):
    with criterion(1, "physics matches independent oracle") as info:
        rng = np.random.default_rng(2026)
        worst = 0.0
        for _ in range(10):
            args = (rng.uniform(45e3, 105e3), rng.uniform(200, 400), rng.uniform(0.1, 1.0),
                    rng.uniform(40, 100), rng.uniform(10, 20), rng.uniform(1, 5))
            lb = total_loss(OperatingPoint(*args[:4]), GateDriveCondition.symmetric(*args[4:]),
                            device)
            ref = oracle_total(device_dict, *args)
            for ours, theirs in ((lb.p_sw, ref["p_sw"]), (lb.p_cond, ref["p_cond"]),
                                 (lb.p_tot, ref["p_tot"]), (lb.t_final, ref["t_final"])):
                worst = max(worst, abs(ours - theirs) / abs(theirs))
        info["max_rel"] = f"{worst:.1e}"
        assert worst <= 1e-9
        iterations = max(total_loss(op, gd, device).iterations for op, gd in expand_grid(grid))
        info["max_iterations"] = iterations
        assert iterations < 100


def test_2_dataset_scale(grid, training):
    with criterion(2, "reference grid gives 1215 vectors") as info:
        info["vectors"] = training.n * training.m
        info["n"], info["m"] = training.n, training.m
        assert len(expand_grid(grid)) == 1215
        assert (training.n, training.m) == (135, 9)
        assert np.all(np.isfinite(training.y)) and np.all(training.y > 0)


def test_3_lm_recovery(training):
    with criterion(3, "LM recovers the reference structure") as info:
        e = reference_model()
        f = compile_expr(e)
        fs, vin, d, rt = training.x.T
        truths = np.array([fit.coeffs for fit in fit_all(e, training)])
        rng = np.random.default_rng(3)
        start = time.perf_counter()
        worst = 0.0
        for j in range(training.m):
            y = f(fs, vin, d, rt, truths[j])
            p0 = truths[j] * (1 + rng.uniform(-0.2, 0.2, 3))
            fit = nlls_fit(e, training.x, y, p0, j)
            worst = max(worst, float(np.max(np.abs(fit.coeffs - truths[j]) / np.abs(truths[j]))))
        seconds = time.perf_counter() - start
        info["max_rel"] = f"{worst:.1e}"
        info["fit_time_s"] = f"{seconds:.2f}"
        assert worst <= 1e-6
        assert seconds < 1.0


def test_4_nsga_oracle():
    with criterion(4, "non-dominated sort equals brute force") as info:
        rng = np.random.default_rng(4)
        sizes = []
        for _ in range(100):
            pts = random_instance(rng)
            sizes.append(len(pts))
            assert non_dominated_sort(pts) == brute_fronts(pts)
        info["instances"] = 100
        info["max_points"] = max(sizes)


def test_5_complexity_goldens():
    with criterion(5, "complexity golden values") as info:
        cases = [
            (FS, 1.0),
            (node("mul", FS, VIN), (1 + 1) * 0.6),
            (node("log", node("mul", FS, VIN)), 1.5 * ((1 + 1) * 0.6)),
            # sqrt(d * p0 - fs * vin): 1.5 * (((1 + 1) * 1) + (2 * 0.6)) * 1
            (parse("(sqrt (sub (mul d p0) (mul fs vin)))"), 1.5 * (((1 + 1) * 1 + 2 * 0.6) * 1)),
            # exp(vin / rt) * p0 + tanh(d): ((1.5 * (1 + 1) * 1.5 + 1) * 1 + 1.5 * 1) * 1
            (parse("(add (mul (exp (div vin rt)) p0) (tanh d))"),
             ((1.5 * ((1 + 1) * 1.5) + 1) * 1 + 1.5 * 1) * 1),
        ]
        got = [complexity(e) for e, _ in cases]
        info["scores"] = ",".join(f"{v:g}" for v in got)
        assert got == [v for _, v in cases]


def test_6_reference_structure_on_pipeline_data(training):
    with criterion(6, "reference structure fit and surface on pipeline data") as info:
        e = reference_model()
        fits = fit_all(e, training)
        direct = percent_errors(e, fits, training)
        surface = fit_coefficient_surface(fits, training.conditions, REFERENCE_SURFACE,
                                          serialize(e))
        surfaced = percent_errors(
            e, [surface.coefficients_at(v, r) for v, r in training.conditions], training)
        info["mu"] = f"{direct.mu_err:.2f}%"
        info["err_max"] = f"{direct.err_max:.2f}%"
        info["surfaced_err_max"] = f"{surfaced.err_max:.2f}%"
        assert direct.err_max <= 25 and abs(direct.mu_err) <= 2
        assert surfaced.err_max <= 30
        rows = np.array([fit.coeffs for fit in fits])
        conds = np.asarray(training.conditions)
        for r_g in np.unique(conds[:, 1]):
            sel = np.flatnonzero(conds[:, 1] == r_g)
            order = sel[np.argsort(conds[sel, 0])]
            slope0 = np.polyfit(conds[order, 0], rows[order, 0], 1)[0]
            slope2 = np.polyfit(conds[order, 0], rows[order, 2], 1)[0]
            assert slope0 < 0 < slope2


@pytest.mark.slow
def test_7_gp_smoke(training):
    with criterion(7, "five seeded GP runs, deterministic") as info:
        one = training.subset([4])
        configs = seeded_configs(RunConfig(population_size=200, generations=60), 5)
        first, second = [], []
        arch = multi_run(configs, one, on_result=first.append)
        again = multi_run(configs, one, on_result=second.append)
        assert [r.log for r in first] == [r.log for r in second]
        assert [r.scores for r in first] == [r.scores for r in second]
        assert arch.to_dict() == again.to_dict()
        best = math.inf
        for r in first:
            front = [ind for ind in r.population if ind.rank == 0]
            best = min([best] + [ind.score.err_max for ind in front])
        info["best_front0_err_max"] = f"{best:.1f}%"
        info["models"] = len(arch.entries)
        assert best < 80


def test_8_repeatability_metrics():
    with criterion(8, "N_run / N_gen definitions") as info:
        logs = {1: [["m"]] * 10, 2: [["m"]] * 20}
        entry = ModelArchive.from_logs(logs, {"m": ModelScore(1.0, 1.0)}).entries["m"]
        info["N_run"], info["N_gen"] = entry.n_run, entry.n_gen
        assert (entry.n_run, entry.n_gen) == (2, 15)


def _canonical_coeffs(e, p):
    from bhvloss.expression import _canon_structure
    order = []
    for n in _canon_structure(e).walk():
        if n.is_coefficient and n.index not in order:
            order.append(n.index)
    return np.array([p[k] for k in order])


def test_9_round_trips(training, tmp_path):
    with criterion(9, "round trips and canonical invariance") as info:
        config = RunConfig()
        rng = np.random.default_rng(9)
        trees = [random_tree(config, rng) for _ in range(1000)]
        assert all(parse(serialize(e)) == e for e in trees)

        path = tmp_path / "training.csv"
        save_training_set(training, path)
        back = load_training_set(path)
        assert back == training
        save_training_set(back, tmp_path / "again.csv")
        assert path.read_bytes() == (tmp_path / "again.csv").read_bytes()

        point = {"fs": 75e3, "vin": 300.0, "d": 0.5, "rt": 70.0}
        evaluated = 0
        for e in trees:
            c, _ = canonicalize(e)
            assert complexity(c) == complexity(e)
            p = rng.uniform(0.5, 2.0, e.n_coefficients)
            try:
                a = evaluate(e, point, p)
            except EvalDomain:
                continue
            b = evaluate(c, point, _canonical_coeffs(e, p))
            assert math.isclose(a, b, rel_tol=1e-12)
            evaluated += 1
        info["trees"] = len(trees)
        info["evaluated"] = evaluated
