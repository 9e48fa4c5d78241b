import math
from dataclasses import replace

import numpy as np
import pytest

from bhvloss.expression import FS, canonical_string, parse, reference_model, violates_limits
from bhvloss.gp_engine import (
    ModelArchive, ModelScore, RunConfig, crossover, evolve, multi_run, mutate, random_tree,
    read_run_log, score_expr, seeded_configs, write_run_log,
)
from bhvloss.pareto import dominates, non_dominated_sort

CONFIG = RunConfig()


def within_limits(e, config=CONFIG):
    return violates_limits(e, config.max_depth, config.max_coefficients, config.variable_pow) is None


def contiguous(e):
    return sorted(set(e.coefficient_indices())) == list(range(e.n_coefficients))


@pytest.fixture(scope="module")
def one_condition(training):
    return training.subset([4])


def test_depth_one_gives_terminal():
    rng = np.random.default_rng(0)
    for _ in range(50):
        e = random_tree(CONFIG, rng, max_depth=1)
        assert e.is_leaf and e.is_variable


def test_random_trees_within_limits():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        e = random_tree(CONFIG, rng)
        assert within_limits(e) and e.has_variable()


def test_random_tree_sequence_is_seeded():
    a = [random_tree(CONFIG, np.random.default_rng(42)) for _ in range(1)]
    seq = lambda: [str(random_tree(CONFIG, r)) for r in [np.random.default_rng(42)] for _ in range(20)]
    assert seq() == seq()
    assert str(a[0]) == seq()[0]


def test_crossover_of_single_variables():
    rng = np.random.default_rng(0)
    assert crossover(FS, FS, CONFIG, rng) == (FS, FS)


def test_crossover_repairs_deep_children():
    config = replace(CONFIG, max_depth=4)
    rng = np.random.default_rng(3)
    a = random_tree(CONFIG, rng, max_depth=8)
    for _ in range(50):
        b = random_tree(CONFIG, rng, max_depth=8)
        for child in crossover(a, b, config, rng):
            assert within_limits(child, config)


def test_crossover_invariant_sweep():
    rng = np.random.default_rng(4)
    pool = [random_tree(CONFIG, rng) for _ in range(200)]
    for _ in range(10_000):
        a, b = pool[rng.integers(200)], pool[rng.integers(200)]
        for child in crossover(a, b, CONFIG, rng):
            assert within_limits(child) and contiguous(child)
            assert canonical_string(child) == str(child)


def test_mutation_on_terminal_is_safe():
    rng = np.random.default_rng(5)
    for _ in range(200):
        e = mutate(FS, CONFIG, rng)
        assert within_limits(e) and contiguous(e)


def test_mutation_repairs_limits():
    config = replace(CONFIG, max_depth=3, max_coefficients=1)
    rng = np.random.default_rng(6)
    e = reference_model()
    for _ in range(200):
        assert within_limits(mutate(e, config, rng), config)


def test_mutation_invariant_sweep():
    rng = np.random.default_rng(7)
    e = random_tree(CONFIG, rng)
    for _ in range(10_000):
        e = mutate(e, CONFIG, rng)
        assert within_limits(e) and contiguous(e)
        if rng.random() < 0.1:
            e = random_tree(CONFIG, rng)


def test_score_reference_model(training):
    s = score_expr(reference_model(), training)
    assert math.isfinite(s.rmse) and s.rmse < 0.1 * training.y.mean()
    assert s.f_complexity == pytest.approx(12.7)


def test_score_constant_model(training):
    s = score_expr(parse("p0"), training)
    assert s.rmse == pytest.approx(math.sqrt(np.mean(training.y.var(axis=1))), rel=1e-9)


def test_score_domain_failure(training):
    s = score_expr(parse("(log (sub d (div fs fs)))"), training)
    assert s.rmse == math.inf


def test_zero_generations(one_condition):
    r = evolve(replace(CONFIG, population_size=20, generations=0), one_condition)
    assert len(r.log) == 1
    assert len(r.population) == 20


@pytest.fixture(scope="module")
def small_run(one_condition):
    config = replace(CONFIG, population_size=30, generations=6, rng_seed=3)
    return config, evolve(config, one_condition)


def test_run_is_deterministic(small_run, one_condition):
    config, first = small_run
    again = evolve(config, one_condition)
    assert again.log == first.log
    assert again.scores == first.scores


def test_logged_models_respect_limits(small_run):
    _, r = small_run
    for generation in r.log:
        for key in generation:
            e = parse(key)
            assert within_limits(e) and contiguous(e)


def test_front_zero_never_regresses(small_run):
    _, r = small_run

    def front0(keys):
        pts = [(r.scores[k].rmse, r.scores[k].f_complexity) for k in keys
               if math.isfinite(r.scores[k].rmse)]
        return [pts[i] for i in non_dominated_sort(pts)[0]]

    for old, new in zip(r.log, r.log[1:]):
        later = front0(new)
        for p in front0(old):
            assert any(q == p or dominates(q, p) for q in later)


def test_archive_presence_definition():
    logs = {1: [["m"]] * 10 + [[]] * 5, 2: [["m"]] * 20}
    arch = ModelArchive.from_logs(logs, {"m": ModelScore(1.0, 1.0)})
    assert arch.entries["m"].n_run == 2
    assert arch.entries["m"].n_gen == 15


def test_archive_single_run_model():
    logs = {s: [["a"]] for s in range(1, 51)}
    logs[7] = [["a", "rare"]]
    arch = ModelArchive.from_logs(logs, {})
    assert arch.entries["rare"].n_run == 1
    assert arch.entries["a"].n_run == 50
    assert arch.n_runs == 50


def test_reappearing_model_counts_total_presence():
    logs = {1: [["m"], [], ["m"], ["m"]]}
    assert ModelArchive.from_logs(logs, {}).entries["m"].n_gen == 3


def test_multi_run_archive(one_condition, tmp_path):
    base = replace(CONFIG, population_size=12, generations=2)
    configs = seeded_configs(base, 3)
    results = []
    arch = multi_run(configs, one_condition, on_result=results.append)
    distinct = set()
    for r in results:
        per_run = set(k for gen in r.log for k in gen)
        distinct |= per_run
        flags = sum(1 for e in arch.entries.values() if r.seed in e.presence)
        assert flags == len(per_run)
    assert len(arch.entries) == len(distinct)
    arch.save(tmp_path / "a.json")
    back = ModelArchive.load(tmp_path / "a.json")
    assert back.to_dict() == arch.to_dict()
    write_run_log(results[0], tmp_path / "run.csv")
    log, _ = read_run_log(tmp_path / "run.csv")
    assert log == results[0].log


def test_multi_run_rejects_duplicate_seeds(one_condition):
    with pytest.raises(ValueError):
        multi_run([CONFIG, CONFIG], one_condition)


def test_parallel_multi_run_matches_serial(one_condition):
    configs = seeded_configs(replace(CONFIG, population_size=10, generations=1), 2, seed_base=11)
    serial = multi_run(configs, one_condition)
    parallel = multi_run(configs, one_condition, parallel=2)
    assert serial.to_dict() == parallel.to_dict()
