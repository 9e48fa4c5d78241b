"""Genetic programming over expression trees with NSGA-II selection.

Each individual is scored on two minimized objectives: RMSE of its
per-condition least-squares fits and its structural complexity. Multi-run
discovery merges per-generation presence logs into a ``ModelArchive`` that
carries the repeatability metrics (runs in which a model appeared, mean
generations present).

A model's "presence length" in a run is the total number of generations in
which it is part of the population, not the span between first and last
appearance.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import BhvLossError, EvalDomain
from .expression import (
    BINARY, DEFAULT_COMPLEXITY, UNARY, VARIABLES, ComplexityTable, Expr, canonicalize,
    coef, complexity, node, var, violates_limits,
)
from .fitting import error_stats, fit_all, predict, rmse
from .pareto import crowding_distance, non_dominated_sort

DEFAULT_NON_TERMINALS = ("add", "sub", "mul", "div", "log", "exp", "tanh", "atan", "sqrt", "pow")


@dataclass(frozen=True)
class RunConfig:
    population_size: int = 200
    generations: int = 60
    crossover_prob: float = 0.85
    mutation_prob: float = 0.15
    tournament_size: int = 2
    # (mu + lambda) survival is already elitist; extra verbatim copies of the
    # best individuals into each offspring pool
    elitism_count: int = 0
    max_depth: int = 8
    max_coefficients: int = 6
    rng_seed: int = 1
    non_terminals: tuple = DEFAULT_NON_TERMINALS
    variable_pow: bool = False
    fit_max_iter: int = 50
    complexity_table: ComplexityTable = DEFAULT_COMPLEXITY

    def __post_init__(self):
        for name in ("crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("population_size", "tournament_size", "max_depth", "fit_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.generations < 0 or self.max_coefficients < 0 or self.elitism_count < 0:
            raise ValueError("generations, max_coefficients and elitism_count must be >= 0")
        unknown = set(self.non_terminals) - set(UNARY + BINARY)
        if unknown or not self.non_terminals:
            raise ValueError(f"bad non-terminal set {self.non_terminals}")
        object.__setattr__(self, "non_terminals", tuple(self.non_terminals))

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc.get("gp", doc))
        unknown = set(doc) - {f for f in cls.__dataclass_fields__ if f != "complexity_table"}
        if unknown:
            raise ValueError(f"unknown run config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class ModelScore:
    rmse: float
    f_complexity: float
    mu_err: float = math.inf
    sigma_err: float = math.inf
    err_max: float = math.inf
    coeffs: tuple = ()


@dataclass
class Individual:
    expr: Expr
    key: str
    score: ModelScore | None = None
    rank: int = 0
    crowding: float = 0.0
    birth_generation: int = 0

    @property
    def rmse(self) -> float:
        return self.score.rmse

    @property
    def f_complexity(self) -> float:
        return self.score.f_complexity


# -- tree construction and variation -----------------------------------------

def _fresh_index(counter: list) -> int:
    counter[0] += 1
    return counter[0] - 1


def _terminal(rng, counter, budget, allow_coef=True) -> Expr:
    if allow_coef and counter[0] < budget and rng.random() < 0.5:
        return coef(_fresh_index(counter))
    return var(VARIABLES[rng.integers(len(VARIABLES))])


def _grow(config, rng, depth, full, counter) -> Expr:
    if depth <= 1 or (not full and rng.random() < 0.3):
        return _terminal(rng, counter, config.max_coefficients)
    op = config.non_terminals[rng.integers(len(config.non_terminals))]
    if op in UNARY:
        return node(op, _grow(config, rng, depth - 1, full, counter))
    left = _grow(config, rng, depth - 1, full, counter)
    if op == "pow" and not config.variable_pow:
        if counter[0] < config.max_coefficients:
            return node(op, left, coef(_fresh_index(counter)))
        op = "mul"
    return node(op, left, _grow(config, rng, depth - 1, full, counter))


def random_tree(config: RunConfig, rng, max_depth: int | None = None,
                first_index: int = 0) -> Expr:
    """Ramped half-and-half tree with at least one variable.

    Depth is drawn from ``2..max_depth`` (a single terminal when
    ``max_depth`` is 1) and grow/full is chosen with equal odds.
    Coefficients are numbered from ``first_index``.
    """
    max_depth = config.max_depth if max_depth is None else max_depth
    for _ in range(100):
        counter = [first_index]
        if max_depth <= 1:
            tree = _terminal(rng, counter, first_index + config.max_coefficients)
        else:
            depth = int(rng.integers(2, max_depth + 1))
            tree = _grow(replace(config, max_coefficients=first_index + config.max_coefficients),
                         rng, depth, bool(rng.random() < 0.5), counter)
        if tree.has_variable():
            return tree
    return var(VARIABLES[rng.integers(len(VARIABLES))])


def _paths(e: Expr, prefix=()):
    yield prefix, e
    for k, a in enumerate(e.args):
        yield from _paths(a, prefix + (k,))


def _replace(e: Expr, path, new: Expr) -> Expr:
    if not path:
        return new
    args = list(e.args)
    args[path[0]] = _replace(args[path[0]], path[1:], new)
    return Expr(e.op, tuple(args), e.index)


def _shift(e: Expr, offset: int) -> Expr:
    if e.is_coefficient:
        return coef(e.index + offset)
    if e.is_leaf:
        return e
    return Expr(e.op, tuple(_shift(a, offset) for a in e.args))


def _repair(e: Expr, config: RunConfig, rng) -> Expr:
    """Bring ``e`` within the structural limits, then canonicalize."""
    for _ in range(50):
        e = canonicalize(e)[0]
        reason = violates_limits(e, config.max_depth, config.max_coefficients, config.variable_pow)
        if reason is None:
            return e
        if e.depth > config.max_depth:
            for path, sub in list(_paths(e)):
                if len(path) == config.max_depth - 1 and not sub.is_leaf:
                    e = _replace(e, path, var(VARIABLES[rng.integers(len(VARIABLES))]))
            continue
        if not config.variable_pow:
            bad = [p for p, s in _paths(e) if s.op == "pow" and s.args[1].has_variable()]
            if bad:
                path = bad[0] + (1,)
                e = _replace(e, path, coef(e.n_coefficients))
                continue
        exponent = set()
        if not config.variable_pow:
            exponent = {p + (1,) for p, s in _paths(e) if s.op == "pow"}
        coef_paths = [p for p, s in _paths(e) if s.is_coefficient and p not in exponent]
        excess = len(e.coefficient_indices()) - config.max_coefficients
        if len(coef_paths) < excess:
            # drop a pow node (keeping its base) to free its exponent coefficient
            path = next(p for p, s in _paths(e) if s.op == "pow")
            e = _replace(e, path, _node_at(e, path).args[0])
            continue
        for k in sorted(rng.permutation(len(coef_paths))[:excess].tolist()):
            e = _replace(e, coef_paths[k], var(VARIABLES[rng.integers(len(VARIABLES))]))
    raise RuntimeError(f"could not repair tree {e}")


def crossover(a: Expr, b: Expr, config: RunConfig, rng) -> tuple[Expr, Expr]:
    """Swap one uniformly chosen subtree of each parent.

    Donated subtrees get fresh coefficient indices so coefficients of the two
    parents never merge. Offspring are repaired and canonicalized.
    """
    pa = list(_paths(a))
    pb = list(_paths(b))
    path_a, sub_a = pa[rng.integers(len(pa))]
    path_b, sub_b = pb[rng.integers(len(pb))]
    c1 = _replace(a, path_a, _shift(sub_b, a.n_coefficients))
    c2 = _replace(b, path_b, _shift(sub_a, b.n_coefficients))
    return _repair(c1, config, rng), _repair(c2, config, rng)


def mutate(e: Expr, config: RunConfig, rng) -> Expr:
    """Subtree replacement, arity-preserving node substitution, or
    coefficient insertion/removal, chosen uniformly."""
    kind = int(rng.integers(3))
    paths = list(_paths(e))
    path, sub = paths[rng.integers(len(paths))]
    fresh = e.n_coefficients
    if kind == 0:
        room = max(1, config.max_depth - len(path))
        new = random_tree(config, rng, max_depth=min(room, 4), first_index=fresh)
        out = _replace(e, path, new)
    elif kind == 1:
        if sub.is_leaf:
            new = _terminal(rng, [fresh], fresh + 1)
        else:
            pool = [op for op in config.non_terminals
                    if (op in UNARY) == (sub.op in UNARY) and op != sub.op]
            if not pool:
                return _repair(e, config, rng)
            new = Expr(pool[rng.integers(len(pool))], sub.args)
        out = _replace(e, path, new)
    else:
        removable = [(p[:-1], 1 - p[-1]) for p, s in paths
                     if s.is_coefficient and p and not _node_at(e, p[:-1]).op in UNARY]
        if removable and rng.random() < 0.5:
            parent, keep = removable[rng.integers(len(removable))]
            out = _replace(e, parent, _node_at(e, parent).args[keep])
        else:
            op = "mul" if rng.random() < 0.5 else "add"
            out = _replace(e, path, node(op, coef(fresh), sub))
    return _repair(out, config, rng)


def _node_at(e: Expr, path) -> Expr:
    for k in path:
        e = e.args[k]
    return e


# -- scoring -------------------------------------------------------------------

def score_expr(e: Expr, training, table: ComplexityTable = DEFAULT_COMPLEXITY,
               max_iter: int = 200) -> ModelScore:
    """Fit ``e`` on every condition and return its objectives and error stats.

    Models that cannot be evaluated get ``rmse = inf`` and never reach a
    Pareto front.
    """
    cx = complexity(e, table)
    try:
        fits = fit_all(e, training, max_iter)
    except (EvalDomain, np.linalg.LinAlgError, BhvLossError):
        return ModelScore(math.inf, cx)
    value = rmse([f.chi_sq for f in fits])
    if not math.isfinite(value):
        return ModelScore(math.inf, cx)
    rows = [f.coeffs for f in fits]
    stats = error_stats(predict(e, rows, training), training.y)
    return ModelScore(value, cx, stats.mu_err, stats.sigma_err, stats.err_max,
                      tuple(tuple(float(v) for v in r) for r in rows))


def score(ind: Individual, training, cache: dict | None = None,
          config: RunConfig = RunConfig()) -> Individual:
    """Attach objectives to ``ind``; ``cache`` maps canonical strings to scores."""
    if cache is not None and ind.key in cache:
        ind.score = cache[ind.key]
        return ind
    ind.score = score_expr(ind.expr, training, config.complexity_table, config.fit_max_iter)
    if cache is not None:
        cache[ind.key] = ind.score
    return ind


# -- NSGA-II loop --------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    population: list
    log: list            # per generation: canonical strings present, population order
    scores: dict         # canonical string -> ModelScore for every model seen


def _rank(pop: list) -> list:
    """Assign NSGA-II rank and crowding; return the fronts (index lists)."""
    finite = [i for i, ind in enumerate(pop) if math.isfinite(ind.rmse)]
    infinite = [i for i, ind in enumerate(pop) if not math.isfinite(ind.rmse)]
    fronts = [[finite[k] for k in f]
              for f in non_dominated_sort([(pop[i].rmse, pop[i].f_complexity) for i in finite])]
    if infinite:
        fronts.append(sorted(infinite, key=lambda i: (pop[i].f_complexity, pop[i].key)))
    for r, front in enumerate(fronts):
        objs = [(pop[i].rmse, pop[i].f_complexity) if math.isfinite(pop[i].rmse)
                else (0.0, pop[i].f_complexity) for i in front]
        dist = crowding_distance(objs, [pop[i].key for i in front])
        for i, c in zip(front, dist):
            pop[i].rank = r
            pop[i].crowding = float(c)
    return fronts


def _survivors(combined: list, mu: int) -> list:
    unique, seen, dupes = [], set(), []
    for ind in combined:
        (dupes if ind.key in seen else unique).append(ind)
        seen.add(ind.key)
    fronts = _rank(unique)
    chosen = []
    for front in fronts:
        members = [unique[i] for i in front]
        if len(chosen) + len(members) <= mu:
            chosen.extend(members)
            continue
        members.sort(key=lambda ind: (-ind.crowding, ind.key))
        chosen.extend(members[:mu - len(chosen)])
        break
    chosen.extend(dupes[:mu - len(chosen)])
    _rank(chosen)
    return chosen


def _tournament(pop, config, rng) -> Individual:
    picks = rng.integers(len(pop), size=config.tournament_size)
    return min((pop[i] for i in picks), key=lambda ind: (ind.rank, -ind.crowding))


def _new(e: Expr, gen: int) -> Individual:
    c, key = canonicalize(e)
    return Individual(c, key, birth_generation=gen)


def evolve(config: RunConfig, training) -> RunResult:
    """One seeded NSGA-II run; deterministic for a given config and data."""
    rng = np.random.default_rng(config.rng_seed)
    cache: dict = {}
    pop, keys = [], set()
    for _ in range(config.population_size):
        for _attempt in range(20):
            ind = _new(_repair(random_tree(config, rng), config, rng), 0)
            if ind.key not in keys:
                break
        keys.add(ind.key)
        pop.append(score(ind, training, cache, config))
    pop = _survivors(pop, config.population_size)
    log = [_present(pop)]

    for gen in range(1, config.generations + 1):
        elite = sorted(pop, key=lambda ind: (ind.rank, -ind.crowding, ind.key))
        offspring = [_new(ind.expr, gen) for ind in elite[:config.elitism_count]]
        while len(offspring) < config.population_size:
            a = _tournament(pop, config, rng).expr
            b = _tournament(pop, config, rng).expr
            if rng.random() < config.crossover_prob:
                a, b = crossover(a, b, config, rng)
            for child in (a, b):
                if rng.random() < config.mutation_prob:
                    child = mutate(child, config, rng)
                offspring.append(_new(child, gen))
        offspring = [score(ind, training, cache, config)
                     for ind in offspring[:config.population_size]]
        pop = _survivors(pop + offspring, config.population_size)
        log.append(_present(pop))
    return RunResult(config.rng_seed, pop, log, cache)


def _present(pop) -> list:
    return list(dict.fromkeys(ind.key for ind in pop))


# -- multi-run archive -----------------------------------------------------------

@dataclass
class ArchiveEntry:
    key: str
    n_run: int
    n_gen: float
    presence: dict          # run seed -> generations present
    rmse: float
    f_complexity: float
    mu_err: float
    sigma_err: float
    err_max: float


@dataclass
class ModelArchive:
    entries: dict = field(default_factory=dict)
    n_runs: int = 0

    @classmethod
    def from_logs(cls, logs: dict, scores: dict) -> "ModelArchive":
        """Merge per-run presence logs.

        ``logs`` maps run seed to a list of generations (each a list of
        canonical strings); ``scores`` maps canonical string to a
        ``ModelScore``. A model counts for a run if it appears in any
        generation; its N_gen is the mean presence length over those runs.
        """
        presence: dict = {}
        for seed, log in logs.items():
            for generation in log:
                for key in dict.fromkeys(generation):
                    presence.setdefault(key, {}).setdefault(seed, 0)
                    presence[key][seed] += 1
        entries = {}
        for key, per_run in presence.items():
            s = scores.get(key, ModelScore(math.inf, math.nan))
            entries[key] = ArchiveEntry(
                key, len(per_run), float(np.mean(list(per_run.values()))), dict(per_run),
                s.rmse, s.f_complexity, s.mu_err, s.sigma_err, s.err_max)
        return cls(entries, len(logs))

    def sorted_entries(self) -> list:
        return sorted(self.entries.values(), key=lambda e: (-e.n_run, e.rmse, e.key))

    def histogram(self, edges=(1, 2, 5, 10, 20, 51)) -> list[int]:
        """Model counts per ``edges[k] <= N_run < edges[k+1]`` bin."""
        counts = [0] * (len(edges) - 1)
        for e in self.entries.values():
            for k in range(len(edges) - 1):
                if edges[k] <= e.n_run < edges[k + 1]:
                    counts[k] += 1
        return counts

    def to_dict(self) -> dict:
        rows = []
        for e in self.sorted_entries():
            row = asdict(e)
            row["presence"] = {str(k): v for k, v in sorted(e.presence.items())}
            rows.append(row)
        return {"n_runs": self.n_runs, "models": rows}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelArchive":
        with open(path) as fh:
            doc = json.load(fh)
        entries = {}
        for row in doc["models"]:
            row = dict(row)
            row["presence"] = {int(k): v for k, v in row["presence"].items()}
            entries[row["key"]] = ArchiveEntry(**row)
        return cls(entries, doc["n_runs"])


def write_run_log(result: RunResult, path) -> None:
    """One row per (generation, model): generation, model, rmse, f_complexity."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "model", "rmse", "f_complexity"])
        for g, keys in enumerate(result.log):
            for key in keys:
                s = result.scores[key]
                w.writerow([g, key, repr(s.rmse), repr(s.f_complexity)])


def read_run_log(path) -> tuple[list, dict]:
    log: list = []
    objectives = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            g = int(row["generation"])
            while len(log) <= g:
                log.append([])
            log[g].append(row["model"])
            objectives[row["model"]] = (float(row["rmse"]), float(row["f_complexity"]))
    return log, objectives


def _evolve_job(args):
    config, training = args
    return evolve(config, training)


def multi_run(configs, training, parallel: int = 1, on_result=None) -> ModelArchive:
    """Independent seeded runs merged into one archive.

    Runs share nothing; ``parallel > 1`` spreads them over processes without
    changing the result. ``on_result`` is called with each ``RunResult`` as
    it completes (in config order).
    """
    seeds = [c.rng_seed for c in configs]
    if len(set(seeds)) != len(seeds):
        raise ValueError("run seeds must be distinct")
    jobs = [(c, training) for c in configs]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = []
            for res in pool.map(_evolve_job, jobs):
                results.append(res)
                if on_result:
                    on_result(res)
    else:
        results = []
        for job in jobs:
            res = _evolve_job(job)
            results.append(res)
            if on_result:
                on_result(res)
    scores = {}
    for res in results:
        for key, s in res.scores.items():
            if key not in scores or s.rmse < scores[key].rmse:
                scores[key] = s
    return ModelArchive.from_logs({res.seed: res.log for res in results}, scores)


def seeded_configs(base: RunConfig, runs: int, seed_base: int = 1) -> list[RunConfig]:
    return [replace(base, rng_seed=seed_base + r) for r in range(runs)]
