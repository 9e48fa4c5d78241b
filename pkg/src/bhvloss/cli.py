"""Command-line pipeline: gen-data, run-gp, select, fit-surface, validate, report.

Artifacts default to fixed names inside ``--out``. A ``manifest.json`` there
records, per stage, the content hashes of inputs and outputs; a stage refuses
to consume a file whose hash (or whose upstream inputs) changed since it was
produced.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .dataset import file_sha256, generate_training_set, load_grid_spec, load_training_set, \
    save_training_set, reference_grid
from .device_model import load_device_params, read_config, reference_device
from .errors import (
    DegenerateParameter, EvalDomain, FitError, FormatError, InfeasiblePoint, InvariantViolation,
    ParseError, RankDeficient, StaleArtifact, ThermalNonConvergence, ZeroReference,
)
from .expression import parse, reference_model, serialize, canonicalize
from .fitting import REFERENCE_SURFACE, CoefficientSurface, error_stats, fit_all, \
    fit_coefficient_surface, percent_errors, predict
from .gp_engine import ModelArchive, RunConfig, multi_run, seeded_configs, write_run_log
from .pareto import filter_candidates

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_NUMERIC = 5
EXIT_MISSING = 6
EXIT_STALE = 7

TRAINING = "training.csv"
ARCHIVE = "archive.json"
RUNS_DIR = "runs"
CANDIDATES = "candidates.csv"
SURFACE = "surface.json"
ERRORS = "validation_errors.csv"
MANIFEST = "manifest.json"


class Manifest:
    def __init__(self, out: Path):
        self.path = out / MANIFEST
        self.stages = {}
        if self.path.exists():
            self.stages = json.loads(self.path.read_text()).get("stages", {})

    def _producer(self, path: str):
        for name, stage in self.stages.items():
            if path in stage["outputs"]:
                return name, stage
        return None, None

    def check(self, inputs, _seen=None):
        """Raise ``StaleArtifact`` if any input or its upstream changed."""
        _seen = set() if _seen is None else _seen
        for p in inputs:
            key = str(Path(p).resolve())
            if key in _seen:
                continue
            _seen.add(key)
            name, stage = self._producer(key)
            if stage is None:
                continue
            if not Path(key).exists():
                raise FileNotFoundError(key)
            if file_sha256(key) != stage["outputs"][key]:
                raise StaleArtifact(f"{p} changed since stage {name!r} produced it")
            for up, digest in stage["inputs"].items():
                if Path(up).exists() and file_sha256(up) != digest:
                    raise StaleArtifact(f"{p} is stale: upstream {up} changed after {name!r}")
            self.check(stage["inputs"], _seen)

    def record(self, stage: str, inputs, outputs):
        def digest(paths):
            return {str(Path(p).resolve()): file_sha256(p) for p in paths if Path(p).is_file()}
        self.stages[stage] = {"inputs": digest(inputs), "outputs": digest(outputs)}
        self.path.write_text(json.dumps({"stages": self.stages}, indent=1, sort_keys=True) + "\n")


def _config(args) -> dict:
    return read_config(args.config) if args.config else {}


def _device(args, cfg):
    if getattr(args, "device", None):
        return load_device_params(args.device)
    if "device" in cfg:
        return load_device_params(cfg)
    return reference_device()


def _grid(args, cfg):
    if getattr(args, "grid", None):
        return load_grid_spec(args.grid)
    if "grid" in cfg:
        return load_grid_spec(cfg)
    return reference_grid()


def _path(value, out, default):
    return Path(value) if value else out / default


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    cfg = _config(args)
    dest = _path(args.output, out, TRAINING)
    device, grid = _device(args, cfg), _grid(args, cfg)
    ts = generate_training_set(grid, device, parallel=args.parallel)
    dest.parent.mkdir(parents=True, exist_ok=True)
    save_training_set(ts, dest)
    inputs = [p for p in (args.config, getattr(args, "device", None), getattr(args, "grid", None)) if p]
    Manifest(out).record("gen-data", inputs, [dest])
    print(f"{ts.n * ts.m} vectors (n={ts.n}, m={ts.m}) -> {dest}")
    return EXIT_OK


def _run_config(args, cfg) -> RunConfig:
    doc = dict(cfg.get("gp", {}))
    if args.gp_config:
        doc.update(read_config(args.gp_config).get("gp", {}))
    for name in ("population_size", "generations"):
        if getattr(args, name) is not None:
            doc[name] = getattr(args, name)
    return RunConfig.from_dict(doc)


def cmd_run_gp(args) -> int:
    out = Path(args.out)
    src = _path(args.training, out, TRAINING)
    manifest = Manifest(out)
    manifest.check([src])
    training = load_training_set(src)
    if args.conditions:
        training = training.subset(int(c) for c in args.conditions.split(","))
    base = _run_config(args, _config(args))
    configs = seeded_configs(base, args.runs, args.seed_base)
    runs_dir = out / RUNS_DIR
    runs_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def keep(result):
        path = runs_dir / f"run_{result.seed:04d}.csv"
        write_run_log(result, path)
        written.append(path)
        print(f"run seed={result.seed}: {len(result.scores)} distinct models")

    archive = multi_run(configs, training, parallel=args.parallel, on_result=keep)
    dest = out / ARCHIVE
    archive.save(dest)
    manifest.record("run-gp", [src] + ([args.gp_config] if args.gp_config else []),
                    [dest] + written)
    print(f"{len(archive.entries)} distinct models over {archive.n_runs} runs -> {dest}")
    print("N_run histogram [1,2) [2,5) [5,10) [10,20) [20,51):", archive.histogram())
    return EXIT_OK


CANDIDATE_COLUMNS = ["model", "n_run", "n_gen", "mu_err", "sigma_err", "err_max", "rmse",
                     "f_complexity"]


def cmd_select(args) -> int:
    out = Path(args.out)
    src = _path(args.archive, out, ARCHIVE)
    manifest = Manifest(out)
    manifest.check([src])
    archive = ModelArchive.load(src)
    chosen = filter_candidates(archive.sorted_entries(), args.min_nrun, args.max_errmax)
    chosen.sort(key=lambda e: (e.f_complexity, e.rmse, e.key))
    dest = out / CANDIDATES
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CANDIDATE_COLUMNS)
        for e in chosen:
            w.writerow([e.key, e.n_run, repr(e.n_gen), repr(e.mu_err), repr(e.sigma_err),
                        repr(e.err_max), repr(e.rmse), repr(e.f_complexity)])
    manifest.record("select", [src], [dest])
    if not chosen:
        print(f"notice: no model passes N_run >= {args.min_nrun} and "
              f"err_max <= {args.max_errmax}%")
        return EXIT_OK
    print(f"{len(chosen)} candidate(s) -> {dest}")
    for k, e in enumerate(chosen, 1):
        print(f"#{k} N_run={e.n_run} N_gen={e.n_gen:.1f} mu={e.mu_err:.2f}% "
              f"sigma={e.sigma_err:.2f}% err_max={e.err_max:.2f}%  {e.key}")
    return EXIT_OK


def read_candidates(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in CANDIDATE_COLUMNS[1:]:
            row[k] = int(row[k]) if k == "n_run" else float(row[k])
    return rows


def _which(spec: str | None, n_coef: int) -> dict:
    """Parse ``"0:zero,2"`` into ``{0: True, 2: False}``."""
    if not spec:
        return {k: False for k in range(n_coef)}
    which = {}
    for part in spec.split(","):
        name, _, flag = part.strip().partition(":")
        which[int(name.lstrip("p"))] = flag == "zero"
    return which


def cmd_fit_surface(args) -> int:
    out = Path(args.out)
    src = _path(args.training, out, TRAINING)
    manifest = Manifest(out)
    manifest.check([src])
    training = load_training_set(src)
    if args.reference_eq15:
        expr = reference_model()
        which = _which(args.surface, 3) if args.surface else dict(REFERENCE_SURFACE)
    elif args.model:
        expr = canonicalize(parse(args.model))[0]
        which = _which(args.surface, expr.n_coefficients)
    else:
        raise ParseError("give --model or --reference-eq15")
    fits = fit_all(expr, training)
    surface = fit_coefficient_surface(fits, training.conditions, which, serialize(expr))
    dest = out / SURFACE
    surface.save(dest)
    manifest.record("fit-surface", [src], [dest])
    direct = percent_errors(expr, fits, training)
    print(f"model {serialize(expr)}")
    print(f"per-condition fit: mu={direct.mu_err:.3f}% sigma={direct.sigma_err:.3f}% "
          f"err_max={direct.err_max:.3f}%")
    for k, sc in sorted(surface.surfaced.items()):
        for x in range(3):
            b = sc.b[x]
            print(f"p{k} a{x}: b0={b[0]:.3e} b1={b[1]:.3e} b2={b[2]:.3e}")
    for k, v in sorted(surface.fixed.items()):
        print(f"p{k} fixed at {v:.6g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    out = Path(args.out)
    src = _path(args.training, out, TRAINING)
    surf_path = _path(args.surface_file, out, SURFACE)
    manifest = Manifest(out)
    manifest.check([src, surf_path])
    training = load_training_set(src)
    surface = CoefficientSurface.load(surf_path)
    expr = parse(surface.model)
    if args.direct:
        pred = predict(expr, [f.coeffs for f in fit_all(expr, training)], training)
    else:
        pred = surface.predict(training)
    stats = error_stats(pred, training.y)
    dest = out / ERRORS
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "y_w", "model_w", "err_pct"])
        for j in range(training.m):
            for i in range(training.n):
                w.writerow([i, j, repr(float(training.y[j, i])), repr(float(pred[j, i])),
                            repr(float(stats.errors[j, i]))])
    report.error_histogram(stats.errors, out / "error_histogram.svg", out / "error_histogram.csv")
    manifest.record("validate", [src, surf_path],
                    [dest, out / "error_histogram.svg", out / "error_histogram.csv"])
    which = "per-condition fit" if args.direct else "surfaced model"
    print(f"{which}: mu_err={stats.mu_err:.3f}% sigma_err={stats.sigma_err:.3f}% "
          f"err_max={stats.err_max:.3f}%")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    needed = {"candidates": out / CANDIDATES, "surface": out / SURFACE, "errors": out / ERRORS}
    missing = [f"{k} ({p})" for k, p in needed.items() if not p.exists()]
    if missing:
        raise FileNotFoundError("missing artifacts: " + ", ".join(missing))
    manifest = Manifest(out)
    manifest.check(needed.values())
    candidates = read_candidates(needed["candidates"])
    surface = CoefficientSurface.load(needed["surface"])
    with open(needed["errors"], newline="") as fh:
        errors = np.array([float(r["err_pct"]) for r in csv.DictReader(fh)])
    report.pareto_figure(candidates, out / "pareto_front.svg", out / "pareto_front.csv")
    report.coefficient_figure(surface, out / "coefficient_trends.svg",
                              out / "coefficient_trends.csv")
    mu, sigma = report.error_histogram(errors, out / "error_histogram.svg", out / "error_histogram.csv")
    lines = [
        f"candidates: {len(candidates)}",
        *(f"  #{k} N_run={c['n_run']} N_gen={c['n_gen']:.1f} mu={c['mu_err']:.2f}% "
          f"sigma={c['sigma_err']:.2f}% err_max={c['err_max']:.2f}% {c['model']}"
          for k, c in enumerate(candidates, 1)),
        f"surfaced model: {surface.model}",
        f"validation: mu_err={mu:.3f}% sigma_err={sigma:.3f}% "
        f"err_max={float(np.max(np.abs(errors))):.3f}%",
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    figures = [out / f"{n}.{ext}" for n in ("pareto_front", "coefficient_trends", "error_histogram")
               for ext in ("svg", "csv")]
    manifest.record("report", list(needed.values()), figures + [out / "summary.txt"])
    return EXIT_OK


GLOBAL_DEFAULTS = {"config": None, "out": ".", "parallel": 1, "seed_base": 1}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="TOML document with optional [device], [grid], [gp] tables")
    common.add_argument("--out", default=argparse.SUPPRESS, help="artifact directory")
    common.add_argument("--parallel", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed-base", type=int, default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="bhvloss", parents=[common],
                                     description="Behavioral switching-loss modeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate the training set")
    p.add_argument("--device", help="device parameter TOML")
    p.add_argument("--grid", help="grid spec TOML")
    p.add_argument("-o", "--output", help=f"training file (default OUT/{TRAINING})")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run-gp", parents=[common], help="multi-run GP discovery")
    p.add_argument("--training")
    p.add_argument("--gp-config", help="TOML with a [gp] table of RunConfig fields")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--population-size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--conditions", help="comma-separated gate-drive condition indices")
    p.set_defaults(func=cmd_run_gp)

    p = sub.add_parser("select", parents=[common], help="filter repeatable Pareto models")
    p.add_argument("--archive")
    p.add_argument("--min-nrun", type=int, default=6)
    p.add_argument("--max-errmax", type=float, default=80.0)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit-surface", parents=[common], help="fit coefficient surfaces")
    p.add_argument("--training")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="model in prefix notation")
    g.add_argument("--reference-eq15", "--reference", dest="reference_eq15", action="store_true",
                   help="use p0*fs*vin^2*D(1-p1*D)/R_T + p2*fs*vin")
    p.add_argument("--surface", help='surfaced coefficients, e.g. "0:zero,2"')
    p.set_defaults(func=cmd_fit_surface)

    p = sub.add_parser("validate", parents=[common], help="percent errors of the surfaced model")
    p.add_argument("--training")
    p.add_argument("--surface-file")
    p.add_argument("--direct", action="store_true",
                   help="validate the per-condition fit instead of the surface")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", parents=[common], help="figures and summary")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args)
    except InfeasiblePoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        for i, j, cause in exc.failures[:20]:
            print(f"  i={i} j={j}: {type(cause).__name__}: {cause}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except StaleArtifact as exc:
        print(f"error: stale artifact: {exc}", file=sys.stderr)
        return EXIT_STALE
    except FileNotFoundError as exc:
        print(f"error: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ParseError, FormatError, InvariantViolation, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FitError, RankDeficient, EvalDomain, ThermalNonConvergence, DegenerateParameter,
            ZeroReference) as exc:
        print(f"error: numeric: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
