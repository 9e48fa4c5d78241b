"""Operating-condition grids, training-set generation and persistence."""
from __future__ import annotations

import hashlib
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .device_model import DeviceParams, GateDriveCondition, read_config
from .errors import BhvLossError, FormatError, InfeasiblePoint, InvariantViolation, ParseError
from .inverter_loss import OperatingPoint, total_loss

GRID_KEYS = {
    "f_s_hz": "f_s_values",
    "v_in_v": "v_in_values",
    "d": "d_values",
    "r_t_ohm": "r_t_values",
    "v_dr_v": "v_dr_values",
    "r_g_ohm": "r_g_values",
}

COLUMNS = ["i", "j", "f_s_hz", "v_in_v", "d", "r_t_ohm", "v_dr_v", "r_g_ohm", "p_sw_w"]


@dataclass(frozen=True)
class GridSpec:
    f_s_values: tuple
    v_in_values: tuple
    d_values: tuple
    r_t_values: tuple
    v_dr_values: tuple
    r_g_values: tuple

    def __post_init__(self):
        for name in GRID_KEYS.values():
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise InvariantViolation(name, "must be non-empty")
            object.__setattr__(self, name, values)
        # reuse the point/condition validators on every listed value
        for f_s, v_in, d, r_t in itertools.product(
                self.f_s_values, self.v_in_values, self.d_values, self.r_t_values):
            OperatingPoint(f_s, v_in, d, r_t)
        for v_dr, r_g in itertools.product(self.v_dr_values, self.r_g_values):
            GateDriveCondition.symmetric(v_dr, r_g)

    @property
    def n(self) -> int:
        return (len(self.f_s_values) * len(self.v_in_values)
                * len(self.d_values) * len(self.r_t_values))

    @property
    def m(self) -> int:
        return len(self.v_dr_values) * len(self.r_g_values)

    def operating_points(self) -> list[OperatingPoint]:
        return [OperatingPoint(*v) for v in itertools.product(
            self.f_s_values, self.v_in_values, self.d_values, self.r_t_values)]

    def conditions(self) -> list[GateDriveCondition]:
        return [GateDriveCondition.symmetric(v_dr, r_g)
                for v_dr, r_g in itertools.product(self.v_dr_values, self.r_g_values)]

    def to_config(self) -> dict:
        return {key: list(getattr(self, name)) for key, name in GRID_KEYS.items()}


def load_grid_spec(source) -> GridSpec:
    doc = read_config(source)
    table = doc.get("grid", doc)
    unknown = sorted(k for k in table if k not in GRID_KEYS and not isinstance(table[k], dict))
    if unknown:
        raise ParseError(f"unknown grid keys: {', '.join(unknown)}")
    missing = [k for k in GRID_KEYS if k not in table]
    if missing:
        raise ParseError(f"missing grid keys: {', '.join(missing)}")
    return GridSpec(**{name: tuple(table[key]) for key, name in GRID_KEYS.items()})


def reference_grid() -> GridSpec:
    return load_grid_spec(Path(str(resources.files("bhvloss") / "data" / "reference_grid.toml")))


def expand_grid(g: GridSpec) -> list[tuple[OperatingPoint, GateDriveCondition]]:
    """Full Cartesian product, f_s outermost and r_g innermost."""
    return [(OperatingPoint(f_s, v_in, d, r_t), GateDriveCondition.symmetric(v_dr, r_g))
            for f_s, v_in, d, r_t, v_dr, r_g in itertools.product(
                g.f_s_values, g.v_in_values, g.d_values, g.r_t_values,
                g.v_dr_values, g.r_g_values)]


@dataclass(frozen=True)
class DataVector:
    op: OperatingPoint
    gd: GateDriveCondition
    y: float
    j: int
    i: int


@dataclass
class TrainingSet:
    """Rectangular n x m training data.

    ``x`` holds the n operating points as rows ``(f_s, v_in, d, r_t)``,
    ``conditions`` the m gate-drive rows ``(v_dr, r_g)``, and ``y[j, i]`` the
    switching loss of point i under condition j.
    """

    x: np.ndarray
    conditions: np.ndarray
    y: np.ndarray
    provenance: dict = field(default_factory=dict)
    sigma_y: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, 4)
        self.conditions = np.asarray(self.conditions, dtype=float).reshape(-1, 2)
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape != (self.m, self.n):
            raise FormatError(f"y has shape {self.y.shape}, expected {(self.m, self.n)}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.conditions.shape[0]

    def variables(self) -> dict:
        """Column arrays keyed by expression variable name."""
        return {"fs": self.x[:, 0], "vin": self.x[:, 1], "d": self.x[:, 2], "rt": self.x[:, 3]}

    def vectors(self):
        for j, (v_dr, r_g) in enumerate(self.conditions):
            gd = GateDriveCondition.symmetric(v_dr, r_g)
            for i, row in enumerate(self.x):
                yield DataVector(OperatingPoint(*row), gd, float(self.y[j, i]), j, i)

    def subset(self, conditions) -> "TrainingSet":
        idx = list(conditions)
        return TrainingSet(self.x.copy(), self.conditions[idx], self.y[idx],
                           dict(self.provenance),
                           None if self.sigma_y is None else self.sigma_y[idx])

    def __eq__(self, other):
        if not isinstance(other, TrainingSet):
            return NotImplemented
        same_sigma = (self.sigma_y is None and other.sigma_y is None) or (
            self.sigma_y is not None and other.sigma_y is not None
            and np.array_equal(self.sigma_y, other.sigma_y))
        return (np.array_equal(self.x, other.x)
                and np.array_equal(self.conditions, other.conditions)
                and np.array_equal(self.y, other.y)
                and self.provenance == other.provenance and same_sigma)


def _simulate(args):
    i, j, op, gd, p = args
    try:
        return i, j, total_loss(op, gd, p).p_sw, None
    except BhvLossError as exc:
        return i, j, None, exc


def generate_training_set(g: GridSpec, p: DeviceParams, parallel: int = 1) -> TrainingSet:
    """Simulate switching loss (conduction excluded) on every grid cell.

    Any infeasible cell aborts generation with ``InfeasiblePoint`` listing all
    failing cells; a ragged training set is never returned.
    """
    ops, conds = g.operating_points(), g.conditions()
    jobs = [(i, j, op, gd, p) for j, gd in enumerate(conds) for i, op in enumerate(ops)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_simulate, jobs, chunksize=64))
    else:
        results = [_simulate(job) for job in jobs]
    y = np.empty((len(conds), len(ops)))
    failures = []
    for i, j, value, exc in results:
        if exc is not None:
            failures.append((i, j, exc))
        else:
            y[j, i] = value
    if failures:
        raise InfeasiblePoint(failures)
    x = np.array([[op.f_s, op.v_in, op.d, op.r_t] for op in ops])
    c = np.array([[gd.v_dr, gd.r_g_on] for gd in conds])
    provenance = {"device_sha256": p.sha256(), "grid": g.to_config()}
    return TrainingSet(x, c, y, provenance)


def _fmt(v: float) -> str:
    return "%.17g" % v


def save_training_set(ts: TrainingSet, path) -> None:
    """Write one CSV row per data vector, grouped by condition.

    Header comment lines carry ``n``, ``m`` and the provenance record as JSON.
    """
    cols = COLUMNS + (["sigma_y"] if ts.sigma_y is not None else [])
    buf = io.StringIO()
    buf.write(f"# n={ts.n} m={ts.m}\n")
    buf.write("# provenance=" + json.dumps(ts.provenance, sort_keys=True) + "\n")
    buf.write(",".join(cols) + "\n")
    for j in range(ts.m):
        for i in range(ts.n):
            row = [str(i), str(j)] + [_fmt(v) for v in ts.x[i]]
            row += [_fmt(v) for v in ts.conditions[j]] + [_fmt(ts.y[j, i])]
            if ts.sigma_y is not None:
                row.append(_fmt(ts.sigma_y[j, i]))
            buf.write(",".join(row) + "\n")
    Path(path).write_text(buf.getvalue())


def load_training_set(path) -> TrainingSet:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or not lines[0].startswith("# n="):
        raise FormatError("missing size header")
    try:
        parts = dict(tok.split("=") for tok in lines[0][2:].split())
        n, m = int(parts["n"]), int(parts["m"])
        provenance = json.loads(lines[1].split("=", 1)[1]) if lines[1].startswith(
            "# provenance=") else {}
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad header: {exc}") from exc
    header = lines[2].split(",")
    if header[:len(COLUMNS)] != COLUMNS or header[len(COLUMNS):] not in ([], ["sigma_y"]):
        raise FormatError(f"unexpected columns {header}")
    has_sigma = len(header) > len(COLUMNS)
    rows = lines[3:]
    if len(rows) != n * m:
        raise FormatError(f"expected {n * m} rows, found {len(rows)}")

    x = np.full((n, 4), np.nan)
    c = np.full((m, 2), np.nan)
    y = np.full((m, n), np.nan)
    sigma = np.full((m, n), np.nan) if has_sigma else None
    seen = set()
    for lineno, line in enumerate(rows, start=4):
        fields = line.split(",")
        if len(fields) != len(header):
            raise FormatError(f"line {lineno}: expected {len(header)} fields")
        try:
            i, j = int(fields[0]), int(fields[1])
            vals = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
        if not (0 <= i < n and 0 <= j < m):
            raise FormatError(f"line {lineno}: index ({i}, {j}) out of range")
        if (i, j) in seen:
            raise FormatError(f"line {lineno}: duplicated cell ({i}, {j})")
        seen.add((i, j))
        for arr, val, what in ((x[i], vals[0:4], "operating point"),
                               (c[j], vals[4:6], "gate-drive condition")):
            if np.isnan(arr).all():
                arr[:] = val
            elif not np.array_equal(arr, val):
                raise FormatError(f"line {lineno}: inconsistent {what} for index")
        y[j, i] = vals[6]
        if has_sigma:
            sigma[j, i] = vals[7]
    return TrainingSet(x, c, y, provenance, sigma)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
