"""Device parameters of the SiC MOSFET module and their temperature laws.

All four switches share one temperature, so a single set of thermal
coefficients applies module-wide.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DegenerateParameter, InvariantViolation, ParseError

# config key -> DeviceParams field
DEVICE_KEYS = {
    "rds_25_ohm": "rds_25",
    "vgsth_25_v": "vgsth_25",
    "gfs_25_s": "gfs_25",
    "q_g_coulomb": "q_g",
    "q_gsw_coulomb": "q_gsw",
    "c_oss_farad": "c_oss",
    "v_sd_v": "v_sd",
    "t_dt_s": "t_dt",
    "rho_t_per_degc": "rho_t",
    "nu_t_per_degc": "nu_t",
    "gamma_t_per_degc": "gamma_t",
    "r_th_degc_per_w": "r_th",
    "t_a_degc": "t_a",
}


@dataclass(frozen=True)
class DeviceParams:
    rds_25: float
    vgsth_25: float
    gfs_25: float
    q_g: float
    q_gsw: float
    c_oss: float
    v_sd: float
    t_dt: float
    rho_t: float = 0.0
    nu_t: float = 0.0
    gamma_t: float = 0.0
    r_th: float = 1.0
    t_a: float = 25.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        checks = [
            ("rds_25", self.rds_25 > 0, "must be > 0"),
            ("gfs_25", self.gfs_25 > 0, "must be > 0"),
            ("q_gsw", self.q_gsw > 0, "must be > 0"),
            ("q_g", self.q_g >= self.q_gsw, "must be >= q_gsw"),
            ("c_oss", self.c_oss >= 0, "must be >= 0"),
            ("t_dt", self.t_dt >= 0, "must be >= 0"),
            # r_th = 0 is accepted: it switches self-heating off
            ("r_th", self.r_th >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise InvariantViolation(name, f"{msg}, got {getattr(self, name)!r}")

    def with_(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)

    def to_config(self) -> dict:
        return {key: getattr(self, field) for key, field in DEVICE_KEYS.items()}

    def sha256(self) -> str:
        """Content hash over the canonical JSON encoding of the parameters."""
        blob = json.dumps(self.to_config(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class GateDriveCondition:
    v_dr: float
    r_g_on: float
    r_g_off: float

    def __post_init__(self):
        for name in ("v_dr", "r_g_on", "r_g_off"):
            if not getattr(self, name) > 0:
                raise InvariantViolation(name, f"must be > 0, got {getattr(self, name)!r}")

    @classmethod
    def symmetric(cls, v_dr: float, r_g: float) -> "GateDriveCondition":
        """Single gate resistance used for both turn-on and turn-off."""
        return cls(float(v_dr), float(r_g), float(r_g))


def _affine(value_25, coeff, t, t_a):
    return value_25 * (1.0 + coeff * (t - t_a))


def rds_at(p: DeviceParams, t: float) -> float:
    r = _affine(p.rds_25, p.rho_t, t, p.t_a)
    if r <= 0:
        raise DegenerateParameter(f"R_DS({t} degC) = {r} <= 0")
    return r


def vgsth_at(p: DeviceParams, t: float) -> float:
    v = _affine(p.vgsth_25, p.nu_t, t, p.t_a)
    if v <= 0:
        raise DegenerateParameter(f"V_GS,th({t} degC) = {v} <= 0")
    return v


def gfs_at(p: DeviceParams, t: float) -> float:
    g = _affine(p.gfs_25, p.gamma_t, t, p.t_a)
    if g <= 0:
        raise DegenerateParameter(f"g_fs({t} degC) = {g} <= 0")
    return g


def read_config(source) -> dict:
    """Parse a TOML document from a path, a TOML string or an already-loaded dict."""
    if isinstance(source, dict):
        return source
    try:
        if isinstance(source, Path) or (isinstance(source, str) and os.path.exists(source)):
            with open(source, "rb") as fh:
                return tomllib.load(fh)
        return tomllib.loads(source)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}") from exc


def load_device_params(source) -> DeviceParams:
    """Build validated ``DeviceParams`` from a device config document.

    ``source`` may be a path, TOML text, or a parsed mapping. The parameters
    live at top level or under a ``[device]`` table. Unknown keys raise
    ``ParseError``, missing keys raise ``ParseError``, sign violations raise
    ``InvariantViolation``.
    """
    doc = read_config(source)
    table = doc.get("device", doc)
    unknown = sorted(k for k in table if k not in DEVICE_KEYS and not isinstance(table[k], dict))
    if unknown:
        raise ParseError(f"unknown device keys: {', '.join(unknown)}")
    missing = [k for k in DEVICE_KEYS if k not in table]
    if missing:
        raise ParseError(f"missing device keys: {', '.join(missing)}")
    kwargs = {}
    for key, field in DEVICE_KEYS.items():
        value = table[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"{key} must be a number, got {value!r}")
        kwargs[field] = value
    return DeviceParams(**kwargs)


def reference_config_path() -> Path:
    return Path(str(resources.files("bhvloss") / "data" / "reference_device.toml"))


def reference_device() -> DeviceParams:
    return load_device_params(reference_config_path())
