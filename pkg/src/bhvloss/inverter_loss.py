"""Analytical loss model of the phase-shifted full-bridge inverter module.

First-harmonic treatment with perfect resonant matching: the load is the real
resistance ``r_t``, output voltage and current are in phase and the two
transition angles are equal. The overlap term carries no per-leg multiplier,
unlike the conduction, diode and gate terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .device_model import DeviceParams, GateDriveCondition, gfs_at, rds_at, vgsth_at
from .errors import InsufficientGateDrive, InvariantViolation, ThermalNonConvergence

THERMAL_TOL = 1e-4
MAX_THERMAL_ITERATIONS = 1000


@dataclass(frozen=True)
class OperatingPoint:
    f_s: float
    v_in: float
    d: float
    r_t: float

    def __post_init__(self):
        if not self.f_s > 0:
            raise InvariantViolation("f_s", f"must be > 0, got {self.f_s!r}")
        if not self.v_in > 0:
            raise InvariantViolation("v_in", f"must be > 0, got {self.v_in!r}")
        if not 0 < self.d <= 1:
            raise InvariantViolation("d", f"must lie in (0, 1], got {self.d!r}")
        if not self.r_t > 0:
            raise InvariantViolation("r_t", f"must be > 0, got {self.r_t!r}")


@dataclass(frozen=True)
class TransitionState:
    v1: float
    i1: float
    alpha: float
    beta: float
    i1_alpha: float
    i1_beta: float
    i1_rms: float


@dataclass(frozen=True)
class LossBreakdown:
    p_cond: float
    p_bd: float
    p_gt: float
    p_ov: float
    p_sw: float
    p_tot: float
    t_final: float
    iterations: int


def fundamental_voltage(v_in: float, d: float) -> float:
    return 4.0 / math.pi * v_in * math.sin(math.pi * d / 2.0)


def transition_angles(d: float) -> tuple[float, float]:
    """Equal current/voltage transition angles for duty-cycle ``d`` (phi = 0)."""
    a = math.pi * (1.0 - d) / 2.0
    return a, a


def transition_state(op: OperatingPoint) -> TransitionState:
    v1 = fundamental_voltage(op.v_in, op.d)
    i1 = v1 / op.r_t
    alpha, beta = transition_angles(op.d)
    return TransitionState(
        v1=v1,
        i1=i1,
        alpha=alpha,
        beta=beta,
        i1_alpha=i1 * math.sin(alpha),
        i1_beta=i1 * math.sin(beta),
        i1_rms=i1 / math.sqrt(2.0),
    )


def conduction_loss(rds_t: float, i1_rms: float) -> float:
    return 2.0 * rds_t * i1_rms ** 2


def body_diode_loss(f_s, t_dt, v_sd, i1, alpha, beta) -> float:
    return 2.0 * f_s * t_dt * v_sd * i1 * (math.sin(alpha) + math.sin(beta))


def gate_loss(f_s: float, v_dr: float, q_g: float) -> float:
    return 4.0 * f_s * v_dr * q_g


def switching_times(p: DeviceParams, gd: GateDriveCondition, t: float,
                    i1_alpha: float, i1_beta: float) -> tuple[float, float]:
    """Turn-on and turn-off times at temperature ``t``.

    Raises ``InsufficientGateDrive`` when ``v_dr`` does not exceed the
    plateau voltage ``vgsth + i1_alpha / gfs``.
    """
    vth = vgsth_at(p, t)
    gfs = gfs_at(p, t)
    den_on = gd.v_dr - vth - i1_alpha / gfs
    if den_on <= 0:
        raise InsufficientGateDrive(
            f"v_dr={gd.v_dr} V cannot sustain plateau {vth + i1_alpha / gfs:.4g} V"
        )
    den_off = vth + i1_beta / gfs
    if den_off <= 0:
        raise InsufficientGateDrive(f"turn-off plateau {den_off:.4g} V <= 0")
    return p.q_gsw * gd.r_g_on / den_on, p.q_gsw * gd.r_g_off / den_off


def overlap_loss(f_s, v_in, i1_alpha, t_on, i1_beta, t_off, c_oss) -> float:
    return f_s * v_in * (i1_alpha * t_on + i1_beta * t_off + c_oss * v_in)


def losses_at(op: OperatingPoint, gd: GateDriveCondition, p: DeviceParams,
              t: float, ts: TransitionState | None = None):
    """Loss terms ``(p_cond, p_bd, p_gt, p_ov)`` at a fixed module temperature."""
    ts = ts or transition_state(op)
    p_cond = conduction_loss(rds_at(p, t), ts.i1_rms)
    p_bd = body_diode_loss(op.f_s, p.t_dt, p.v_sd, ts.i1, ts.alpha, ts.beta)
    p_gt = gate_loss(op.f_s, gd.v_dr, p.q_g)
    t_on, t_off = switching_times(p, gd, t, ts.i1_alpha, ts.i1_beta)
    p_ov = overlap_loss(op.f_s, op.v_in, ts.i1_alpha, t_on, ts.i1_beta, t_off, p.c_oss)
    return p_cond, p_bd, p_gt, p_ov


def total_loss(op: OperatingPoint, gd: GateDriveCondition, p: DeviceParams,
               tol: float = THERMAL_TOL,
               max_iterations: int = MAX_THERMAL_ITERATIONS) -> LossBreakdown:
    """Losses at the self-consistent module temperature.

    Plain fixed-point iteration of ``T -> t_a + r_th * P_tot(T)`` starting
    from ambient; stops once the normalized temperature change drops below
    ``tol``. All losses are then evaluated at the final temperature.
    """
    ts = transition_state(op)
    t = p.t_a
    for it in range(1, max_iterations + 1):
        p_tot = sum(losses_at(op, gd, p, t, ts))
        t_new = p.t_a + p.r_th * p_tot
        step = abs(t_new - t)
        ref = abs(t) if t != 0 else abs(t_new)
        t = t_new
        if step == 0 or step / ref < tol:
            break
    else:
        raise ThermalNonConvergence(
            f"no thermal fixed point after {max_iterations} iterations (last T={t:.6g} degC)"
        )
    p_cond, p_bd, p_gt, p_ov = losses_at(op, gd, p, t, ts)
    p_sw = p_bd + p_gt + p_ov
    return LossBreakdown(
        p_cond=p_cond, p_bd=p_bd, p_gt=p_gt, p_ov=p_ov, p_sw=p_sw,
        p_tot=p_cond + p_sw, t_final=t, iterations=it,
    )
