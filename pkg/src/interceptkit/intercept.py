"""Reachability analysis and earliest-intercept-time solving.

The observer's reachable set at time t is a disk of radius v_max*t for
holonomic platforms; for coupled (Dubins-like) platforms the radius is
discounted by cos(alpha/2), where alpha is the heading deviation needed to
point at the target. The intercept time is the smallest t in [0, t_max]
where the predicted target position enters the reachable set, found by a
forward grid scan (guaranteeing the SMALLEST crossing even when the
condition has several sign changes) refined by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import predictor
from .geometry import PlatformClass, PlatformLimits
from .predictor import PolyTraj

DEFAULT_T_MAX = 5.0
DEFAULT_DELTA = 1e-3
DEFAULT_SCAN_DT = 0.05


@dataclass(frozen=True)
class ReachabilityModel:
    cls: PlatformClass
    limits: PlatformLimits


@dataclass(frozen=True)
class InterceptSolution:
    """Earliest feasible intercept time and point; feasible=False means the
    t_max fallback fired and interception is attempted at the horizon."""

    t_star: float
    point: tuple
    feasible: bool


def effective_radius(model: ReachabilityModel, t: float, alpha: float) -> float:
    if not 0.0 <= alpha <= math.pi:
        raise ValueError(f"alpha={alpha} outside [0, pi]")
    if model.cls.coupled:
        return model.limits.v_max * t * math.cos(0.5 * alpha)
    return model.limits.v_max * t


def bearing_deviation(traj: PolyTraj, t: float) -> float:
    """|atan2(y(t), x(t))| in [0, pi]; zero if the target sits at the
    origin (already reached, deviation undefined)."""
    x, y = predictor.eval_xy(traj, t)
    if x == 0.0 and y == 0.0:
        return 0.0
    return min(abs(math.atan2(float(y), float(x))), math.pi)


def _gap(traj: PolyTraj, model: ReachabilityModel, t: float) -> float:
    """F(t) = x^2 + y^2 - r_eff^2; interception condition is F(t) < delta."""
    x, y = predictor.eval_xy(traj, t)
    r = effective_radius(model, t, bearing_deviation(traj, t))
    return float(x * x + y * y) - r * r


def solve_intercept(
    traj: PolyTraj,
    model: ReachabilityModel,
    t_max: float = DEFAULT_T_MAX,
    delta: float = DEFAULT_DELTA,
    scan_dt: float = DEFAULT_SCAN_DT,
) -> InterceptSolution:
    if scan_dt <= 0.0 or delta <= 0.0:
        raise ValueError("scan_dt and delta must be positive")
    if t_max > traj.t_max + 1e-12:
        raise ValueError(f"t_max={t_max} exceeds trajectory horizon {traj.t_max}")
    if t_max < scan_dt:
        raise ValueError(f"empty scan: t_max={t_max} < scan_dt={scan_dt}")

    n = int(math.floor(t_max / scan_dt + 1e-9))
    grid = [k * scan_dt for k in range(n + 1)]
    if grid[-1] < t_max - 1e-12:
        grid.append(t_max)

    hit = None
    prev_t = 0.0
    for tg in grid:
        if _gap(traj, model, tg) < delta:
            hit = (prev_t, tg)
            break
        prev_t = tg

    if hit is None:
        x, y = predictor.eval_xy(traj, t_max)
        return InterceptSolution(t_max, (float(x), float(y)), False)

    lo, hi = hit
    if hi > 0.0 and lo < hi:
        # F(lo) >= delta > F(hi); bisect to |interval| < scan_dt / 100
        while hi - lo > scan_dt / 100.0:
            mid = 0.5 * (lo + hi)
            if _gap(traj, model, mid) < delta:
                hi = mid
            else:
                lo = mid
    t_star = hi
    x, y = predictor.eval_xy(traj, t_star)
    return InterceptSolution(t_star, (float(x), float(y)), True)
