"""Decoupled polynomial planner for holonomic platforms.

Translation uses a single degree-7 segment per axis pinned by position,
velocity, acceleration, and jerk at both endpoints; with all eight boundary
conditions fixed this is the unique minimizer of integrated squared snap.
Yaw uses the analogous cubic (minimum integrated squared angular
acceleration) with the endpoint taken along the shortest wrapped direction.

Segments are solved on the normalized interval [0, 1] and rescaled, which
keeps the boundary system well-conditioned at long durations. The 2D
(spacecraft-like) case simply omits the z axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose3, Twist, wrap_angle

T_FLOOR = 1e-3

# Boundary matrix for a degree-7 polynomial on [0, 1]:
# rows are p, p', p'', p''' at tau=0 then tau=1; columns are ascending powers.
_M8 = np.zeros((8, 8))
for _d in range(4):
    _M8[_d, _d] = math.factorial(_d)
    for _k in range(_d, 8):
        _M8[4 + _d, _k] = math.factorial(_k) / math.factorial(_k - _d)
_M8_INV = np.linalg.inv(_M8)

_M4 = np.zeros((4, 4))
for _d in range(2):
    _M4[_d, _d] = math.factorial(_d)
    for _k in range(_d, 4):
        _M4[2 + _d, _k] = math.factorial(_k) / math.factorial(_k - _d)
_M4_INV = np.linalg.inv(_M4)


@dataclass(frozen=True)
class AxisState:
    """One translational axis: position and its first three derivatives."""

    p: float = 0.0
    v: float = 0.0
    a: float = 0.0
    j: float = 0.0


@dataclass(frozen=True)
class BoundaryState:
    x: AxisState = AxisState()
    y: AxisState = AxisState()
    z: AxisState = AxisState()
    psi: float = 0.0
    psi_dot: float = 0.0

    def __post_init__(self):
        vals = []
        for ax in (self.x, self.y, self.z):
            vals += [ax.p, ax.v, ax.a, ax.j]
        vals += [self.psi, self.psi_dot]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("boundary state must be finite")
        object.__setattr__(self, "psi", wrap_angle(self.psi))


@dataclass(frozen=True)
class PolySegment:
    """Per-axis degree-7 coefficients plus a yaw cubic, ascending order,
    in unscaled time (evaluate directly at t in [0, T])."""

    coeffs: tuple  # tuple of ndarray(8,), one per translational axis
    yaw_coeffs: np.ndarray  # ndarray(4,)
    duration: float
    dims: int


def _solve_axis(start: AxisState, end: AxisState, T: float) -> np.ndarray:
    # normalized boundary values: d^k/dtau^k = T^k * d^k/dt^k
    b = np.array([
        start.p, start.v * T, start.a * T * T, start.j * T ** 3,
        end.p, end.v * T, end.a * T * T, end.j * T ** 3,
    ])
    q = _M8_INV @ b
    scale = T ** -np.arange(8, dtype=float)
    return q * scale


def min_snap_segment(start: BoundaryState, end: BoundaryState, T: float,
                     dims: int = 3) -> PolySegment:
    """Unique degree-7 polynomial per axis matching the 8 endpoint
    conditions; dims=2 drops the z axis entirely."""
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    if T <= 0.0:
        raise ValueError("segment duration must be positive")
    if T < T_FLOOR:
        raise ValueError(f"segment duration {T} below conditioning floor {T_FLOOR}")
    axes = [(start.x, end.x), (start.y, end.y)]
    if dims == 3:
        axes.append((start.z, end.z))
    coeffs = tuple(_solve_axis(a, b, T) for a, b in axes)
    yaw = min_accel_yaw(start.psi, start.psi_dot, end.psi, end.psi_dot, T)
    return PolySegment(coeffs=coeffs, yaw_coeffs=yaw, duration=T, dims=dims)


def min_accel_yaw(psi0: float, psidot0: float, psi1: float, psidot1: float,
                  T: float) -> np.ndarray:
    """Cubic yaw profile; the endpoint is taken along the shortest wrapped
    direction from psi0."""
    if T <= 0.0:
        raise ValueError("duration must be positive")
    psi1_near = psi0 + wrap_angle(psi1 - psi0)
    b = np.array([psi0, psidot0 * T, psi1_near, psidot1 * T])
    q = _M4_INV @ b
    return q * T ** -np.arange(4, dtype=float)


def _eval(coeffs: np.ndarray, t: float, order: int = 0) -> float:
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = np.polynomial.polynomial.polyder(c)
    return float(np.polynomial.polynomial.polyval(t, c))


def segment_state(seg: PolySegment, t: float):
    """(Pose3, Twist, accel 3-vector) at time t; z=0 when dims=2."""
    p = [_eval(c, t) for c in seg.coeffs]
    v = [_eval(c, t, 1) for c in seg.coeffs]
    a = [_eval(c, t, 2) for c in seg.coeffs]
    if seg.dims == 2:
        p.append(0.0)
        v.append(0.0)
        a.append(0.0)
    psi = wrap_angle(_eval(seg.yaw_coeffs, t))
    psid = _eval(seg.yaw_coeffs, t, 1)
    pose = Pose3(p[0], p[1], p[2], psi)
    twist = Twist(vx=v[0], vy=v[1], vz=v[2], omega=psid)
    return pose, twist, np.array(a)


def sample(seg: PolySegment, dt: float):
    """Setpoints at t = 0, dt, ..., duration (endpoint always included)."""
    if not 0.0 < dt <= seg.duration:
        raise ValueError("dt must be in (0, duration]")
    ts = [k * dt for k in range(int(math.floor(seg.duration / dt + 1e-9)) + 1)]
    if seg.duration - ts[-1] > 1e-9:
        ts.append(seg.duration)
    else:
        ts[-1] = seg.duration
    return [segment_state(seg, t) for t in ts]
