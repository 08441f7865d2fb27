"""Cubic-polynomial target motion prediction over a sliding state history.

Independent 3rd-order least-squares fits to x, y, theta as functions of
time. The heading channel is fit on the unwrapped (cumulative) sequence so
crossings of +-pi do not poison the regression; outputs are wrapped again.

Time convention: the fit origin (t = 0) is the OLDEST sample, so "now" sits
at t0_offset = (L-1)*dt. Use PolyTraj.shifted(traj.t0_offset) to obtain the
same trajectory re-based so its t = 0 means "now".
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .geometry import Pose2, Twist, unwrap_near, wrap_angle

DEFAULT_HISTORY_LEN = 20
DEFAULT_HORIZON_S = 3.0
MIN_FIT_SAMPLES = 4


class PoseHistory:
    """Fixed-capacity deque of relative poses at constant spacing dt.

    theta is stored unwrapped: each appended pose's heading is shifted by a
    multiple of 2*pi to sit within pi of the previous entry.
    """

    def __init__(self, length: int = DEFAULT_HISTORY_LEN, dt: float = 0.1):
        if length < MIN_FIT_SAMPLES:
            raise ValueError(f"history length must be >= {MIN_FIT_SAMPLES}")
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.length = length
        self.dt = dt
        self._x: deque[float] = deque(maxlen=length)
        self._y: deque[float] = deque(maxlen=length)
        self._theta: deque[float] = deque(maxlen=length)

    def append(self, pose: Pose2) -> None:
        th = pose.theta
        if self._theta:
            th = unwrap_near(self._theta[-1], th)
        self._x.append(pose.x)
        self._y.append(pose.y)
        self._theta.append(th)

    def clear(self) -> None:
        self._x.clear()
        self._y.clear()
        self._theta.clear()

    def __len__(self) -> int:
        return len(self._x)

    @property
    def full(self) -> bool:
        return len(self._x) == self.length

    def columns(self):
        return (np.array(self._x), np.array(self._y), np.array(self._theta))


@dataclass(frozen=True)
class PolyTraj:
    """Per-axis cubic coefficients, highest degree first (numpy polyval
    order). Evaluation is valid on [0, t_max]; t0_offset marks "now"."""

    eta_x: np.ndarray
    eta_y: np.ndarray
    eta_theta: np.ndarray
    t_max: float
    t0_offset: float

    def shifted(self, s: float) -> "PolyTraj":
        """Re-origin the time axis: shifted(s).eval(t) == eval(t + s)."""
        if not 0.0 <= s <= self.t_max:
            raise ValueError(f"shift {s} outside [0, {self.t_max}]")
        return PolyTraj(
            _shift_cubic(self.eta_x, s),
            _shift_cubic(self.eta_y, s),
            _shift_cubic(self.eta_theta, s),
            self.t_max - s,
            max(self.t0_offset - s, 0.0),
        )


def _shift_cubic(c: np.ndarray, s: float) -> np.ndarray:
    """Coefficients of p(t + s) given those of p(t) (highest first)."""
    a3, a2, a1, a0 = c
    return np.array([
        a3,
        3 * a3 * s + a2,
        3 * a3 * s * s + 2 * a2 * s + a1,
        a3 * s ** 3 + a2 * s * s + a1 * s + a0,
    ])


def fit(hist: PoseHistory, horizon: float = DEFAULT_HORIZON_S) -> PolyTraj:
    """Least-squares cubic per axis over t_i = i*dt, i in [0, L).

    Solved by orthogonal decomposition (lstsq), never by forming the normal
    equations. The returned horizon extends `horizon` seconds past "now".
    """
    L = len(hist)
    if not hist.full:
        raise ValueError(f"history not full ({L}/{hist.length})")
    if L < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples, have {L}")
    t = np.arange(L) * hist.dt
    T = np.vander(t, 4)  # T[i, j] = t_i^(3-j)
    if np.linalg.matrix_rank(T) < 4:
        raise ValueError("rank-deficient Vandermonde (duplicate sample times)")
    xs, ys, ths = hist.columns()
    d = np.column_stack([xs, ys, ths])
    coef, *_ = np.linalg.lstsq(T, d, rcond=None)
    t_now = (L - 1) * hist.dt
    return PolyTraj(
        eta_x=coef[:, 0], eta_y=coef[:, 1], eta_theta=coef[:, 2],
        t_max=t_now + horizon, t0_offset=t_now,
    )


def _check_t(traj: PolyTraj, t: float) -> None:
    if not 0.0 <= t <= traj.t_max:
        raise ValueError(f"t={t} outside [0, {traj.t_max}]")


def eval_pose(traj: PolyTraj, t: float) -> Pose2:
    _check_t(traj, t)
    return Pose2(
        float(np.polyval(traj.eta_x, t)),
        float(np.polyval(traj.eta_y, t)),
        wrap_angle(float(np.polyval(traj.eta_theta, t))),
    )


def eval_xy(traj: PolyTraj, t):
    """Vectorized position evaluation (no wrap needed); t may be an array."""
    return np.polyval(traj.eta_x, t), np.polyval(traj.eta_y, t)


def eval_derivative(traj: PolyTraj, t: float) -> Twist:
    _check_t(traj, t)
    dx = np.polyder(traj.eta_x)
    dy = np.polyder(traj.eta_y)
    dth = np.polyder(traj.eta_theta)
    return Twist(
        vx=float(np.polyval(dx, t)),
        vy=float(np.polyval(dy, t)),
        vz=0.0,
        omega=float(np.polyval(dth, t)),
    )
