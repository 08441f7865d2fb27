"""Body-frame EKF over the relative target state, with twist estimation.

State is the target pose (x_r, y_r, theta_r) expressed in the observer's
body frame. The prediction model combines a constant-twist target with the
observer's own motion:

    x_r'     = v_t cos(theta_r) - v_obs_x + omega_obs * y_r
    y_r'     = v_t sin(theta_r) - v_obs_y - omega_obs * x_r
    theta_r' = omega_t - omega_obs

discretized by forward Euler for both the mean and the Jacobian. The
measurement model is identity (direct relative-pose observations); angular
innovations are wrapped before the gain is applied.

Target twist estimation takes first differences of the state history with
the observer's own motion cancelled through the same prediction map, then
averages over a sliding window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, Twist, wrap_angle

DEFAULT_WINDOW = 10


@dataclass(frozen=True)
class NoiseConfig:
    """Process-noise PSD diagonal (per second) and measurement variance
    diagonal, both length 3 (x, y, theta)."""

    q_diag: tuple = (0.01, 0.01, 0.02)
    r_diag: tuple = (0.005, 0.005, 0.01)

    def __post_init__(self):
        if len(self.q_diag) != 3 or len(self.r_diag) != 3:
            raise ValueError("q_diag and r_diag must have 3 entries")
        if any(q <= 0 for q in self.q_diag) or any(r <= 0 for r in self.r_diag):
            raise ValueError("noise entries must be strictly positive")


@dataclass(frozen=True)
class EkfState:
    mean: Pose2
    cov: np.ndarray

    def mean_vec(self) -> np.ndarray:
        return np.array([self.mean.x, self.mean.y, self.mean.theta])


@dataclass(frozen=True)
class TargetTwistEstimate:
    v_t: float = 0.0
    omega_t: float = 0.0
    valid: bool = False


@dataclass
class StateHistory:
    """Ring buffer of (EKF mean, observer twist applied over the step that
    produced it, timestamp). Timestamps must advance by a constant dt."""

    dt: float
    capacity: int = DEFAULT_WINDOW + 1
    entries: list = field(default_factory=list)

    def append(self, mean: Pose2, u_obs: Twist, t: float) -> None:
        if self.entries:
            gap = t - self.entries[-1][2]
            if abs(gap - self.dt) > 1e-9:
                raise ValueError(f"non-uniform history spacing: {gap} vs {self.dt}")
        self.entries.append((mean, u_obs, t))
        if len(self.entries) > self.capacity:
            self.entries.pop(0)

    def __len__(self) -> int:
        return len(self.entries)


def _require_psd(P: np.ndarray) -> None:
    if P.shape != (3, 3):
        raise ValueError(f"covariance must be 3x3, got {P.shape}")
    if np.max(np.abs(P - P.T)) > 1e-8:
        raise ValueError("covariance not symmetric")
    if float(np.linalg.eigvalsh(P)[0]) < -1e-8:
        raise ValueError("covariance not positive semidefinite")


def _psd_repair(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w[0] < 0.0:
        P = (V * np.maximum(w, 0.0)) @ V.T
        P = 0.5 * (P + P.T)
    return P


def predict_mean(mean: Pose2, u_obs: Twist, v_t: float, omega_t: float,
                 dt: float) -> Pose2:
    """Euler step of the relative kinematic model (mean only)."""
    c, s = math.cos(mean.theta), math.sin(mean.theta)
    return Pose2(
        mean.x + dt * (v_t * c - u_obs.vx + u_obs.omega * mean.y),
        mean.y + dt * (v_t * s - u_obs.vy - u_obs.omega * mean.x),
        wrap_angle(mean.theta + dt * (omega_t - u_obs.omega)),
    )


def ekf_predict(state: EkfState, u_obs: Twist, u_tgt: TargetTwistEstimate,
                dt: float, noise: NoiseConfig) -> EkfState:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    _require_psd(state.cov)
    v_t = u_tgt.v_t if u_tgt.valid else 0.0
    omega_t = u_tgt.omega_t if u_tgt.valid else 0.0
    mean = predict_mean(state.mean, u_obs, v_t, omega_t, dt)
    c, s = math.cos(state.mean.theta), math.sin(state.mean.theta)
    F = np.array([
        [1.0, dt * u_obs.omega, -dt * v_t * s],
        [-dt * u_obs.omega, 1.0, dt * v_t * c],
        [0.0, 0.0, 1.0],
    ])
    P = F @ state.cov @ F.T + np.diag(noise.q_diag) * dt
    return EkfState(mean, _psd_repair(P))


def ekf_update(state: EkfState, meas: Pose2, noise: NoiseConfig) -> EkfState:
    _require_psd(state.cov)
    P = state.cov
    R = np.diag(noise.r_diag)
    S = P + R
    if abs(np.linalg.det(S)) < 1e-300:
        raise ValueError("singular innovation covariance (degenerate R)")
    K = P @ np.linalg.inv(S)
    innov = np.array([
        meas.x - state.mean.x,
        meas.y - state.mean.y,
        wrap_angle(meas.theta - state.mean.theta),
    ])
    dx = K @ innov
    mean = Pose2(state.mean.x + dx[0], state.mean.y + dx[1],
                 wrap_angle(state.mean.theta + dx[2]))
    IK = np.eye(3) - K
    P_post = IK @ P @ IK.T + K @ R @ K.T  # Joseph form
    return EkfState(mean, _psd_repair(P_post))


def estimate_target_twist(hist: StateHistory, w: int = DEFAULT_WINDOW,
                          dt: float | None = None) -> TargetTwistEstimate:
    """Window-averaged target twist with observer motion cancelled.

    For each step in the window the residual against a zero-target-motion
    prediction isolates what the target itself did; residuals are averaged
    and scaled by 1/dt. Returns valid=False until w+1 entries exist.
    """
    if dt is None:
        dt = hist.dt
    if len(hist) < w + 1:
        return TargetTwistEstimate()
    window = hist.entries[-(w + 1):]
    dxy = np.zeros(2)
    dth = 0.0
    for (prev, _, _), (cur, u_obs, _) in zip(window, window[1:]):
        phi = predict_mean(prev, u_obs, 0.0, 0.0, dt)
        dxy += (cur.x - phi.x, cur.y - phi.y)
        dth += wrap_angle(cur.theta - phi.theta)
    dxy /= w
    v_hat = float(np.hypot(dxy[0], dxy[1])) / dt
    omega_hat = dth / w / dt
    return TargetTwistEstimate(v_hat, omega_hat, True)
