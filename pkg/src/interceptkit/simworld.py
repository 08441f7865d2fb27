"""Deterministic kinematic world: observer plants, target motion profiles,
and the relative-pose sensor with FOV, range, noise, dropout, and
corruption.

Everything here is ground truth. The autonomy stack must only ever see the
Measurement stream and its own commanded twists; nothing in this module is
imported by the estimation/prediction/planning modules.

RNG discipline: each trial owns one seed, split into named substreams
(target, sensor noise, sensor corruption). Sensor draws are consumed per
sensor slot whether or not a measurement is emitted, so toggling dropout,
FOV geometry, or the prediction arm never shifts another mechanism's draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    PlatformClass,
    PlatformLimits,
    Pose2,
    Pose3,
    Twist,
    se2_relative,
    wrap_angle,
)


@dataclass
class WorldState:
    observer_pose: Pose3
    target_pose: Pose2
    t: float = 0.0


# --------------------------------------------------------------------------
# target motion profiles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearProfile:
    speed: float
    heading: float | None = None  # None: use the start pose's heading
    distance: float = math.inf


@dataclass(frozen=True)
class SinusoidProfile:
    """Centerline advance at `speed` with lateral offset
    (p2p/2) * sin(2*pi*s/wavelength), s the arc length along the
    centerline."""

    speed: float
    wavelength: float
    p2p: float
    heading: float | None = None
    distance: float = math.inf


@dataclass(frozen=True)
class StochasticTwistProfile:
    v_range: tuple
    omega_range: tuple
    resample_hz: float = 10.0
    stop_after: float = math.inf


@dataclass(frozen=True)
class WaypointsProfile:
    points: tuple  # of (Pose2, speed)


TargetProfile = LinearProfile | SinusoidProfile | StochasticTwistProfile | WaypointsProfile


class TargetMotion:
    """Stateful per-trial stepper for a target profile.

    Owns the profile's RNG substream (StochasticTwist resampling); `halted`
    reports whether the profile has finished moving (truth-side metadata
    used by metrics, never by the autonomy stack).
    """

    def __init__(self, profile: TargetProfile, start: Pose2, rng: np.random.Generator):
        self.profile = profile
        self.start = start
        self.rng = rng
        self.pose = start
        self.halted = isinstance(profile, LinearProfile) and profile.speed == 0.0
        self._twist = (0.0, 0.0)
        self._slot = -1
        self._wp_index = 0

    def step(self, t: float, dt: float) -> Pose2:
        """Advance the target over [t, t + dt] and return its new pose."""
        p = self.profile
        if isinstance(p, LinearProfile):
            heading = self.start.theta if p.heading is None else p.heading
            s1 = min(p.speed * (t + dt), p.distance)
            self.halted = p.speed * (t + dt) >= p.distance or p.speed == 0.0
            self.pose = Pose2(
                self.start.x + s1 * math.cos(heading),
                self.start.y + s1 * math.sin(heading),
                heading,
            )
        elif isinstance(p, SinusoidProfile):
            heading = self.start.theta if p.heading is None else p.heading
            s = min(p.speed * (t + dt), p.distance)
            self.halted = p.speed * (t + dt) >= p.distance or p.speed == 0.0
            amp = 0.5 * p.p2p
            arg = 2.0 * math.pi * s / p.wavelength
            off = amp * math.sin(arg)
            doff = amp * (2.0 * math.pi / p.wavelength) * math.cos(arg)
            c, sn = math.cos(heading), math.sin(heading)
            tangent = math.atan2(doff, 1.0)
            self.pose = Pose2(
                self.start.x + s * c - off * sn,
                self.start.y + s * sn + off * c,
                wrap_angle(heading + tangent) if not self.halted else heading,
            )
        elif isinstance(p, StochasticTwistProfile):
            if t + dt >= p.stop_after:
                self.halted = True
                return self.pose
            slot = int(math.floor(t * p.resample_hz + 1e-9))
            if slot > self._slot:
                self._slot = slot
                self._twist = (
                    float(self.rng.uniform(p.v_range[0], p.v_range[1])),
                    float(self.rng.uniform(p.omega_range[0], p.omega_range[1])),
                )
            v, om = self._twist
            x, y, th = self.pose.x, self.pose.y, self.pose.theta
            self.pose = Pose2(
                x + v * math.cos(th) * dt,
                y + v * math.sin(th) * dt,
                wrap_angle(th + om * dt),
            )
        elif isinstance(p, WaypointsProfile):
            remaining = dt
            while remaining > 0 and self._wp_index < len(p.points):
                wp, speed = p.points[self._wp_index]
                dx, dy = wp.x - self.pose.x, wp.y - self.pose.y
                gap = math.hypot(dx, dy)
                if gap < 1e-9 or speed <= 0:
                    self._wp_index += 1
                    continue
                step = speed * remaining
                if step >= gap:
                    self.pose = Pose2(wp.x, wp.y, math.atan2(dy, dx))
                    remaining -= gap / speed
                    self._wp_index += 1
                else:
                    self.pose = Pose2(
                        self.pose.x + dx / gap * step,
                        self.pose.y + dy / gap * step,
                        math.atan2(dy, dx),
                    )
                    remaining = 0.0
            self.halted = self._wp_index >= len(p.points)
        else:
            raise TypeError(f"unknown profile {type(p).__name__}")
        return self.pose


def step_target(motion: TargetMotion, t: float, dt: float) -> Pose2:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return motion.step(t, dt)


# --------------------------------------------------------------------------
# observer plants
# --------------------------------------------------------------------------

def clamp_twist(u: Twist, cls: PlatformClass, limits: PlatformLimits) -> Twist:
    om = min(max(u.omega, -limits.omega_max), limits.omega_max)
    if cls is PlatformClass.COUPLED_GROUND:
        v = min(max(u.vx, -limits.v_max), limits.v_max)
        return Twist(vx=v, vy=0.0, vz=0.0, omega=om)
    speed = math.hypot(u.vx, u.vy)
    scale = limits.v_max / speed if speed > limits.v_max else 1.0
    vz = 0.0
    if cls is PlatformClass.HOLONOMIC_3D:
        vz = min(max(u.vz, -limits.v_max), limits.v_max)
    return Twist(vx=u.vx * scale, vy=u.vy * scale, vz=vz, omega=om)


def step_observer(pose: Pose3, cls: PlatformClass, u: Twist, dt: float,
                  limits: PlatformLimits) -> Pose3:
    """Euler step of the platform kinematics; u is clamped to limits first."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = clamp_twist(u, cls, limits)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    if cls is PlatformClass.COUPLED_GROUND:
        return Pose3(
            pose.x + u.vx * c * dt,
            pose.y + u.vx * s * dt,
            0.0,
            wrap_angle(pose.yaw + u.omega * dt),
        )
    z = pose.z
    if cls is PlatformClass.HOLONOMIC_3D:
        z = max(pose.z + u.vz * dt, 0.0)
    return Pose3(
        pose.x + (u.vx * c - u.vy * s) * dt,
        pose.y + (u.vx * s + u.vy * c) * dt,
        z,
        wrap_angle(pose.yaw + u.omega * dt),
    )


# --------------------------------------------------------------------------
# sensor
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DropoutSchedule:
    """Blackout windows of window_s starting at every multiple of
    interval_s (the first at t = interval_s). window_s > interval_s yields a
    continuous blackout."""

    window_s: float
    interval_s: float

    def active(self, t: float) -> bool:
        m = math.floor(t / self.interval_s + 1e-9)
        return m >= 1 and t < m * self.interval_s + self.window_s


@dataclass(frozen=True)
class SensorConfig:
    rate_hz: float = 10.0
    fov_half_angle: float = math.pi / 4.0
    max_range: float = 10.0
    noise_sigma: tuple = (0.005, 0.005, 0.01)
    dropout: DropoutSchedule | None = None
    p_corrupt: float = 0.0
    latency_ticks: int = 0

    def __post_init__(self):
        if not 5.0 <= self.rate_hz <= 30.0:
            raise ValueError("sensor rate must be within [5, 30] Hz")
        if not 0.0 <= self.p_corrupt <= 1.0:
            raise ValueError("p_corrupt must be a probability")
        if self.latency_ticks < 0:
            raise ValueError("latency_ticks must be >= 0")


@dataclass(frozen=True)
class Measurement:
    pose: Pose2  # target in observer body frame
    t: float
    corrupted: bool  # logged for analysis; never shown to the autonomy stack


class SensorSim:
    """Emits measurements at sensor cadence against the current world truth.

    Draws are consumed per slot regardless of visibility so the random
    streams are a pure function of the slot index.
    """

    def __init__(self, cfg: SensorConfig, rng_noise: np.random.Generator,
                 rng_corrupt: np.random.Generator):
        self.cfg = cfg
        self.rng_noise = rng_noise
        self.rng_corrupt = rng_corrupt
        self._next_slot = 1

    def poll(self, world: WorldState, t_now: float) -> list:
        """All measurements whose slot time falls at or before t_now."""
        out = []
        cfg = self.cfg
        while self._next_slot / cfg.rate_hz <= t_now + 1e-9:
            slot_t = self._next_slot / cfg.rate_hz
            self._next_slot += 1
            noise = self.rng_noise.normal(0.0, 1.0, size=3)
            corrupt_u = float(self.rng_corrupt.uniform())
            corrupt_vals = self.rng_corrupt.uniform(size=3)
            m = self._sense(world, slot_t, noise, corrupt_u, corrupt_vals)
            if m is not None:
                out.append(m)
        return out

    def _sense(self, world, slot_t, noise, corrupt_u, corrupt_vals):
        cfg = self.cfg
        if cfg.dropout is not None and cfg.dropout.active(slot_t):
            return None
        rel = se2_relative(world.observer_pose.planar(), world.target_pose)
        rng_m = math.hypot(rel.x, rel.y)
        bearing = math.atan2(rel.y, rel.x)
        if rng_m > cfg.max_range or abs(bearing) > cfg.fov_half_angle:
            return None
        if corrupt_u < cfg.p_corrupt:
            r = corrupt_vals[0] * cfg.max_range
            b = (2.0 * corrupt_vals[1] - 1.0) * cfg.fov_half_angle
            th = wrap_angle((2.0 * corrupt_vals[2] - 1.0) * math.pi)
            return Measurement(Pose2(r * math.cos(b), r * math.sin(b), th),
                               slot_t, True)
        sx, sy, sth = cfg.noise_sigma
        return Measurement(
            Pose2(rel.x + noise[0] * sx, rel.y + noise[1] * sy,
                  wrap_angle(rel.theta + noise[2] * sth)),
            slot_t, False,
        )


def trial_substreams(seed: int):
    """(target, sensor-noise, sensor-corruption) generators for one trial."""
    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(3)
    return tuple(np.random.default_rng(k) for k in kids)
