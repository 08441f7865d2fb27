"""Planar/3D pose types, angle arithmetic, and platform kinematic classes.

All angles live in (-pi, pi]; every operation that produces an angle wraps
its output. Types are frozen dataclasses and safe to share across threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]. Raises ValueError on non-finite input."""
    if not math.isfinite(a):
        raise ValueError(f"non-finite angle: {a!r}")
    r = math.fmod(a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


def unwrap_near(prev: float, a: float) -> float:
    """Return a shifted by a multiple of 2*pi so it is within pi of prev."""
    return prev + wrap_angle(a - prev)


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y in meters, theta in radians, wrapped)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class Pose3:
    """Position plus yaw; roll and pitch are not modeled."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def planar(self) -> Pose2:
        return Pose2(self.x, self.y, self.yaw)


@dataclass(frozen=True)
class Twist:
    """Body-frame velocity command (vx, vy, vz in m/s, omega in rad/s)."""

    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    omega: float = 0.0


@dataclass(frozen=True)
class PlatformLimits:
    v_max: float
    omega_max: float
    r_min: float

    def __post_init__(self):
        if not (self.v_max > 0.0 and self.omega_max > 0.0 and self.r_min > 0.0):
            raise ValueError("platform limits must be strictly positive")


class PlatformClass(enum.Enum):
    """Selects the reachability model and planner family."""

    COUPLED_GROUND = "coupled_ground"
    HOLONOMIC_2D = "holonomic_2d"
    HOLONOMIC_3D = "holonomic_3d"

    @property
    def coupled(self) -> bool:
        return self is PlatformClass.COUPLED_GROUND


def se2_compose(a: Pose2, b: Pose2) -> Pose2:
    """Rigid-body composition a * b (b expressed in a's frame)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        wrap_angle(a.theta + b.theta),
    )


def se2_inverse(a: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(-(c * a.x + s * a.y), -(-s * a.x + c * a.y), wrap_angle(-a.theta))


def se2_relative(origin: Pose2, p: Pose2) -> Pose2:
    """Express p in the frame of origin: origin^-1 * p."""
    return se2_compose(se2_inverse(origin), p)
