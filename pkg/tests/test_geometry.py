import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from interceptkit.geometry import (
    PlatformLimits,
    Pose2,
    se2_compose,
    se2_inverse,
    se2_relative,
    wrap_angle,
)

angles = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
coords = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False)
poses = st.builds(Pose2, coords, coords, angles)


def pose_matrix(p: Pose2) -> np.ndarray:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def assert_pose_close(a: Pose2, b: Pose2, tol=1e-12):
    assert a.x == pytest.approx(b.x, abs=tol)
    assert a.y == pytest.approx(b.y, abs=tol)
    assert wrap_angle(a.theta - b.theta) == pytest.approx(0.0, abs=tol)


class TestWrapAngle:
    def test_identity(self):
        assert wrap_angle(0.0) == 0.0

    def test_three_pi(self):
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_lower_bound_open(self):
        # -pi maps to +pi: the interval is (-pi, pi]
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(math.pi) == pytest.approx(math.pi)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError):
            wrap_angle(bad)

    @given(angles)
    def test_idempotent_and_in_range(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == w

    @given(angles)
    def test_congruent_mod_2pi(self, a):
        w = wrap_angle(a)
        k = (a - w) / (2 * math.pi)
        assert k == pytest.approx(round(k), abs=1e-6)


class TestSe2:
    def test_compose_identity(self):
        p = Pose2(1.2, -0.7, 0.9)
        assert_pose_close(se2_compose(Pose2(), p), p)
        assert_pose_close(se2_compose(p, Pose2()), p)

    def test_compose_with_inverse_is_identity(self):
        p = Pose2(1.2, -0.7, 0.9)
        assert_pose_close(se2_compose(p, se2_inverse(p)), Pose2())

    def test_compose_hand_case(self):
        out = se2_compose(Pose2(1, 0, math.pi / 2), Pose2(1, 0, 0))
        assert_pose_close(out, Pose2(1, 1, math.pi / 2), tol=1e-12)

    def test_inverse_identity(self):
        assert_pose_close(se2_inverse(Pose2()), Pose2())

    def test_inverse_pure_translation(self):
        assert_pose_close(se2_inverse(Pose2(1, 0, 0)), Pose2(-1, 0, 0))

    def test_inverse_matches_matrix_oracle(self):
        p = Pose2(1, 1, math.pi / 2)
        assert_pose_close(se2_inverse(p), Pose2(-1, 1, -math.pi / 2))
        Minv = np.linalg.inv(pose_matrix(p))
        q = se2_inverse(p)
        np.testing.assert_allclose(pose_matrix(q), Minv, atol=1e-12)

    @given(poses, poses)
    def test_compose_matches_matrix_oracle(self, a, b):
        out = se2_compose(a, b)
        np.testing.assert_allclose(
            pose_matrix(out), pose_matrix(a) @ pose_matrix(b), atol=1e-9)

    @given(poses, poses, poses)
    def test_associative(self, a, b, c):
        left = se2_compose(se2_compose(a, b), c)
        right = se2_compose(a, se2_compose(b, c))
        assert_pose_close(left, right, tol=1e-10)

    @given(poses)
    def test_double_inverse(self, p):
        assert_pose_close(se2_inverse(se2_inverse(p)), p, tol=1e-12)

    @given(poses, poses)
    def test_relative_roundtrip(self, origin, p):
        rel = se2_relative(origin, p)
        assert_pose_close(se2_compose(origin, rel), p, tol=1e-9)


class TestPlatformLimits:
    def test_positive_required(self):
        with pytest.raises(ValueError):
            PlatformLimits(v_max=0.0, omega_max=1.0, r_min=0.5)
        with pytest.raises(ValueError):
            PlatformLimits(v_max=1.0, omega_max=-1.0, r_min=0.5)
