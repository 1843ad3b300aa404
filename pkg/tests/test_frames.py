import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dronenav import frames
from dronenav.frames import (
    EARTH_RADIUS_M,
    DegenerateHeadingError,
    EulerSingularityError,
    FlatEarthDomainError,
    GeodeticPoint,
    InertialFrame,
    PoseSE3,
    compose,
    euler_to_matrix,
    geodetic_to_local,
    invert,
    local_to_geodetic,
    make_inertial_frame,
    matrix_to_euler,
    wrap_angle,
)

finite_angle = st.floats(-math.pi + 1e-6, math.pi, allow_nan=False)
safe_pitch = st.floats(-math.pi / 2 + 2e-3, math.pi / 2 - 2e-3)
coord = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def random_pose(rng) -> PoseSE3:
    euler = np.array(
        [
            rng.uniform(-math.pi + 0.01, math.pi),
            rng.uniform(-1.2, 1.2),
            rng.uniform(-math.pi + 0.01, math.pi),
        ]
    )
    return PoseSE3(rng.uniform(-10, 10, 3), euler)


class TestWrapAngle:
    def test_wraps_to_half_open_interval(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
        assert wrap_angle(0.1) == pytest.approx(0.1)

    @given(st.floats(-100.0, 100.0))
    def test_idempotent_and_in_range(self, angle):
        wrapped = wrap_angle(angle)
        assert -math.pi < wrapped <= math.pi + 1e-12
        assert wrap_angle(wrapped) == pytest.approx(wrapped, abs=1e-12)


class TestGeodetic:
    def test_identity_point_maps_to_zero(self):
        p = GeodeticPoint(0.4, -1.2, 120.0)
        np.testing.assert_allclose(geodetic_to_local(p, p), np.zeros(3))

    def test_pure_latitude_offset(self):
        ref = GeodeticPoint(0.0, 0.0, 0.0)
        p = GeodeticPoint(1e-5, 0.0, 0.0)
        enu = geodetic_to_local(p, ref)
        # R * dlat with R = 6378137 m
        np.testing.assert_allclose(enu, [0.0, 63.78137, 0.0], atol=1e-9)

    def test_longitude_scales_with_cos_latitude(self):
        ref = GeodeticPoint(1.0, 0.5, 0.0)
        p = GeodeticPoint(1.0, 0.5 + 2e-5, 3.0)
        enu = geodetic_to_local(p, ref)
        assert enu[0] == pytest.approx(EARTH_RADIUS_M * 2e-5 * math.cos(1.0))
        assert enu[1] == 0.0
        assert enu[2] == 3.0

    def test_flat_earth_guard(self):
        ref = GeodeticPoint(0.0, 0.0, 0.0)
        with pytest.raises(FlatEarthDomainError):
            geodetic_to_local(GeodeticPoint(0.02, 0.0, 0.0), ref)

    @given(
        st.floats(-1.2, 1.2),
        finite_angle,
        st.floats(-4e-3, 4e-3),
        st.floats(-4e-3, 4e-3),
        st.floats(-100.0, 500.0),
    )
    @settings(max_examples=200)
    def test_round_trip(self, lat, lon, dlat, dlon, alt):
        ref = GeodeticPoint(lat, lon, 0.0)
        p = GeodeticPoint(lat + dlat, wrap_angle(lon + dlon), alt)
        back = local_to_geodetic(geodetic_to_local(p, ref), ref)
        assert back.latitude == pytest.approx(p.latitude, abs=1e-9)
        assert abs(wrap_angle(back.longitude - p.longitude)) < 1e-9
        assert back.altitude == pytest.approx(p.altitude, abs=1e-9)

    def test_invariants_enforced(self):
        with pytest.raises(frames.FrameError):
            GeodeticPoint(2.0, 0.0, 0.0)
        with pytest.raises(frames.FrameError):
            GeodeticPoint(0.0, -3.5, 0.0)


class TestInertialFrame:
    def test_three_four_five_projection(self):
        frame = make_inertial_frame([3.0, 4.0, 0.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(frame.to_frame([3.0, 4.0, 0.0]), [-5.0, 0.0, 0.0], atol=1e-12)

    def test_axis_aligned_with_altitude(self):
        frame = make_inertial_frame([0.0, 0.0, 0.0], [0.0, 10.0, 2.0])
        np.testing.assert_allclose(frame.to_frame([0.0, 0.0, 0.0]), [-10.0, 0.0, -2.0], atol=1e-12)

    def test_goal_maps_to_origin(self):
        frame = make_inertial_frame([1.0, 2.0, 3.0], [-4.0, 5.0, 6.0])
        np.testing.assert_allclose(frame.to_frame([-4.0, 5.0, 6.0]), np.zeros(3), atol=1e-12)

    def test_degenerate_heading(self):
        with pytest.raises(DegenerateHeadingError):
            make_inertial_frame([1.0, 1.0, 0.0], [1.0, 1.0, 50.0])

    @given(coord, coord, coord, coord, coord, coord)
    @settings(max_examples=300)
    def test_frame_conditions(self, sx, sy, sz, fx, fy, fz):
        p_s = np.array([sx, sy, sz])
        p_f = np.array([fx, fy, fz])
        d = math.hypot(fx - sx, fy - sy)
        if d < 1e-6:
            return
        frame = make_inertial_frame(p_s, p_f)
        scale = max(1.0, d)
        np.testing.assert_allclose(frame.to_frame(p_f), np.zeros(3), atol=1e-9 * scale)
        mapped = frame.to_frame(p_s)
        assert mapped[0] == pytest.approx(-d, abs=1e-9 * scale)
        assert mapped[1] == pytest.approx(0.0, abs=1e-9 * scale)
        assert mapped[2] == pytest.approx(sz - fz, abs=1e-9)
        # round trip
        np.testing.assert_allclose(frame.from_frame(mapped), p_s, atol=1e-9 * scale)


class TestPoseSE3:
    def test_rotation_orthonormal(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            rot = random_pose(rng).rotation()
            np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-9)
            assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)

    @given(finite_angle, safe_pitch, finite_angle)
    @settings(max_examples=300)
    def test_euler_round_trip(self, roll, pitch, yaw):
        rot = euler_to_matrix(roll, pitch, yaw)
        back = matrix_to_euler(rot)
        assert abs(wrap_angle(back[0] - roll)) < 1e-9
        assert back[1] == pytest.approx(pitch, abs=1e-9)
        assert abs(wrap_angle(back[2] - yaw)) < 1e-9

    def test_euler_singularity_raises(self):
        rot = euler_to_matrix(0.1, math.pi / 2 - 1e-5, 0.2)
        with pytest.raises(EulerSingularityError):
            matrix_to_euler(rot)

    def test_compose_identity(self):
        rng = np.random.default_rng(3)
        b = random_pose(rng)
        out = compose(PoseSE3.identity(), b)
        np.testing.assert_allclose(out.position, b.position, atol=1e-12)
        np.testing.assert_allclose(out.rotation(), b.rotation(), atol=1e-12)

    def test_translation_cancellation(self):
        a = PoseSE3([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        b = PoseSE3([-1.0, -2.0, -3.0], [0.0, 0.0, 0.0])
        out = compose(a, b)
        np.testing.assert_allclose(out.position, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(out.euler, np.zeros(3), atol=1e-12)

    def test_inverse_composition_is_identity(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = random_pose(rng)
            out = compose(invert(a), a)
            np.testing.assert_allclose(out.position, np.zeros(3), atol=1e-9)
            np.testing.assert_allclose(out.rotation(), np.eye(3), atol=1e-9)

    def test_double_inverse(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = random_pose(rng)
            back = invert(invert(a))
            np.testing.assert_allclose(back.position, a.position, atol=1e-9)
            np.testing.assert_allclose(back.rotation(), a.rotation(), atol=1e-9)

    def test_associativity(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            np.testing.assert_allclose(left.position, right.position, atol=1e-9)
            np.testing.assert_allclose(left.rotation(), right.rotation(), atol=1e-9)

    def test_matrix_view_round_trip(self):
        rng = np.random.default_rng(7)
        a = random_pose(rng)
        back = PoseSE3.from_matrix(a.matrix())
        np.testing.assert_allclose(back.position, a.position, atol=1e-12)
        np.testing.assert_allclose(back.rotation(), a.rotation(), atol=1e-9)

    def test_apply_matches_matrix(self):
        rng = np.random.default_rng(8)
        a = random_pose(rng)
        point = rng.uniform(-5, 5, 3)
        via_matrix = (a.matrix() @ np.append(point, 1.0))[:3]
        np.testing.assert_allclose(a.apply(point), via_matrix, atol=1e-12)
