import math

import numpy as np
import pytest

from dronenav import ekf
from dronenav.frames import EulerSingularityError, PoseSE3, wrap_angle
from dronenav.ekf import (
    ArucoPose,
    CameraStatics,
    FilterState,
    GimbalLockError,
    InputVector,
    NoiseConfig,
    SdkPose,
    UwbPosition,
    default_initial_state,
    ekf_correct,
    ekf_predict,
    euler_rate_matrix,
    measurement_model,
    prediction_jacobians,
    propagate_mean,
)


@pytest.fixture
def noise() -> NoiseConfig:
    return NoiseConfig.defaults()


@pytest.fixture
def statics() -> CameraStatics:
    # camera mounted looking straight down (roll pi about body x)
    return CameraStatics(
        camera_in_drone=PoseSE3(np.zeros(3), np.array([math.pi, 0.0, 0.0])),
        markers={"large": PoseSE3(np.zeros(3), np.zeros(3)),
                 "small": PoseSE3(np.zeros(3), np.array([0.0, 0.0, 0.3]))},
    )


def random_state(rng, latched=False) -> FilterState:
    mean = np.concatenate(
        [
            rng.uniform(-50, 50, 3),
            [rng.uniform(-3.0, 3.0), rng.uniform(-1.2, 1.2), rng.uniform(-3.0, 3.0)],
            rng.uniform(-2, 2, 3),
            rng.uniform(-0.05, 0.05, 3),
        ]
    )
    cov = np.diag(rng.uniform(0.01, 2.0, 12))
    return FilterState(mean, cov, bias_latched=latched)


class TestPredict:
    def test_zero_dt_is_noop(self, noise):
        state = default_initial_state([1.0, 2.0, 3.0])
        u = InputVector([5.0, 5.0, 5.0], [1.0, 1.0, 1.0])
        out = ekf_predict(state, u, 0.0, noise)
        np.testing.assert_array_equal(out.mean, state.mean)
        np.testing.assert_array_equal(out.covariance, state.covariance)

    def test_translation(self, noise):
        state = default_initial_state([0.0, 0.0, 0.0])
        out = ekf_predict(state, InputVector([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]), 0.1, noise)
        np.testing.assert_allclose(out.position, [0.1, 0.0, 0.0])
        np.testing.assert_allclose(out.euler, np.zeros(3))

    def test_yaw_rate_with_bias_subtraction(self, noise):
        state = default_initial_state([0.0, 0.0, 0.0])
        state.mean[9:12] = [0.0, 0.0, 0.1]
        out = ekf_predict(state, InputVector([0.0, 0.0, 0.0], [0.0, 0.0, 0.5]), 0.1, noise)
        assert out.euler[2] == pytest.approx(0.04)
        np.testing.assert_allclose(out.gyro_bias, [0.0, 0.0, 0.1])

    def test_biases_constant(self, noise):
        rng = np.random.default_rng(1)
        state = random_state(rng)
        out = ekf_predict(state, InputVector(rng.normal(size=3), rng.normal(size=3)), 0.05, noise)
        np.testing.assert_array_equal(out.gps_bias, state.gps_bias)
        np.testing.assert_array_equal(out.gyro_bias, state.gyro_bias)

    def test_gimbal_lock_rejected(self, noise):
        state = default_initial_state([0, 0, 0], euler=(0.0, math.pi / 2 - 1e-4, 0.0))
        with pytest.raises(GimbalLockError):
            ekf_predict(state, InputVector(np.zeros(3), np.zeros(3)), 0.1, noise)

    def test_time_advances(self, noise):
        state = default_initial_state([0, 0, 0])
        out = ekf_predict(state, InputVector(np.zeros(3), np.zeros(3)), 0.25, noise)
        assert out.time == pytest.approx(0.25)

    def test_euler_rate_matrix_at_zero_is_identity(self):
        np.testing.assert_allclose(euler_rate_matrix(0.0, 0.0), np.eye(3))


class TestPredictionJacobians:
    def test_structure_at_zero_attitude(self):
        state = default_initial_state([0, 0, 0])
        u = InputVector([1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
        f_jac, g_jac = prediction_jacobians(state, u, 0.1)
        np.testing.assert_allclose(f_jac[0:3, 0:3], np.eye(3))
        np.testing.assert_allclose(f_jac[3:6, 9:12], -0.1 * np.eye(3))
        np.testing.assert_allclose(g_jac[0:3, 0:3], 0.1 * np.eye(3))
        np.testing.assert_allclose(g_jac[3:6, 3:6], 0.1 * np.eye(3))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(33)
        dt = 0.05
        for _ in range(100):
            state = random_state(rng)
            u = InputVector(rng.uniform(-3, 3, 3), rng.uniform(-1, 1, 3))
            f_jac, g_jac = prediction_jacobians(state, u, dt)
            step = 1e-6
            for j in range(12):
                plus, minus = state.mean.copy(), state.mean.copy()
                plus[j] += step
                minus[j] -= step
                fd = propagate_mean(plus, u, dt) - propagate_mean(minus, u, dt)
                fd[3:6] = wrap_angle(fd[3:6])
                fd /= 2 * step
                np.testing.assert_allclose(
                    f_jac[:, j], fd, atol=1e-6, rtol=1e-6,
                )
            for j in range(6):
                du = np.zeros(6)
                du[j] = step
                up = InputVector(u.velocity + du[:3], u.angular_velocity + du[3:])
                um = InputVector(u.velocity - du[:3], u.angular_velocity - du[3:])
                fd = propagate_mean(state.mean, up, dt) - propagate_mean(state.mean, um, dt)
                fd[3:6] = wrap_angle(fd[3:6])
                fd /= 2 * step
                np.testing.assert_allclose(g_jac[:, j], fd, atol=1e-6, rtol=1e-6)


class TestMeasurementModels:
    def test_sdk_without_latch(self, statics):
        rng = np.random.default_rng(2)
        state = random_state(rng, latched=False)
        expected, h_jac, _ = measurement_model(state, _sdk(state), statics)
        np.testing.assert_allclose(expected, state.mean[:6])
        np.testing.assert_allclose(h_jac, np.hstack([np.eye(6), np.zeros((6, 6))]), atol=1e-9)

    def test_sdk_with_latch_includes_bias(self, statics):
        rng = np.random.default_rng(3)
        state = random_state(rng, latched=True)
        expected, h_jac, _ = measurement_model(state, _sdk(state), statics)
        np.testing.assert_allclose(expected[:3], state.position + state.gps_bias)
        np.testing.assert_allclose(h_jac[0:3, 6:9], np.eye(3), atol=1e-9)

    def test_uwb(self, statics):
        rng = np.random.default_rng(4)
        state = random_state(rng)
        m = UwbPosition(np.zeros(3), np.eye(3), timestamp=1.0)
        expected, h_jac, _ = measurement_model(state, m, statics)
        np.testing.assert_allclose(expected, state.position)
        np.testing.assert_allclose(h_jac, np.hstack([np.eye(3), np.zeros((3, 9))]), atol=1e-9)

    def test_aruco_straight_down_geometry(self, statics):
        """Hand-composed oracle: level drone 10 m above a yawed marker.

        With the camera rolled pi about body x, the marker sits 10 m along
        the optical axis and the relative orientation is roll pi with yaw
        equal to minus the marker yaw.
        """
        marker_yaw = 0.3
        statics = CameraStatics(
            camera_in_drone=statics.camera_in_drone,
            markers={"large": PoseSE3(np.zeros(3), np.array([0.0, 0.0, marker_yaw]))},
        )
        state = default_initial_state([0.0, 0.0, 10.0])
        m = ArucoPose(np.zeros(3), np.zeros(3), "large", np.eye(6), timestamp=0.0)
        expected, _, _ = measurement_model(state, m, statics)

        # independent composition: Rx(pi)^T @ (Rz(yaw_m)), camera at drone origin
        rx_pi = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
        c, s = math.cos(marker_yaw), math.sin(marker_yaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        rel_rot = rx_pi.T @ rz
        rel_pos = rx_pi.T @ (np.zeros(3) - np.array([0.0, 0.0, 10.0]))
        np.testing.assert_allclose(expected[:3], rel_pos, atol=1e-12)
        np.testing.assert_allclose(expected[:3], [0.0, 0.0, 10.0], atol=1e-12)
        # Z-Y-X extraction of rel_rot by hand; angles compared mod 2 pi
        pitch = -math.asin(rel_rot[2, 0])
        roll = math.atan2(rel_rot[2, 1], rel_rot[2, 2])
        yaw = math.atan2(rel_rot[1, 0], rel_rot[0, 0])
        for got, want in zip(expected[3:], (roll, pitch, yaw)):
            assert abs(wrap_angle(got - want)) < 1e-12
        assert abs(expected[3]) == pytest.approx(math.pi)
        assert expected[4] == pytest.approx(0.0, abs=1e-12)
        assert expected[5] == pytest.approx(-marker_yaw)

    def test_aruco_requires_statics(self):
        state = default_initial_state([0, 0, 10])
        m = ArucoPose(np.zeros(3), np.zeros(3), "large", np.eye(6))
        with pytest.raises(ValueError, match="statics"):
            measurement_model(state, m, None)

    def test_aruco_euler_singularity_raises(self):
        # identity mount, marker pitched to pi/2: extraction is singular
        state = default_initial_state([0.0, 0.0, 10.0])
        statics = CameraStatics(
            camera_in_drone=PoseSE3(np.zeros(3), np.zeros(3)),
            markers={"large": PoseSE3(np.zeros(3), np.array([0.0, math.pi / 2 - 1e-5, 0.0]))},
        )
        m = ArucoPose(np.zeros(3), np.zeros(3), "large", np.eye(6))
        with pytest.raises(EulerSingularityError):
            measurement_model(state, m, statics)


def _sdk(state, offset=np.zeros(6), cov=None, t=0.0) -> SdkPose:
    cov = NoiseConfig.defaults().r_sdk if cov is None else cov
    return SdkPose(
        position=state.position + offset[:3],
        euler=wrap_angle(state.euler + offset[3:]),
        covariance=cov,
        timestamp=t,
    )


class TestCorrect:
    def test_zero_innovation_keeps_mean_shrinks_cov(self, noise, statics):
        rng = np.random.default_rng(5)
        state = random_state(rng)
        result = ekf_correct(state, _sdk(state), noise, statics)
        assert result.accepted
        np.testing.assert_allclose(result.state.mean, state.mean, atol=1e-12)
        assert np.trace(result.state.covariance) < np.trace(state.covariance)

    def test_identity_gain_halves_unit_offset(self, noise, statics):
        # P = I12, R = I6, 1 m x offset: K row is 0.5
        state = FilterState(np.zeros(12), np.eye(12))
        m = SdkPose(np.array([1.0, 0.0, 0.0]), np.zeros(3), np.eye(6), timestamp=0.0)
        result = ekf_correct(state, m, noise, statics)
        assert result.accepted
        assert result.state.mean[0] == pytest.approx(0.5)
        np.testing.assert_allclose(result.state.mean[1:], np.zeros(11), atol=1e-12)

    def test_first_local_fix_latches_and_reveals_bias(self, noise, statics):
        state = default_initial_state([10.0, 5.0, 20.0])
        assert not state.bias_latched
        beta = np.array([1.0, -0.8, 0.0])
        truth = state.position - beta  # estimate carries the GPS bias
        result = ekf_correct(state, UwbPosition(truth, noise.r_uwb, 0.0), noise, statics)
        assert result.accepted
        assert result.state.bias_latched
        # position snaps to the fix; the bias picks up its covariance share
        # of the offset (position prior and bias prior are equal here -> 1/2)
        np.testing.assert_allclose(result.state.position, truth, atol=0.05)
        np.testing.assert_allclose(result.state.gps_bias, 0.5 * beta, atol=0.05)
        # a few fused rounds finish the split
        st, t = result.state, 0.0
        for _ in range(20):
            t += 0.1
            st = ekf_correct(
                st, SdkPose(truth + beta, np.zeros(3), noise.r_sdk, t), noise, statics
            ).state
            st = ekf_correct(st, UwbPosition(truth, noise.r_uwb, t), noise, statics).state
        np.testing.assert_allclose(st.gps_bias, beta, atol=0.05)

    def test_latch_is_monotone(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 5.0])
        r1 = ekf_correct(state, UwbPosition(state.position, noise.r_uwb, 0.0), noise, statics)
        assert r1.state.bias_latched
        r2 = ekf_correct(r1.state, _sdk(r1.state, t=0.1), noise, statics)
        assert r2.state.bias_latched

    def test_sdk_expectation_shifts_after_latch(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 5.0])
        r1 = ekf_correct(state, UwbPosition(state.position, noise.r_uwb, 0.0), noise, statics)
        st = r1.state
        st.mean[6:9] = [0.5, 0.0, 0.0]
        expected, _, _ = measurement_model(st, _sdk(st), statics)
        np.testing.assert_allclose(expected[:3], st.position + [0.5, 0.0, 0.0])

    def test_yaw_residual_wraps(self, noise, statics):
        state = FilterState(np.zeros(12), np.eye(12))
        state.mean[5] = -math.pi + 0.01
        m = SdkPose(np.zeros(3), np.array([0.0, 0.0, math.pi - 0.01]), np.eye(6), 0.0)
        result = ekf_correct(state, m, noise, statics)
        assert result.accepted
        # innovation is -0.02, half applied: yaw lands on -pi (wraps to +pi)
        assert abs(result.state.mean[5]) == pytest.approx(math.pi, abs=1e-9)

    def test_100_sigma_outlier_rejected_bit_identical(self, noise, statics):
        rng = np.random.default_rng(6)
        state = random_state(rng, latched=True)
        mean_before = state.mean.copy()
        cov_before = state.covariance.copy()
        offset = np.zeros(6)
        offset[0] = 100.0 * 2.0  # 100 sigma of the 4 m^2 position entry
        result = ekf_correct(state, _sdk(state, offset), noise, statics)
        assert not result.accepted
        assert result.reason == "chi2_gate"
        assert result.state is state
        np.testing.assert_array_equal(state.mean, mean_before)
        np.testing.assert_array_equal(state.covariance, cov_before)

    def test_prelatch_local_outlier_rejected(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 5.0])
        m = UwbPosition(state.position + [100.0 * 0.2, 0, 0], noise.r_uwb, 0.0)
        result = ekf_correct(state, m, noise, statics)
        assert not result.accepted
        assert not result.state.bias_latched
        np.testing.assert_array_equal(result.state.covariance, state.covariance)

    def test_aruco_height_gate(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 31.0])
        m = ArucoPose(np.array([0, 0, 31.0]), np.array([math.pi, 0, 0]), "large", noise.r_aruco, 0.0)
        result = ekf_correct(state, m, noise, statics)
        assert not result.accepted
        assert result.reason == "height_gate"
        low = default_initial_state([0.0, 0.0, 20.0])
        m2 = ArucoPose(np.array([0, 0, 20.0]), np.array([math.pi, 0, 0]), "large", noise.r_aruco, 0.0)
        assert ekf_correct(low, m2, noise, statics).accepted

    def test_stale_measurement_dropped(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 5.0])
        state.time = 10.0
        result = ekf_correct(state, _sdk(state, t=9.5), noise, statics)
        assert not result.accepted
        assert result.reason == "stale"

    def test_non_pd_measurement_covariance(self, noise, statics):
        state = default_initial_state([0.0, 0.0, 5.0])
        bad = SdkPose(state.position, state.euler, np.zeros((6, 6)), 0.0)
        with pytest.raises(ekf.FilterError):
            ekf_correct(state, bad, noise, statics)

    def test_covariance_health_over_sequences(self, noise, statics):
        rng = np.random.default_rng(7)
        state = default_initial_state([0.0, 0.0, 20.0])
        for k in range(200):
            u = InputVector(rng.uniform(-2, 2, 3), rng.uniform(-0.3, 0.3, 3))
            state = ekf_predict(state, u, 0.02, noise)
            if k % 5 == 0:
                noise_draw = rng.normal(0, 0.5, 6)
                result = ekf_correct(
                    state, _sdk(state, noise_draw, t=state.time), noise, statics
                )
                state = result.state
            if k % 7 == 0:
                m = UwbPosition(state.position + rng.normal(0, 0.1, 3), noise.r_uwb, state.time)
                state = ekf_correct(state, m, noise, statics).state
            cov = state.covariance
            np.testing.assert_allclose(cov, cov.T, atol=1e-9)
            assert np.linalg.eigvalsh(cov).min() >= -1e-9


class TestBiasObservability:
    def test_constant_gps_offset_recovered(self, noise, statics):
        """Constant GPS shift recovered by the bias states within 0.05 m."""
        beta = np.array([1.0, -0.8, 0.5])
        truth = np.array([0.0, 0.0, 5.0])
        state = default_initial_state(truth + beta)
        t = 0.0
        for _ in range(300):  # 30 s at 10 Hz
            t += 0.1
            state = ekf_predict(state, InputVector(np.zeros(3), np.zeros(3)), 0.1, noise)
            state = ekf_correct(
                state, SdkPose(truth + beta, np.zeros(3), noise.r_sdk, t), noise, statics
            ).state
            state = ekf_correct(state, UwbPosition(truth, noise.r_uwb, t), noise, statics).state
        assert np.linalg.norm(state.gps_bias - beta) < 0.05
        assert np.linalg.norm(state.position - truth) < 0.05
