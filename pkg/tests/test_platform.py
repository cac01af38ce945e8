import math

import numpy as np
import pytest

from magnav._quat import quat_conjugate, quat_from_euler, quat_multiply, rot_matrix
from magnav.errors import DegenerateFieldError, SingularSystemError
from magnav.geomag import FieldVector
from magnav.platform import (
    BodyAttitude,
    MagSensorSpec,
    TlCoefficients,
    fit_tl_batch,
    interference_vector,
    misalignment_matrix,
    scalar_perturbation,
    simulate_scalar_measurement,
    simulate_scalar_series,
    simulate_vector_measurement,
    tl_regressors,
    tl_regressors_many,
)


def random_coeffs(rng, perm=300.0, ind=0.01, eddy=0.005):
    return TlCoefficients(
        rng.normal(0, perm, 3), rng.normal(0, ind, 6), rng.normal(0, eddy, 9)
    )


class TestRegressors:
    def test_field_along_body_x(self):
        F = 48_000.0
        regs = tl_regressors([F, 0.0, 0.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(regs[0:3], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(regs[3:9], [F, 0.0, 0.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(regs[9:18], 0.0)

    def test_zero_rate_zeroes_eddy_block(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            B = rng.normal(0, 30_000, 3)
            if np.linalg.norm(B) < 2000:
                continue
            regs = tl_regressors(B, np.zeros(3))
            np.testing.assert_array_equal(regs[9:18], 0.0)

    def test_matches_explicit_matrix_arithmetic(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            B = rng.normal(0, 30_000, 3)
            if np.linalg.norm(B) < 2_000:
                continue
            Bdot = rng.normal(0, 500, 3)
            c = random_coeffs(rng)
            predicted = scalar_perturbation(c, tl_regressors(B, Bdot))
            b_hat = B / np.linalg.norm(B)
            direct = float(b_hat @ interference_vector(c, B, Bdot))
            assert predicted == pytest.approx(direct, abs=1e-9)

    def test_degenerate_field_rejected(self):
        with pytest.raises(DegenerateFieldError):
            tl_regressors([100.0, 0.0, 0.0], [0.0, 0.0, 0.0])

    def test_frame_consistency_under_world_rotation(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            q_n2b = quat_from_euler(*rng.uniform(-0.5, 0.5, 3))
            q_world = quat_from_euler(*rng.uniform(-np.pi / 3, np.pi / 3, 3))
            B_ned = rng.normal(0, 30_000, 3)
            if np.linalg.norm(B_ned) < 2_000:
                continue
            rate_body = rng.normal(0, 300, 3)

            att = BodyAttitude(q_n2b)
            regs = tl_regressors(att.to_body(B_ned), rate_body)

            B_rot = rot_matrix(q_world) @ B_ned
            att_rot = BodyAttitude(quat_multiply(q_n2b, quat_conjugate(q_world)))
            regs_rot = tl_regressors(att_rot.to_body(B_rot), rate_body)
            np.testing.assert_allclose(regs, regs_rot, atol=1e-9)

    def test_many_matches_single(self):
        rng = np.random.default_rng(3)
        B = rng.normal(0, 30_000, (5, 3)) + np.array([40_000.0, 0, 0])
        Bdot = rng.normal(0, 100, (5, 3))
        many = tl_regressors_many(B, Bdot)
        for k in range(5):
            np.testing.assert_allclose(many[k], tl_regressors(B[k], Bdot[k]))


class TestPerturbation:
    def test_zero_coefficients(self):
        regs = tl_regressors([50_000.0, 0, 0], [0, 0, 0])
        assert scalar_perturbation(TlCoefficients.zero(), regs) == 0.0

    def test_aligned_permanent_moment(self):
        c = TlCoefficients([10.0, 0, 0], np.zeros(6), np.zeros(9))
        regs = tl_regressors([50_000.0, 0, 0], [0, 0, 0])
        assert scalar_perturbation(c, regs) == pytest.approx(10.0)

    def test_isotropic_induced_term(self):
        k = 0.004
        c = TlCoefficients(np.zeros(3), [k, 0, 0, k, 0, k], np.zeros(9))
        rng = np.random.default_rng(4)
        for _ in range(10):
            B = rng.normal(0, 30_000, 3) + np.array([35_000.0, 0, 0])
            regs = tl_regressors(B, np.zeros(3))
            assert scalar_perturbation(c, regs) == pytest.approx(
                k * np.linalg.norm(B), rel=1e-12
            )

    def test_linearity_exact(self):
        rng = np.random.default_rng(5)
        c1 = random_coeffs(rng)
        c2 = random_coeffs(rng)
        a, b = 2.5, -1.25
        combined = TlCoefficients.from_vector(a * c1.as_vector() + b * c2.as_vector())
        regs = tl_regressors(rng.normal(0, 30_000, 3) + [40_000, 0, 0], rng.normal(0, 200, 3))
        combined_out = scalar_perturbation(combined, regs)
        split_out = a * scalar_perturbation(c1, regs) + b * scalar_perturbation(c2, regs)
        # linear to within floating-point summation order
        assert combined_out == pytest.approx(split_out, rel=1e-12)

    def test_first_order_projection_accuracy(self):
        # The exact |B + d| - |B| differs from the projection by at most
        # |d_perp|^2 / (2 (|B| - |d|)); at |d| <= 1000, |B| >= 25,000 that is
        # below 0.1% of |B|, and below 0.01% for |d| <= 300 (the residual
        # interference scale once the bulk has been compensated).
        rng = np.random.default_rng(6)
        worst_large, worst_small = 0.0, 0.0
        for _ in range(500):
            B = rng.normal(0, 1, 3)
            B *= rng.uniform(25_000, 65_000) / np.linalg.norm(B)
            d = rng.normal(0, 1, 3)
            d_large = d * rng.uniform(0, 1000.0) / np.linalg.norm(d)
            d_small = d * rng.uniform(0, 300.0) / np.linalg.norm(d)
            mag = np.linalg.norm(B)
            b_hat = B / mag
            for dv, label in ((d_large, "large"), (d_small, "small")):
                exact = np.linalg.norm(B + dv) - mag
                approx = float(b_hat @ dv)
                rel = abs(exact - approx) / mag
                if label == "large":
                    worst_large = max(worst_large, rel)
                else:
                    worst_small = max(worst_small, rel)
        assert worst_large < 1e-3
        assert worst_small < 1e-4


class TestAttitude:
    def test_from_euler_heading(self):
        att = BodyAttitude.from_euler(0.0, 0.0, math.pi / 2)
        assert att.heading == pytest.approx(math.pi / 2)
        # body x axis points east
        np.testing.assert_allclose(att.to_ned([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_to_body_round_trip(self):
        rng = np.random.default_rng(7)
        att = BodyAttitude.from_euler(0.2, -0.1, 1.3)
        v = rng.normal(size=3)
        np.testing.assert_allclose(att.to_ned(att.to_body(v)), v, atol=1e-12)

    def test_non_unit_quaternion_rejected(self):
        with pytest.raises(ValueError):
            BodyAttitude([1.0, 1.0, 0.0, 0.0])


CLEAN_SPEC = MagSensorSpec(noise_density=0.0, bandwidth=250.0, sample_rate=250.0)
QCTRL_SPEC = MagSensorSpec(noise_density=8.0e-5, bandwidth=250.0, sample_rate=250.0)


class TestScalarSimulation:
    def test_clean_sensor_returns_truth_magnitude(self):
        field = FieldVector(20_000.0, 1_000.0, 45_000.0)
        att = BodyAttitude.from_euler(0.1, 0.05, 0.7)
        rng = np.random.default_rng(8)
        out = simulate_scalar_measurement(
            field, att, np.zeros(3), TlCoefficients.zero(), CLEAN_SPEC, 0.0, rng
        )
        assert out == pytest.approx(field.magnitude(), abs=1e-9)

    def test_intrinsic_noise_rms(self):
        # 80 fT/sqrt(Hz) at 250 Hz bandwidth -> about 1.26e-3 nT RMS
        field = FieldVector(20_000.0, 0.0, 45_000.0)
        att = BodyAttitude.from_euler(0.0, 0.0, 0.0)
        rng = np.random.default_rng(9)
        clean = field.magnitude()
        draws = np.array(
            [
                simulate_scalar_measurement(
                    field, att, np.zeros(3), TlCoefficients.zero(), QCTRL_SPEC, 0.0, rng
                )
                - clean
                for _ in range(10_000)
            ]
        )
        rms = np.sqrt(np.mean(draws**2))
        expected = 8.0e-5 * math.sqrt(250.0)
        assert rms == pytest.approx(expected, rel=0.05)

    def test_onboard_thirteen_times_outboard(self):
        field = FieldVector(20_000.0, 0.0, 45_000.0)
        att = BodyAttitude.from_euler(0.0, 0.0, 0.3)
        outboard = MagSensorSpec(8.0e-5, 250.0, 250.0, extra_noise_rms=1.0)
        onboard = MagSensorSpec(
            8.0e-5, 250.0, 250.0, extra_noise_rms=13.0 * outboard.total_noise_rms()
        )
        clean = field.magnitude()

        def rms_of(spec, seed):
            rng = np.random.default_rng(seed)
            d = np.array(
                [
                    simulate_scalar_measurement(
                        field, att, np.zeros(3), TlCoefficients.zero(), spec, 0.0, rng
                    )
                    - clean
                    for _ in range(10_000)
                ]
            )
            return np.sqrt(np.mean(d**2))

        ratio = rms_of(onboard, 10) / rms_of(outboard, 11)
        assert abs(ratio - 13.0) < 1.0

    def test_heading_error_term(self):
        spec = MagSensorSpec(0.0, 250.0, 250.0, heading_error_amplitude=5.0)
        field = FieldVector(20_000.0, 0.0, 45_000.0)
        rng = np.random.default_rng(12)
        for yaw in (0.0, math.pi / 4, 1.1):
            att = BodyAttitude.from_euler(0.0, 0.0, yaw)
            out = simulate_scalar_measurement(
                field, att, np.zeros(3), TlCoefficients.zero(), spec, 0.0, rng
            )
            assert out - field.magnitude() == pytest.approx(
                5.0 * math.sin(2 * yaw), abs=1e-9
            )

    def test_temporal_added(self):
        field = FieldVector(20_000.0, 0.0, 45_000.0)
        att = BodyAttitude.from_euler(0.0, 0.0, 0.0)
        rng = np.random.default_rng(13)
        out = simulate_scalar_measurement(
            field, att, np.zeros(3), TlCoefficients.zero(), CLEAN_SPEC, 77.0, rng
        )
        assert out == pytest.approx(field.magnitude() + 77.0, abs=1e-9)

    def test_exact_contamination_mode(self):
        rng = np.random.default_rng(14)
        field = FieldVector(20_000.0, 3_000.0, 45_000.0)
        att = BodyAttitude.from_euler(0.1, 0.0, 0.4)
        c = random_coeffs(rng)
        exact = simulate_scalar_measurement(
            field, att, np.zeros(3), c, CLEAN_SPEC, 0.0,
            np.random.default_rng(0), exact_contamination=True,
        )
        b_body = att.to_body(field.as_array())
        expected = np.linalg.norm(b_body + interference_vector(c, b_body, np.zeros(3)))
        assert exact == pytest.approx(float(expected), abs=1e-9)

    def test_series_matches_formula_when_clean(self):
        rng = np.random.default_rng(15)
        n = 50
        field_ned = np.tile([25_000.0, 2_000.0, 40_000.0], (n, 1))
        yaws = np.linspace(0, 2 * np.pi, n)
        q = np.array([quat_from_euler(0.0, 0.0, y) for y in yaws])
        c = random_coeffs(rng)
        out = simulate_scalar_series(
            field_ned, q, c, CLEAN_SPEC, np.zeros(n), 0.1, np.random.default_rng(0)
        )
        att0 = BodyAttitude(quat_conjugate(q[0]))
        first = simulate_scalar_measurement(
            FieldVector(*field_ned[0]), att0, np.zeros(3), c, CLEAN_SPEC, 0.0,
            np.random.default_rng(0),
        )
        assert out[0] == pytest.approx(first, abs=1e-9)


class TestVectorSimulation:
    def test_exact_rotation_when_clean(self):
        field = FieldVector(20_000.0, 3_000.0, 45_000.0)
        att = BodyAttitude.from_euler(0.2, -0.1, 0.9)
        out = simulate_vector_measurement(field, att, CLEAN_SPEC, np.random.default_rng(0))
        np.testing.assert_allclose(out, att.to_body(field.as_array()), atol=1e-9)

    def test_misalignment_is_extra_rotation(self):
        field = FieldVector(20_000.0, 3_000.0, 45_000.0)
        att = BodyAttitude.from_euler(0.0, 0.0, 0.5)
        spec = MagSensorSpec(0.0, 250.0, 250.0, misalignment=(0.01, 0.0, 0.0))
        out = simulate_vector_measurement(field, att, spec, np.random.default_rng(0))
        expected = misalignment_matrix((0.01, 0.0, 0.0)) @ att.to_body(field.as_array())
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_seeded_determinism(self):
        field = FieldVector(20_000.0, 3_000.0, 45_000.0)
        att = BodyAttitude.from_euler(0.0, 0.0, 0.5)
        a = simulate_vector_measurement(field, att, QCTRL_SPEC, np.random.default_rng(42))
        b = simulate_vector_measurement(field, att, QCTRL_SPEC, np.random.default_rng(42))
        c = simulate_vector_measurement(field, att, QCTRL_SPEC, np.random.default_rng(43))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


def attitude_rich_regressors(n=400, seed=16, vary_magnitude=True):
    """Regressor matrix from a synthetic maneuvering attitude history."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 0.1
    yaw = 2 * np.pi * t / t[-1] + 0.3 * np.sin(2 * np.pi * t / 40.0)
    roll = 0.3 * np.sin(2 * np.pi * t / 25.0)
    pitch = 0.1 * np.sin(2 * np.pi * t / 31.0)
    mag = 48_000.0 + (4_000.0 * np.sin(2 * np.pi * t / 70.0) if vary_magnitude else 0.0)
    field_ned = np.column_stack(
        [18_000.0 * np.ones(n), 1_000.0 * np.ones(n), np.sqrt(mag**2 - 18_000.0**2 - 1_000.0**2)]
    )
    q = np.array([quat_from_euler(r, p, y) for r, p, y in zip(roll, pitch, yaw)])
    from magnav._quat import rotate_to_body_many

    b_body = rotate_to_body_many(q, field_ned)
    rate = np.zeros_like(b_body)
    rate[1:] = np.diff(b_body, axis=0) / 0.1
    return tl_regressors_many(b_body, rate)


class TestBatchFit:
    def test_noiseless_recovery_predicts_truth(self):
        regs = attitude_rich_regressors()
        rng = np.random.default_rng(17)
        truth = random_coeffs(rng)
        y = regs @ truth.as_vector()
        fitted, rms = fit_tl_batch(regs, y)
        prediction = regs @ fitted.as_vector()
        assert np.sqrt(np.mean((prediction - y) ** 2)) < 1e-6
        assert rms < 1e-6

    def test_straight_and_level_is_rank_deficient(self):
        n = 100
        regs = np.tile(tl_regressors([48_000.0, 500.0, 20_000.0], np.zeros(3)), (n, 1))
        y = np.ones(n)
        with pytest.raises(SingularSystemError):
            fit_tl_batch(regs, y, ridge=0.0)
        fitted, _ = fit_tl_batch(regs, y, ridge=1e-3)
        assert np.all(np.isfinite(fitted.as_vector()))

    def test_too_few_samples(self):
        regs = attitude_rich_regressors(n=10)
        with pytest.raises(ValueError, match="at least 18"):
            fit_tl_batch(regs, np.zeros(10))


class TestSerialization:
    def test_json_round_trip(self):
        rng = np.random.default_rng(18)
        c = random_coeffs(rng)
        again = TlCoefficients.from_json_dict(c.to_json_dict())
        np.testing.assert_array_equal(again.as_vector(), c.as_vector())

    def test_schema_version_checked(self):
        with pytest.raises(ValueError, match="schema"):
            TlCoefficients.from_json_dict({"schema_version": 99, "coefficients": [0] * 18})

    def test_vector_round_trip_order(self):
        v = np.arange(18.0)
        c = TlCoefficients.from_vector(v)
        np.testing.assert_array_equal(c.permanent, [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(c.induced, [3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        np.testing.assert_array_equal(c.eddy, np.arange(9.0, 18.0))
        np.testing.assert_array_equal(c.as_vector(), v)
