import math

import numpy as np
from django.test import SimpleTestCase

from apps.core.domain import (
    GRAVITY,
    EulerAngles,
    ImuSample,
    NormalizationSpec,
    Quaternion,
    Sequence,
    accel_to_angles,
    euler_to_quat,
    euler_to_quat_array,
    gravity_direction_body,
    hamilton,
    normalize,
    quat_to_euler,
    rotate_to_body,
    tilt_from_accel,
    wrap_angle,
)
from apps.core.exceptions import NonFiniteInputError, UnobservableError

from .factories import hold_sequence


class AngleTest(SimpleTestCase):
    def test_wrap_angle_range(self):
        self.assertEqual(wrap_angle(math.pi), math.pi)
        self.assertEqual(wrap_angle(-math.pi), math.pi)
        self.assertAlmostEqual(wrap_angle(2 * math.pi + 0.5), 0.5)
        wrapped = wrap_angle(np.linspace(-10, 10, 101))
        self.assertTrue(np.all(wrapped > -math.pi))
        self.assertTrue(np.all(wrapped <= math.pi))

    def test_euler_angles_validation(self):
        with self.assertRaises(ValueError):
            EulerAngles(pitch=-math.pi, roll=0.0)
        with self.assertRaises(ValueError):
            EulerAngles(pitch=float("nan"), roll=0.0)
        angles = EulerAngles.from_degrees(10.0, -20.0)
        pitch, roll = angles.degrees()
        self.assertAlmostEqual(pitch, 10.0)
        self.assertAlmostEqual(roll, -20.0)


class QuaternionTest(SimpleTestCase):
    def test_identity_gravity_points_down_body_z(self):
        np.testing.assert_allclose(gravity_direction_body(Quaternion.identity().as_array()), [0, 0, 1])

    def test_gravity_direction_matches_rotation(self):
        q = euler_to_quat_array(0.3, -0.4, 1.1)
        np.testing.assert_allclose(gravity_direction_body(q), rotate_to_body([0, 0, 1], q), atol=1e-12)

    def test_euler_round_trip(self):
        for pitch, roll in [(0.2, -0.7), (-1.2, 2.5), (0.0, math.pi)]:
            angles = EulerAngles(pitch, roll)
            back = quat_to_euler(euler_to_quat(angles, yaw=0.8))
            self.assertAlmostEqual(back.pitch, pitch, places=9)
            self.assertAlmostEqual(abs(wrap_angle(back.roll - roll)), 0.0, places=9)

    def test_hamilton(self):
        i = Quaternion(0.0, 1.0, 0.0, 0.0)
        np.testing.assert_array_equal(hamilton(i, i).as_array(), [-1.0, 0.0, 0.0, 0.0])
        q = Quaternion(0.5, -0.1, 0.7, 0.2)
        np.testing.assert_array_equal(hamilton(Quaternion.identity(), q).as_array(), q.as_array())

        rng = np.random.default_rng(0)
        for _ in range(100):
            (a0, a1, a2, a3), (b0, b1, b2, b3) = rng.standard_normal((2, 4))
            expected = [
                a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
                a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
                a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
                a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
            ]
            product = hamilton(Quaternion(a0, a1, a2, a3), Quaternion(b0, b1, b2, b3))
            np.testing.assert_allclose(product.as_array(), expected, atol=1e-12)

    def test_quat_to_euler_needs_unit_norm(self):
        with self.assertRaises(ValueError):
            quat_to_euler(Quaternion(2.0, 0.0, 0.0, 0.0))

    def test_normalized(self):
        self.assertAlmostEqual(Quaternion(1.0, 1.0, 1.0, 1.0).normalized().norm, 1.0)
        with self.assertRaises(ValueError):
            Quaternion(0.0, 0.0, 0.0, 0.0).normalized()


class TiltTest(SimpleTestCase):
    def test_level_reads_zero(self):
        angles = accel_to_angles([0.0, 0.0, GRAVITY])
        self.assertEqual((angles.pitch, angles.roll), (0.0, 0.0))

    def test_recovers_static_tilt(self):
        for pitch, roll in [(0.5, 0.0), (0.0, -0.6), (-0.3, 1.2)]:
            accel = GRAVITY * gravity_direction_body(euler_to_quat_array(pitch, roll))
            angles = accel_to_angles(accel)
            self.assertAlmostEqual(angles.pitch, pitch, places=12)
            self.assertAlmostEqual(angles.roll, roll, places=12)

    def test_free_fall_is_unobservable(self):
        with self.assertRaises(UnobservableError):
            accel_to_angles([0.0, 0.01, 0.0])
        _, observable = tilt_from_accel(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, GRAVITY]]))
        self.assertEqual(observable.tolist(), [False, True])


class SequenceTest(SimpleTestCase):
    def test_rejects_non_increasing_time(self):
        seq = hold_sequence(steps=3)
        with self.assertRaises(ValueError):
            Sequence(t=[0.0, 0.01, 0.01], gyro=seq.gyro, accel=seq.accel, truth=seq.truth)

    def test_rejects_non_finite_imu(self):
        seq = hold_sequence(steps=3)
        accel = seq.accel.copy()
        accel[1, 2] = np.inf
        with self.assertRaises(NonFiniteInputError) as ctx:
            Sequence(t=seq.t, gyro=seq.gyro, accel=accel, truth=seq.truth)
        self.assertEqual(ctx.exception.channel, 5)

    def test_windows_drop_tail(self):
        windows = hold_sequence(steps=25, name="s").windows(10)
        self.assertEqual([len(w) for w in windows], [10, 10])
        self.assertEqual([w.name for w in windows], ["s#0", "s#1"])

    def test_samples_round_trip(self):
        seq = hold_sequence(pitch=0.1, steps=4)
        rebuilt = Sequence.from_samples(seq.samples, seq.truth_angles, dt=seq.dt)
        np.testing.assert_array_equal(rebuilt.imu, seq.imu)


class NormalizationTest(SimpleTestCase):
    def test_full_scale_maps_to_unit_range(self):
        spec = NormalizationSpec.full_scale()
        np.testing.assert_allclose(spec.apply(spec.x_min), -np.ones(6))
        np.testing.assert_allclose(spec.apply(spec.x_max), np.ones(6))
        np.testing.assert_allclose(spec.apply(np.zeros(6)), np.zeros(6), atol=1e-15)

    def test_rejects_empty_range(self):
        with self.assertRaises(ValueError):
            NormalizationSpec(x_min=np.zeros(6), x_max=np.zeros(6))

    def test_fit_covers_data(self):
        seq = hold_sequence(pitch=0.4, steps=5)
        spec = NormalizationSpec.fit([seq])
        scaled = spec.apply(seq.imu)
        self.assertTrue(np.all(np.abs(scaled) < 1.0))

    def test_normalize_sample(self):
        sample = ImuSample(0.0, (0.0, 0.0, 0.0), (0.0, 0.0, GRAVITY))
        values = normalize(sample, NormalizationSpec.full_scale())
        self.assertAlmostEqual(values[5], GRAVITY / 156.9)
