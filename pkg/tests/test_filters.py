import math

import numpy as np
from django.test import SimpleTestCase

from apps.core.domain import GRAVITY, EulerAngles, ImuSample, Quaternion, quat_to_euler
from apps.core.exceptions import ConfigurationError
from apps.filters.algorithms import (
    COVARIANCE_INFLATION,
    ComplementaryParams,
    EkfParams,
    EkfState,
    MadgwickParams,
    MahonyParams,
    MahonyState,
    adaptive_gamma,
    complementary_step,
    default_params,
    ekf_step,
    ekf_update,
    get_filter,
    integrate_gyro_euler,
    integrate_gyro_quaternion,
    madgwick_step,
    mahony_step,
    mahony_update,
    run_filter,
    run_single,
)

from .factories import hold_sequence, random_sequence


class ParamsTest(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            ComplementaryParams(gamma=1.3)
        with self.assertRaises(ConfigurationError):
            MahonyParams(k_p=-1.0)
        with self.assertRaises(ConfigurationError):
            MadgwickParams(beta=-0.1)
        with self.assertRaises(ConfigurationError):
            EkfParams(r_meas=0.0)

    def test_unknown_filter(self):
        with self.assertRaises(ConfigurationError):
            get_filter("kalman")

    def test_defaults(self):
        self.assertEqual(default_params("complementary").gamma, 0.98)
        self.assertEqual(default_params("ekf"), EkfParams())


class DegenerateFilterTest(SimpleTestCase):
    """With their corrections switched off the filters reduce to plain gyro integration."""

    def setUp(self):
        self.seq = random_sequence(seed=3, steps=300)

    def test_complementary_gamma_one(self):
        trace = run_single("complementary", ComplementaryParams(gamma=1.0), self.seq)
        np.testing.assert_allclose(trace, integrate_gyro_euler(self.seq.gyro, self.seq.dt), atol=1e-9)

    def test_mahony_without_gains(self):
        trace = run_single("mahony", MahonyParams(k_p=0.0, k_i=0.0), self.seq)
        np.testing.assert_allclose(trace, integrate_gyro_quaternion(self.seq.gyro, self.seq.dt), atol=1e-9)

    def test_madgwick_beta_zero(self):
        trace = run_single("madgwick", MadgwickParams(beta=0.0), self.seq)
        np.testing.assert_allclose(trace, integrate_gyro_quaternion(self.seq.gyro, self.seq.dt), atol=1e-9)

    def test_complementary_gamma_zero_follows_accel(self):
        seq = hold_sequence(pitch=0.3, roll=-0.2, steps=10)
        trace = run_single("complementary", ComplementaryParams(gamma=0.0), seq)
        np.testing.assert_allclose(trace, seq.truth, atol=1e-12)

    def test_ekf_huge_measurement_noise(self):
        trace = run_single("ekf", EkfParams(r_meas=1e12), self.seq)
        np.testing.assert_allclose(trace, integrate_gyro_quaternion(self.seq.gyro, self.seq.dt), atol=1e-8)


class ComplementaryTest(SimpleTestCase):
    def test_geometric_convergence(self):
        pitch, gamma = math.radians(20.0), 0.98
        seq = hold_sequence(pitch=pitch, steps=200)
        trace = run_single("complementary", ComplementaryParams(gamma=gamma), seq)
        expected = pitch * (1.0 - gamma ** np.arange(1, 201))
        np.testing.assert_allclose(trace[:, 0], expected, atol=1e-9)

    def test_adaptive_converges_faster_when_still(self):
        seq = hold_sequence(pitch=math.radians(20.0), steps=50)
        plain = run_single("complementary", ComplementaryParams(gamma=0.98), seq)
        adaptive = run_single("complementary", ComplementaryParams(gamma=0.98, adaptive=True), seq)
        self.assertLess(abs(adaptive[-1, 0] - seq.truth[-1, 0]), abs(plain[-1, 0] - seq.truth[-1, 0]))

    def test_adaptive_gain_counts_degrees(self):
        estimate = np.radians([10.0, 0.0])
        still = adaptive_gamma(0.98, estimate, np.zeros(2), np.zeros(3), 0.01, 0.1)
        np.testing.assert_allclose(still, [0.88, 0.98])
        moving = adaptive_gamma(0.98, estimate, np.zeros(2), np.array([0.2, 0.0, 0.0]), 0.01, 0.1)
        np.testing.assert_allclose(moving, [0.98, 0.98])

    def test_unobservable_accel_propagates_gyro(self):
        sample = ImuSample(0.0, (0.1, 0.2, 0.0), (0.0, 0.0, 0.0))
        state = complementary_step(EulerAngles(0.0, 0.0), ComplementaryParams(gamma=0.5), sample, 0.01)
        self.assertAlmostEqual(state.pitch, 0.002)
        self.assertAlmostEqual(state.roll, 0.001)

    def test_step_rejects_non_positive_dt(self):
        sample = ImuSample(0.0, (0.0, 0.0, 0.0), (0.0, 0.0, GRAVITY))
        with self.assertRaises(ValueError):
            complementary_step(EulerAngles(0.0, 0.0), ComplementaryParams(), sample, 0.0)

    def test_batch_cannot_mix_adaptive(self):
        with self.assertRaises(ConfigurationError):
            run_filter(
                "complementary",
                [ComplementaryParams(), ComplementaryParams(adaptive=True)],
                [hold_sequence(steps=3)],
            )


class BatchedRunTest(SimpleTestCase):
    def test_batch_matches_single_runs(self):
        params = [MahonyParams(1.0, 0.1), MahonyParams(3.0, 0.5)]
        sequences = [random_sequence(seed=1, steps=40), random_sequence(seed=2, steps=40), random_sequence(seed=3, steps=25)]
        traces = run_filter("mahony", params, sequences)
        self.assertEqual([t.shape for t in traces], [(2, 40, 2), (2, 40, 2), (2, 25, 2)])
        for s, seq in enumerate(sequences):
            for p, param in enumerate(params):
                np.testing.assert_allclose(traces[s][p], run_single("mahony", param, seq), atol=1e-12)

    def test_known_initial_state(self):
        seq = hold_sequence(pitch=0.4, roll=0.1, steps=20)
        for kind in ("complementary", "mahony", "madgwick", "ekf"):
            trace = run_single(kind, default_params(kind), seq, known_initial=True)
            np.testing.assert_allclose(trace, seq.truth, atol=1e-9, err_msg=kind)


class MahonyTest(SimpleTestCase):
    def test_bias_converges(self):
        true_bias = np.array([0.02, -0.01, 0.0])
        seq = hold_sequence(steps=6000, gyro_bias=true_bias)
        q, bias = np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3)
        for gyro, accel in zip(seq.gyro, seq.accel):
            q, bias = mahony_update(q, bias, gyro, accel, seq.dt, 2.0, 1.0)
        np.testing.assert_allclose(bias[:2], true_bias[:2], atol=1e-3)
        self.assertAlmostEqual(np.linalg.norm(q), 1.0, places=12)

    def test_step_matches_batched_run(self):
        seq = random_sequence(seed=4, steps=30)
        params = MahonyParams(k_p=1.5, k_i=0.2)
        state = MahonyState(Quaternion.identity())
        for sample in seq.samples:
            state = mahony_step(state, params, sample, seq.dt)
        expected = run_single("mahony", params, seq)[-1]
        np.testing.assert_allclose(quat_to_euler(state.q).as_array(), expected, atol=1e-12)


class MadgwickTest(SimpleTestCase):
    def test_error_shrinks_monotonically(self):
        pitch = math.radians(20.0)
        seq = hold_sequence(pitch=pitch, steps=2000)
        q, errors = Quaternion.identity(), []
        for sample in seq.samples:
            q = madgwick_step(q, MadgwickParams(beta=0.1), sample, seq.dt)
            self.assertAlmostEqual(q.norm, 1.0, places=12)
            errors.append(abs(quat_to_euler(q).pitch - pitch))
        self.assertTrue(np.all(np.diff(errors[:300]) < 0))
        self.assertLess(errors[-1], 0.01)


class EkfTest(SimpleTestCase):
    def test_covariance_stays_symmetric_psd(self):
        seq = random_sequence(seed=5, steps=400)
        state = EkfState.initial()
        for sample in seq.samples:
            state = ekf_step(state, EkfParams(), sample, seq.dt)
            np.testing.assert_allclose(state.P, state.P.T, atol=1e-12)
            self.assertGreaterEqual(np.linalg.eigvalsh(state.P).min(), -1e-12)
            self.assertAlmostEqual(state.q.norm, 1.0, places=12)

    def test_converges_from_level(self):
        seq = hold_sequence(pitch=0.3, roll=-0.2, steps=2000)
        trace = run_single("ekf", EkfParams(), seq)
        np.testing.assert_allclose(trace[-1], seq.truth[-1], atol=1e-2)

    def test_ill_conditioned_innovation_skips_update(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        P = np.diag([1e15, 0.5, 0.5, 0.5])
        accel = hold_sequence(pitch=0.3, steps=1).accel[0]
        q_new, P_new = ekf_update(q, P, np.zeros(3), accel, 0.005, 0.0, 1e-3)
        np.testing.assert_array_equal(q_new, q)
        np.testing.assert_allclose(P_new, COVARIANCE_INFLATION * P)
