import math
from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from apps.core.domain import GRAVITY, NormalizationSpec
from apps.core.exceptions import ConfigurationError, InsufficientDataError
from apps.datasets.simulator import SensorModel, offset_hold_sequence
from apps.evaluation.estimators import FilterEstimator, SnnEstimator, estimator_kinds, load_estimator
from apps.evaluation.experiments import (
    SpikeActivityReport,
    ablation_sweep,
    benchmark_estimators,
    evaluate,
    fold_table,
    group_by_source,
    initial_offset_study,
    input_manipulation,
    kfold_partitions,
    kfold_protocol,
    manipulate_imu,
    spike_activity,
)
from apps.evaluation.metrics import (
    EvalReport,
    angle_error_stats,
    comparison_table,
    flop_count,
    pooled_mean,
    time_to_threshold,
)
from apps.filters.algorithms import ComplementaryParams
from apps.snn.runtime import NetworkParams

from .factories import random_sequence


def report(mean, estimator="comp", partition="test", samples=10, known_initial=False):
    return EvalReport(estimator, f"s{mean}", mean, mean, 0.0, samples, known_initial, partition)


class ErrorStatsTest(SimpleTestCase):
    def test_pitch_offset_pools_with_roll(self):
        truth = np.zeros((100, 2))
        estimates = truth.copy()
        estimates[:, 0] = math.radians(1.0)
        stats = angle_error_stats(estimates, truth)
        self.assertAlmostEqual(stats.mean, 0.5)
        self.assertAlmostEqual(stats.median, 0.5)
        self.assertAlmostEqual(stats.std, 0.5)
        self.assertEqual(stats.samples, 100)

    def test_error_wraps(self):
        stats = angle_error_stats([[math.pi - 0.01, 0.0]], [[-math.pi + 0.01, 0.0]])
        self.assertAlmostEqual(stats.mean, math.degrees(0.02) / 2)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            angle_error_stats(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_comparison_table(self):
        reports = [report(1.0), report(3.0), report(2.0, partition="train"), report(0.5, known_initial=True)]
        table = comparison_table(reports).set_index(["estimator", "initial"])
        row = table.loc[("comp", "unknown")]
        self.assertEqual((row["test_median"], row["test_mean"], row["test_sd"]), (2.0, 2.0, 1.0))
        self.assertEqual(row["train_mean"], 2.0)
        self.assertEqual(table.loc[("comp", "known")]["test_mean"], 0.5)

    def test_pooled_mean_weights_samples(self):
        self.assertAlmostEqual(pooled_mean([report(1.0, samples=30), report(3.0, samples=10)]), 1.5)


class TimeToThresholdTest(SimpleTestCase):
    def setUp(self):
        self.truth = np.zeros((4, 2))

    def trace(self, pitch_deg):
        estimates = np.zeros((4, 2))
        estimates[:, 0] = np.radians(pitch_deg)
        return estimates

    def test_settles(self):
        self.assertAlmostEqual(time_to_threshold(self.trace([5, 3, 0.5, 0.2]), self.truth, 0.1), 0.2)

    def test_always_below(self):
        self.assertEqual(time_to_threshold(self.trace([0.1, 0.1, 0.1, 0.1]), self.truth, 0.1), 0.0)

    def test_never_settles(self):
        self.assertIsNone(time_to_threshold(self.trace([5, 0.1, 0.1, 2]), self.truth, 0.1))


class FlopCountTest(SimpleTestCase):
    def test_counts(self):
        self.assertEqual(flop_count("snn", 100, 100), 20200)
        self.assertEqual(flop_count("gru", 100, 100), 60300)
        self.assertAlmostEqual(flop_count("gru", 100, 100) / flop_count("snn", 100, 100), 3.0, places=1)
        self.assertEqual(flop_count("snn", 1, 0), 3)

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            flop_count("snn", 0, 10)
        with self.assertRaises(ConfigurationError):
            flop_count("lstm", 10, 10)


class KfoldTest(SimpleTestCase):
    def setUp(self):
        self.sequences = [random_sequence(seed=s, steps=20, source="A", name=f"a{s}") for s in range(10)]
        self.sequences += [random_sequence(seed=s, steps=20, source="B", name=f"b{s}") for s in range(10)]

    def test_partitions(self):
        folds = kfold_partitions(group_by_source(self.sequences), k=3, seed=1)
        self.assertEqual([f[0] for f in folds], ["fold1", "fold2", "fold3", "A->B", "B->A"])
        for name, train, val, test in folds[:3]:
            names = [s.name for s in train + val + test]
            self.assertEqual(sorted(names), sorted(s.name for s in self.sequences))
        _, train, val, test = folds[3]
        self.assertTrue(all(s.source == "A" for s in train + val))
        self.assertEqual([s.name for s in test], [f"b{s}" for s in range(10)])
        self.assertNotEqual([s.name for s in folds[0][1]], [s.name for s in folds[1][1]])

    def test_cross_source_needs_two_sources(self):
        with self.assertRaises(InsufficientDataError):
            kfold_partitions(group_by_source(self.sequences[:10]), k=2)
        self.assertEqual(len(kfold_partitions(group_by_source(self.sequences[:10]), k=2, cross_source=False)), 2)

    def test_protocol(self):
        def fitter(train_set, val_set, seed):
            return FilterEstimator("complementary", ComplementaryParams(gamma=0.9))

        folds = kfold_protocol(self.sequences, fitter, k=2, seed=0)
        table = fold_table(folds)
        self.assertEqual(list(table["fold"]), ["fold1", "fold2", "A->B", "B->A"])
        self.assertEqual(list(table.columns[-4:]), ["train_mean", "train_sd", "test_mean", "test_sd"])
        self.assertEqual(len(folds[2].test_reports), 10)


class OffsetStudyTest(SimpleTestCase):
    def test_complementary_settles(self):
        sequence = offset_hold_sequence(pitch=math.radians(20.0), duration=2.0, model=SensorModel.noiseless())
        estimators = [
            FilterEstimator("complementary", ComplementaryParams(gamma=0.98)),
            FilterEstimator("complementary", ComplementaryParams(gamma=0.98), known_initial=True, name="known"),
        ]
        traces = initial_offset_study(estimators, sequence, threshold_deg=1.0)
        self.assertAlmostEqual(traces[0].time_to_threshold, 0.74)
        self.assertEqual(traces[1].time_to_threshold, 0.0)
        self.assertAlmostEqual(traces[0].pitch_error_deg[0], 20.0 * 0.98, places=6)


class SpikeActivityTest(SimpleTestCase):
    def setUp(self):
        spec = NormalizationSpec(x_min=-np.ones(6) * 2, x_max=np.ones(6) * 2)
        self.params = NetworkParams.initialize(8, 6, seed=1, normalization=spec)
        self.calibration = [random_sequence(seed=s, steps=60, name=f"cal{s}") for s in range(2)]
        self.evaluation = [random_sequence(seed=s, steps=60, name=f"ev{s}") for s in range(2, 4)]

    def test_merge_weights_by_steps(self):
        a = SpikeActivityReport(np.array([0.0, 1.0]), np.array([0.2]), 10)
        b = SpikeActivityReport(np.array([1.0, 1.0]), np.array([0.6]), 30)
        merged = a.merge(b)
        np.testing.assert_allclose(merged.enc_rates, [0.75, 1.0])
        np.testing.assert_allclose(merged.hid_rates, [0.5])
        self.assertEqual(merged.n_steps, 40)
        self.assertEqual(merged.below(0.8), {"enc": 1, "hid": 1})
        self.assertAlmostEqual(merged.pruned_fraction(0.8), 2 / 3)

    def test_activity_is_split_invariant(self):
        whole = spike_activity(self.params, self.calibration)
        parts = spike_activity(self.params, self.calibration[:1]).merge(
            spike_activity(self.params, self.calibration[1:])
        )
        np.testing.assert_allclose(whole.enc_rates, parts.enc_rates)
        self.assertEqual(whole.n_steps, 120)
        counts, _ = whole.histogram("enc")
        self.assertEqual(counts.sum(), 8)

    def test_ablation(self):
        points = ablation_sweep(self.params, self.calibration, self.evaluation, thresholds=(0.0, 2.0))
        baseline = evaluate(SnnEstimator(self.params), self.evaluation)
        self.assertAlmostEqual(points[0].mean_error, pooled_mean(baseline))
        self.assertEqual((points[0].n_enc, points[0].n_hid), (8, 6))
        self.assertTrue(math.isnan(points[1].mean_error))
        self.assertTrue(points[1].error)

    def test_ablation_needs_disjoint_data(self):
        with self.assertRaises(ConfigurationError):
            ablation_sweep(self.params, self.calibration, self.calibration[:1])

    def test_benchmark_reports_flops(self):
        table = benchmark_estimators(
            [SnnEstimator(self.params), FilterEstimator("madgwick", load_estimator("madgwick").params)],
            self.evaluation[0],
            repeats=1,
        )
        self.assertEqual(list(table["estimator"]), ["snn", "madgwick"])
        self.assertEqual(table.loc[0, "snn_flops"], flop_count("snn", 6, 8))
        self.assertTrue(math.isnan(table.loc[1, "gru_flops"]))


class ManipulationTest(SimpleTestCase):
    def setUp(self):
        self.sequence = random_sequence(seed=1, steps=30)

    def test_modes(self):
        np.testing.assert_array_equal(manipulate_imu(self.sequence, "none"), self.sequence.imu)
        np.testing.assert_array_equal(manipulate_imu(self.sequence, "zero_gyro")[:, :3], 0.0)
        gravity = manipulate_imu(self.sequence, "gravity_accel")
        np.testing.assert_array_equal(gravity[:, 3:], np.tile([0.0, 0.0, GRAVITY], (30, 1)))
        np.testing.assert_array_equal(gravity[:, :3], self.sequence.gyro)
        with self.assertRaises(ConfigurationError):
            manipulate_imu(self.sequence, "flip")

    def test_zero_accel_leaves_gyro_only(self):
        estimator = FilterEstimator("complementary", ComplementaryParams(gamma=0.5))
        result = input_manipulation(estimator, self.sequence, "zero_accel")
        gyro_only = FilterEstimator("complementary", ComplementaryParams(gamma=1.0)).estimate(self.sequence)
        np.testing.assert_allclose(result.estimates, gyro_only, atol=1e-12)
        self.assertEqual(result.report.estimator, "complementary:zero_accel")


class LoadEstimatorTest(SimpleTestCase):
    def test_defaults_and_errors(self):
        self.assertTrue(load_estimator("adaptive").params.adaptive)
        self.assertEqual(load_estimator("ekf", known_initial=True).known_initial, True)
        with self.assertRaises(ConfigurationError):
            load_estimator("snn")
        with self.assertRaises(ConfigurationError):
            load_estimator("kalman")
        self.assertEqual(estimator_kinds(), ["snn", "complementary", "adaptive", "mahony", "madgwick", "ekf"])

    def test_estimators_report_their_name(self):
        seq = replace(random_sequence(seed=3, steps=10), name="x")
        rows = evaluate(load_estimator("mahony"), [seq], partition="val")
        self.assertEqual((rows[0].estimator, rows[0].sequence, rows[0].partition), ("mahony", "x", "val"))
