import math
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.spatial.transform import Rotation

from apps.core.domain import GRAVITY, tilt_from_accel
from apps.core.exceptions import ConfigurationError, DatasetSchemaError, InsufficientDataError, MissingInputError
from apps.datasets.simulator import (
    HoldProgram,
    SensorDelta,
    SensorModel,
    TrajectoryConfig,
    augment,
    generate_trajectory,
    offset_hold_sequence,
    simulate_dataset,
    split_sequences,
    synthesize_imu,
)
from apps.datasets.storage import (
    load_dataset,
    load_splits,
    read_sequence_csv,
    write_manifest,
    write_sequence_csv,
)

from .factories import random_sequence


def hover(seconds=10.0, model=None):
    cfg = TrajectoryConfig(duration=seconds, max_tilt=0.0)
    trajectory = generate_trajectory(cfg, pitch_program=HoldProgram(0.0), roll_program=HoldProgram(0.0))
    return synthesize_imu(trajectory, model or SensorModel.noiseless())


class TrajectoryTest(SimpleTestCase):
    def test_hover_reads_gravity(self):
        seq = hover()
        np.testing.assert_allclose(seq.gyro, 0.0, atol=1e-12)
        np.testing.assert_allclose(seq.accel, np.tile([0.0, 0.0, GRAVITY], (len(seq), 1)), atol=1e-9)
        np.testing.assert_array_equal(seq.truth, 0.0)

    def test_tilted_hold_is_static(self):
        seq = offset_hold_sequence(pitch=0.35, roll=-0.1, duration=2.0, model=SensorModel.noiseless())
        angles, _ = tilt_from_accel(seq.accel)
        np.testing.assert_allclose(angles, seq.truth, atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(seq.accel, axis=1), GRAVITY, rtol=1e-9)

    def test_body_rates_match_attitude_derivative(self):
        cfg = TrajectoryConfig(duration=2.0, yaw_rate_max=0.5, seed=3)
        trajectory = generate_trajectory(cfg)
        programs = trajectory.programs

        def rotation(t):
            euler = [float(programs[axis](t)[0][0]) for axis in ("yaw", "pitch", "roll")]
            return Rotation.from_euler("ZYX", euler)

        h = 1e-5
        for k in (10, 150, 333):
            t = trajectory.t[k]
            numeric = (rotation(t - h).inv() * rotation(t + h)).as_rotvec() / (2 * h)
            np.testing.assert_allclose(trajectory.body_rates[k], numeric, atol=1e-6)

    def test_tilt_stays_bounded(self):
        trajectory = generate_trajectory(TrajectoryConfig(duration=20.0, max_tilt=math.radians(30.0), seed=5))
        self.assertLessEqual(np.abs(trajectory.truth).max(), math.radians(30.0) + 1e-12)

    def test_invalid_config(self):
        with self.assertRaises(ConfigurationError):
            TrajectoryConfig(rate=0.0)
        with self.assertRaises(ConfigurationError):
            TrajectoryConfig(max_tilt=math.pi / 2)


class SensorTest(SimpleTestCase):
    def test_noise_std(self):
        seq = hover(seconds=100.0, model=SensorModel(gyro_noise_density=0.003, accel_noise_density=0.02, seed=1))
        rate = 200.0
        np.testing.assert_allclose(seq.gyro.std(axis=0), 0.003 * math.sqrt(rate), rtol=0.05)
        np.testing.assert_allclose(seq.accel.std(axis=0), 0.02 * math.sqrt(rate), rtol=0.05)

    def test_bias_mean(self):
        bias = (0.01, -0.02, 0.005)
        seq = hover(seconds=100.0, model=SensorModel(gyro_bias=bias, seed=2))
        np.testing.assert_allclose(seq.gyro.mean(axis=0), bias, atol=1.5e-3)

    def test_augment_keeps_truth(self):
        seq = random_sequence(seed=1, steps=30)
        shifted = augment(seq, SensorDelta(gyro_bias=(0.1, 0.0, 0.0), accel_bias=(0.0, 0.0, -0.5)), seed=0)
        np.testing.assert_array_equal(shifted.truth, seq.truth)
        np.testing.assert_allclose(shifted.gyro - seq.gyro, np.tile([0.1, 0.0, 0.0], (30, 1)))
        np.testing.assert_allclose(shifted.accel - seq.accel, np.tile([0.0, 0.0, -0.5], (30, 1)))

    def test_negative_density_rejected(self):
        with self.assertRaises(ConfigurationError):
            SensorModel(gyro_noise_density=-1.0)


class SimulateDatasetTest(SimpleTestCase):
    def setUp(self):
        self.cfg = TrajectoryConfig(duration=1.0)
        self.model = SensorModel()

    def test_seeded_and_prefix_stable(self):
        three = simulate_dataset(3, self.cfg, self.model, seed=1)
        two = simulate_dataset(2, self.cfg, self.model, seed=1)
        for a, b in zip(two, three):
            np.testing.assert_array_equal(a.sequence.imu, b.sequence.imu)
        self.assertFalse(np.array_equal(three[0].sequence.imu, three[1].sequence.imu))

    def test_augmentations(self):
        items = simulate_dataset(2, self.cfg, self.model, seed=0, augmentations=2)
        self.assertEqual(len(items), 6)
        self.assertEqual(items[1].sequence.name, "seq_000_aug0")
        self.assertEqual(items[1].seed, items[0].seed)
        np.testing.assert_array_equal(items[1].sequence.truth, items[0].sequence.truth)

    def test_split_partitions(self):
        train, val, test = split_sequences(list(range(10)), seed=4)
        self.assertEqual((len(train), len(val), len(test)), (7, 2, 1))
        self.assertEqual(sorted(train + val + test), list(range(10)))
        with self.assertRaises(InsufficientDataError):
            split_sequences([1, 2], seed=0)
        with self.assertRaises(ConfigurationError):
            split_sequences(list(range(10)), seed=0, fractions=(0.5, 0.2, 0.2))


class StorageTest(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_round_trip(self):
        seq = replace(random_sequence(seed=2, steps=20), name="abc")
        loaded = read_sequence_csv(write_sequence_csv(seq, self.dir / "abc.csv"))
        np.testing.assert_allclose(loaded.imu, seq.imu)
        np.testing.assert_allclose(loaded.truth, seq.truth)
        self.assertAlmostEqual(loaded.dt, seq.dt)
        self.assertEqual(loaded.name, "abc")

    def test_schema_errors(self):
        (self.dir / "bad.csv").write_text("t,gx,gy\n0,1,2\n")
        with self.assertRaises(DatasetSchemaError):
            read_sequence_csv(self.dir / "bad.csv")
        with self.assertRaises(MissingInputError):
            read_sequence_csv(self.dir / "missing.csv")

    def test_manifest_split_selection(self):
        entries = []
        for index, split in enumerate(["train", "train", "val", "test"]):
            path = write_sequence_csv(random_sequence(seed=index, steps=10), self.dir / f"s{index}.csv")
            entries.append({"file": path.name, "split": split, "source": "A"})
        write_manifest(self.dir / "manifest.toml", {"seed": 0}, entries)
        self.assertEqual([s.name for s in load_dataset(self.dir, "train")], ["s0", "s1"])
        self.assertEqual(load_dataset(self.dir, "val")[0].source, "A")
        splits = load_splits(self.dir, seed=0)
        self.assertEqual([len(splits[k]) for k in ("train", "val", "test")], [2, 1, 1])
        with self.assertRaises(DatasetSchemaError):
            load_dataset(self.dir, "holdout")

    def test_unlabelled_directory_is_split(self):
        for index in range(10):
            write_sequence_csv(random_sequence(seed=index, steps=10), self.dir / f"s{index}.csv")
        splits = load_splits(self.dir, seed=0)
        self.assertEqual([len(splits[k]) for k in ("train", "val", "test")], [7, 2, 1])
        with self.assertRaises(DatasetSchemaError):
            load_dataset(self.dir, "train")
