import math

from apps.core.commands import PipelineCommand
from apps.core.exceptions import ConfigurationError
from apps.datasets.simulator import (
    SensorModel,
    TrajectoryConfig,
    simulate_dataset,
    split_sequences,
)
from apps.datasets.storage import MANIFEST_FILENAME, write_manifest, write_sequence_csv


class Command(PipelineCommand):
    help = "Simulate quadrotor IMU recordings with ground-truth pitch/roll"
    command_name = "simulate"
    default_out = "data/sim"
    defaults = {
        "n": 5,
        "seconds": 100.0,
        "rate": 200.0,
        "max_tilt_deg": 45.0,
        "yaw_rate": 0.0,
        "drag": 0.5,
        "gyro_noise": 0.003,
        "accel_noise": 0.02,
        "gyro_bias": [0.0, 0.0, 0.0],
        "accel_bias": [0.0, 0.0, 0.0],
        "augment": 0,
        "source": "sim",
    }

    def add_command_arguments(self, parser):
        parser.add_argument("--n", type=int, default=None, help="Number of recordings")
        parser.add_argument("--seconds", type=float, default=None, help="Recording length")
        parser.add_argument("--rate", type=float, default=None, help="Sample rate in Hz")
        parser.add_argument("--max-tilt-deg", type=float, default=None)
        parser.add_argument("--yaw-rate", type=float, default=None, help="Max |yaw rate| in rad/s")
        parser.add_argument("--drag", type=float, default=None, help="Linear drag in 1/s")
        parser.add_argument("--gyro-noise", type=float, default=None, help="rad/s/sqrt(Hz)")
        parser.add_argument("--accel-noise", type=float, default=None, help="m/s^2/sqrt(Hz)")
        parser.add_argument("--gyro-bias", type=float, nargs=3, default=None)
        parser.add_argument("--accel-bias", type=float, nargs=3, default=None)
        parser.add_argument("--augment", type=int, default=None, help="Augmented copies per recording")
        parser.add_argument("--source", default=None, help="Source label stored in the manifest")

    def run_pipeline(self, opts, out_dir):
        if opts["augment"] < 0:
            raise ConfigurationError("--augment must be non-negative")
        trajectory = TrajectoryConfig(
            duration=opts["seconds"],
            rate=opts["rate"],
            max_tilt=math.radians(opts["max_tilt_deg"]),
            yaw_rate_max=opts["yaw_rate"],
            drag=opts["drag"],
        )
        sensor = SensorModel(
            gyro_noise_density=opts["gyro_noise"],
            accel_noise_density=opts["accel_noise"],
            gyro_bias=tuple(opts["gyro_bias"]),
            accel_bias=tuple(opts["accel_bias"]),
        )
        simulated = simulate_dataset(
            opts["n"], trajectory, sensor, opts["seed"], opts["augment"], opts["source"]
        )

        # split whole recordings so augmented copies never straddle partitions
        recordings = sorted({item.seed for item in simulated})
        split_of = {}
        if len(recordings) >= 3:
            for split, seeds in zip(("train", "val", "test"), split_sequences(recordings, opts["seed"])):
                split_of.update({seed: split for seed in seeds})

        outputs, entries = [], []
        for item in simulated:
            path = write_sequence_csv(item.sequence, out_dir / f"{item.sequence.name}.csv")
            outputs.append(path)
            entry = {
                "file": path.name,
                "seed": item.seed,
                "source": item.sequence.source,
                "samples": len(item.sequence),
                "sensor": item.sensor.to_dict(),
            }
            if item.seed in split_of:
                entry["split"] = split_of[item.seed]
            if item.augmentation is not None:
                entry["augmentation"] = item.augmentation
            entries.append(entry)

        dataset = {
            "seed": opts["seed"],
            "n": opts["n"],
            "seconds": opts["seconds"],
            "rate": opts["rate"],
            "max_tilt_deg": opts["max_tilt_deg"],
            "yaw_rate": opts["yaw_rate"],
            "drag": opts["drag"],
            "augment": opts["augment"],
        }
        outputs.append(write_manifest(out_dir / MANIFEST_FILENAME, dataset, entries))
        return outputs, {"sequences": len(simulated), "samples_per_sequence": trajectory.n_samples}
