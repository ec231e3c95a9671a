import math
from pathlib import Path

import pandas as pd

from apps.core.commands import PipelineCommand
from apps.core.exceptions import ConfigurationError
from apps.datasets.simulator import SensorModel, offset_hold_sequence
from apps.datasets.storage import load_dataset
from apps.evaluation.estimators import SNN_KIND, estimator_kinds, load_estimator
from apps.evaluation.experiments import (
    DEFAULT_ABLATION_THRESHOLDS,
    MANIPULATION_MODES,
    ablation_sweep,
    benchmark_estimators,
    filter_fitter,
    initial_offset_study,
    input_manipulation,
    kfold_protocol,
    snn_fitter,
    spike_activity,
)
from apps.evaluation.metrics import flop_count
from apps.evaluation.reports import (
    write_ablation,
    write_activity,
    write_activity_histogram,
    write_fold_table,
    write_manipulation,
    write_offset_summary,
    write_offset_traces,
    write_reports,
)
from apps.filters.pso import PsoConfig
from apps.snn.checkpoints import load_checkpoint
from apps.snn.training import TrainConfig

STUDIES = ("offset", "ablation", "manipulation", "activity", "kfold", "flops", "benchmark")


def parse_estimator_specs(specs):
    """``kind`` or ``kind=params_path`` items into ``(kind, path)`` pairs."""
    parsed = []
    kinds = estimator_kinds()
    for spec in specs:
        kind, _, path = spec.partition("=")
        if kind not in kinds:
            raise ConfigurationError(f"Unknown estimator {kind!r}; expected one of {', '.join(kinds)}")
        parsed.append((kind, Path(path) if path else None))
    return parsed


class Command(PipelineCommand):
    help = "Run an evaluation study: " + ", ".join(STUDIES)
    command_name = "experiment"
    default_out = "runs/experiment"
    defaults = {
        "study": None,
        "estimator": ["complementary", "adaptive"],
        "params": None,
        "data": None,
        "split": None,
        "calib": None,
        "calib_split": None,
        "thresholds": list(DEFAULT_ABLATION_THRESHOLDS),
        "threshold": 0.005,
        "modes": list(MANIPULATION_MODES),
        "offset_deg": 20.0,
        "seconds": 5.0,
        "rate": 200.0,
        "threshold_deg": 1.0,
        "k": 5,
        "cross_source": True,
        "quantized": False,
        "m": 100,
        "n": 100,
        "repeats": 3,
        "particles": 100,
        "iters": 300,
        "n_enc": 100,
        "n_hid": 100,
        "window": 2000,
        "max_epochs": 1000,
    }

    def add_command_arguments(self, parser):
        parser.add_argument("study", choices=STUDIES)
        parser.add_argument(
            "--estimator", nargs="+", default=None, help="Estimators as kind or kind=params_path"
        )
        parser.add_argument("--params", default=None, help="SNN checkpoint for network studies")
        parser.add_argument("--data", default=None, help="Dataset CSV or directory")
        parser.add_argument("--split", default=None)
        parser.add_argument("--calib", default=None, help="Calibration data for ablation")
        parser.add_argument("--calib-split", default=None)
        parser.add_argument("--thresholds", type=float, nargs="+", default=None)
        parser.add_argument("--threshold", type=float, default=None, help="Activity threshold as a fraction")
        parser.add_argument("--modes", nargs="+", choices=MANIPULATION_MODES, default=None)
        parser.add_argument("--offset-deg", type=float, default=None)
        parser.add_argument("--seconds", type=float, default=None)
        parser.add_argument("--rate", type=float, default=None)
        parser.add_argument("--threshold-deg", type=float, default=None)
        parser.add_argument("--k", type=int, default=None, help="Number of random folds")
        parser.add_argument("--no-cross-source", dest="cross_source", action="store_false", default=None)
        parser.add_argument("--quantized", action="store_true", default=None)
        parser.add_argument("--m", type=int, default=None, help="Hidden units for flops")
        parser.add_argument("--n", type=int, default=None, help="Inputs per hidden unit for flops")
        parser.add_argument("--repeats", type=int, default=None)
        parser.add_argument("--particles", type=int, default=None)
        parser.add_argument("--iters", type=int, default=None)
        parser.add_argument("--n-enc", type=int, default=None)
        parser.add_argument("--n-hid", type=int, default=None)
        parser.add_argument("--window", type=int, default=None)
        parser.add_argument("--max-epochs", type=int, default=None)

    def run_pipeline(self, opts, out_dir):
        self.opts = opts
        return getattr(self, f"run_{opts['study']}")(out_dir)

    def _data(self, key="data", split_key="split"):
        if self.opts[key] is None:
            raise ConfigurationError(f"--{key} is required for the {self.opts['study']} study")
        return load_dataset(self.opts[key], self.opts[split_key])

    def _network(self):
        if self.opts["params"] is None:
            raise ConfigurationError(f"--params is required for the {self.opts['study']} study")
        params, _ = load_checkpoint(Path(self.opts["params"]))
        return params

    def _estimators(self):
        return [
            load_estimator(kind, path, quantized=self.opts["quantized"] and kind == SNN_KIND)
            for kind, path in parse_estimator_specs(self.opts["estimator"])
        ]

    def run_offset(self, out_dir):
        sequence = offset_hold_sequence(
            pitch=math.radians(self.opts["offset_deg"]),
            duration=self.opts["seconds"],
            rate=self.opts["rate"],
            model=SensorModel(seed=self.opts["seed"]),
        )
        traces = initial_offset_study(self._estimators(), sequence, self.opts["threshold_deg"])
        outputs = [
            write_offset_traces(traces, out_dir / "offset_traces.csv"),
            write_offset_summary(traces, out_dir / "offset_summary.csv", self.opts["threshold_deg"]),
        ]
        return outputs, {t.estimator: t.time_to_threshold for t in traces}

    def run_ablation(self, out_dir):
        params = self._network()
        calibration = self._data("calib", "calib_split")
        evaluation = self._data()
        points = ablation_sweep(
            params, calibration, evaluation, self.opts["thresholds"], quantized=self.opts["quantized"]
        )
        outputs = [write_ablation(points, out_dir / "ablation.csv")]
        return outputs, {
            "baseline_error_deg": points[0].mean_error if points else None,
            "over_pruned": [p.threshold for p in points if p.error],
        }

    def run_manipulation(self, out_dir):
        params = self._network()
        estimator = load_estimator(SNN_KIND, Path(self.opts["params"]), quantized=self.opts["quantized"])
        runs, reports = [], []
        for sequence in self._data():
            results = [input_manipulation(estimator, sequence, mode) for mode in self.opts["modes"]]
            runs.append((sequence, results))
            reports += [r.report for r in results]
        outputs = [
            write_manipulation(runs, out_dir / "manipulation_traces.csv"),
            write_reports(reports, out_dir / "manipulation_errors.csv"),
        ]
        return outputs, {"sequences": len(runs), "neurons": [params.n_enc, params.n_hid]}

    def run_activity(self, out_dir):
        report = spike_activity(self._network(), self._data(), quantized=self.opts["quantized"])
        outputs = [
            write_activity(report, out_dir / "activity.csv"),
            write_activity_histogram(report, out_dir / "activity_histogram.csv"),
        ]
        threshold = self.opts["threshold"]
        return outputs, {
            "steps": report.n_steps,
            "threshold": threshold,
            "below_threshold": report.below(threshold),
            "pruned_fraction": report.pruned_fraction(threshold),
        }

    def run_kfold(self, out_dir):
        specs = parse_estimator_specs(self.opts["estimator"])
        if len(specs) != 1:
            raise ConfigurationError("The kfold study trains exactly one --estimator kind")
        kind = specs[0][0]
        if kind == SNN_KIND:
            fitter = snn_fitter(
                self.opts["n_enc"],
                self.opts["n_hid"],
                self.opts["window"],
                TrainConfig(max_epochs=self.opts["max_epochs"]),
            )
        else:
            fitter = filter_fitter(
                kind, PsoConfig(n_particles=self.opts["particles"], max_iters=self.opts["iters"])
            )
        folds = kfold_protocol(
            self._data(), fitter, self.opts["k"], self.opts["seed"], self.opts["cross_source"]
        )
        outputs = [
            write_fold_table(folds, out_dir / "folds.csv"),
            write_reports(
                [r for f in folds for r in f.train_reports + f.test_reports], out_dir / "fold_sequences.csv"
            ),
        ]
        return outputs, {"folds": [f.fold for f in folds]}

    def run_flops(self, out_dir):
        m, n = self.opts["m"], self.opts["n"]
        snn, gru = flop_count("snn", m, n), flop_count("gru", m, n)
        path = out_dir / "flops.csv"
        pd.DataFrame(
            [{"method": "snn", "m": m, "n": n, "flops": snn}, {"method": "gru", "m": m, "n": n, "flops": gru}]
        ).to_csv(path, index=False, lineterminator="\n")
        return [path], {"snn": snn, "gru": gru, "ratio": gru / snn}

    def run_benchmark(self, out_dir):
        sequence = self._data()[0]
        table = benchmark_estimators(self._estimators(), sequence, self.opts["repeats"])
        path = out_dir / "benchmark.csv"
        table.to_csv(path, index=False, lineterminator="\n")
        return [path], {"sequence": sequence.name, "samples": len(sequence)}
