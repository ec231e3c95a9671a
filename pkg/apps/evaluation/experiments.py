"""Studies built on top of the estimators: folds, offsets, activity, ablation."""

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Dict, List, Mapping, Optional, Sequence as SequenceType

import numpy as np
import pandas as pd

from apps.core.domain import GRAVITY, NormalizationSpec, Sequence
from apps.core.exceptions import ConfigurationError, InsufficientDataError, PruningError
from apps.datasets.simulator import split_sequences
from apps.filters.pso import PsoConfig
from apps.filters.tuning import tune_filter
from apps.snn.runtime import NetworkParams, estimate_sequence, prune
from apps.snn.training import OptimizerConfig, TrainConfig, train, window_dataset

from .estimators import Estimator, FilterEstimator, SnnEstimator
from .metrics import EvalReport, angle_error_stats, flop_count, pooled_mean, time_to_threshold

logger = logging.getLogger(__name__)

MANIPULATION_MODES = ("none", "zero_gyro", "zero_accel", "gravity_accel")
DEFAULT_ABLATION_THRESHOLDS = (0.0, 0.001, 0.0025, 0.005, 0.01, 0.02, 0.05)

Fitter = Callable[[List[Sequence], List[Sequence], int], Estimator]


def evaluate(
    estimator: Estimator, sequences: SequenceType[Sequence], partition: str = "test"
) -> List[EvalReport]:
    traces = estimator.estimate_many(sequences)
    return [
        angle_error_stats(
            trace,
            seq.truth,
            estimator=estimator.name,
            sequence=seq.name,
            known_initial=estimator.known_initial,
            partition=partition,
        )
        for trace, seq in zip(traces, sequences)
    ]


def filter_fitter(kind: str, pso: PsoConfig = PsoConfig()) -> Fitter:
    def fit(train_set, val_set, seed):
        tuned = tune_filter(kind, train_set, pso, seed=seed)
        return FilterEstimator(kind, tuned.params)

    return fit


def snn_fitter(
    n_enc: int = 100,
    n_hid: int = 100,
    window: int = 2000,
    cfg: TrainConfig = TrainConfig(),
    opt: OptimizerConfig = OptimizerConfig(),
    fit_normalization: bool = False,
) -> Fitter:
    def fit(train_set, val_set, seed):
        normalization = NormalizationSpec.fit(train_set) if fit_normalization else None
        params = NetworkParams.initialize(n_enc, n_hid, seed=seed, normalization=normalization)
        result = train(
            params,
            window_dataset(train_set, window),
            window_dataset(val_set, window),
            cfg,
            opt,
            seed=seed,
        )
        return SnnEstimator(result.params)

    return fit


@dataclass
class FoldReport:
    fold: str
    train: List[Sequence]
    val: List[Sequence]
    test: List[Sequence]
    train_reports: List[EvalReport] = field(default_factory=list)
    test_reports: List[EvalReport] = field(default_factory=list)

    def summary(self) -> Dict[str, object]:
        train_means = np.array([r.mean for r in self.train_reports])
        test_means = np.array([r.mean for r in self.test_reports])
        return {
            "fold": self.fold,
            "n_train": len(self.train),
            "n_val": len(self.val),
            "n_test": len(self.test),
            "train_mean": float(train_means.mean()),
            "train_sd": float(train_means.std()),
            "test_mean": float(test_means.mean()),
            "test_sd": float(test_means.std()),
        }


def group_by_source(sequences: SequenceType[Sequence]) -> Dict[str, List[Sequence]]:
    groups: Dict[str, List[Sequence]] = {}
    for seq in sequences:
        groups.setdefault(seq.source, []).append(seq)
    return groups


def kfold_partitions(
    groups: Mapping[str, List[Sequence]], k: int = 5, seed: int = 0, cross_source: bool = True
) -> List[tuple]:
    """``(name, train, val, test)`` per fold.

    Every fold re-draws a 70/20/10 split within each source; cross-source
    folds train on one source and test on all of another.
    """
    if k < 1:
        raise ConfigurationError(f"k must be positive, got {k}")
    if cross_source and len(groups) < 2:
        raise InsufficientDataError(
            f"Cross-source folds need at least two sources, got {', '.join(groups) or 'none'}"
        )
    folds = []
    for index in range(k):
        train_set, val_set, test_set = [], [], []
        for offset, source in enumerate(sorted(groups)):
            tr, va, te = split_sequences(groups[source], seed + 1000 * index + offset)
            train_set += tr
            val_set += va
            test_set += te
        folds.append((f"fold{index + 1}", train_set, val_set, test_set))
    if cross_source:
        for train_source, test_source in permutations(sorted(groups), 2):
            tr, va, _ = split_sequences(groups[train_source], seed)
            folds.append((f"{train_source}->{test_source}", tr, va, list(groups[test_source])))
    return folds


def kfold_protocol(
    sequences: SequenceType[Sequence],
    fitter: Fitter,
    k: int = 5,
    seed: int = 0,
    cross_source: bool = True,
) -> List[FoldReport]:
    """Fit and evaluate one estimator per fold."""
    reports = []
    for index, (name, train_set, val_set, test_set) in enumerate(
        kfold_partitions(group_by_source(sequences), k, seed, cross_source)
    ):
        logger.info("Fold %s: %d train, %d val, %d test", name, len(train_set), len(val_set), len(test_set))
        estimator = fitter(train_set, val_set, seed + index)
        reports.append(
            FoldReport(
                fold=name,
                train=train_set,
                val=val_set,
                test=test_set,
                train_reports=evaluate(estimator, train_set, "train"),
                test_reports=evaluate(estimator, test_set, "test"),
            )
        )
    return reports


def fold_table(folds: SequenceType[FoldReport]) -> pd.DataFrame:
    return pd.DataFrame([fold.summary() for fold in folds])


@dataclass
class OffsetTrace:
    estimator: str
    t: np.ndarray
    estimates: np.ndarray
    truth: np.ndarray
    time_to_threshold: Optional[float]

    @property
    def pitch_error_deg(self) -> np.ndarray:
        return np.degrees(np.abs(self.estimates[:, 0] - self.truth[:, 0]))


def initial_offset_study(
    estimators: SequenceType[Estimator], sequence: Sequence, threshold_deg: float = 1.0
) -> List[OffsetTrace]:
    """Pitch convergence of each estimator from its own start on ``sequence``."""
    traces = []
    for estimator in estimators:
        estimates = estimator.estimate(sequence)
        settle = time_to_threshold(estimates, sequence.truth, sequence.dt, threshold_deg, axis=0)
        logger.info(
            "%s reaches %.3g deg after %s",
            estimator.name,
            threshold_deg,
            "never" if settle is None else f"{settle:.3f} s",
        )
        traces.append(OffsetTrace(estimator.name, sequence.t, estimates, sequence.truth, settle))
    return traces


@dataclass(frozen=True)
class SpikeActivityReport:
    """Mean firing fraction of every encoding and hidden neuron."""

    enc_rates: np.ndarray
    hid_rates: np.ndarray
    n_steps: int
    bins: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 21))

    @property
    def rates(self) -> Dict[str, np.ndarray]:
        return {"enc": self.enc_rates, "hid": self.hid_rates}

    def histogram(self, layer: str):
        counts, edges = np.histogram(self.rates[layer], bins=self.bins)
        return counts, edges

    def below(self, threshold: float) -> Dict[str, int]:
        return {layer: int(np.count_nonzero(r < threshold)) for layer, r in self.rates.items()}

    def pruned_fraction(self, threshold: float) -> float:
        total = len(self.enc_rates) + len(self.hid_rates)
        return sum(self.below(threshold).values()) / total

    def merge(self, other: "SpikeActivityReport") -> "SpikeActivityReport":
        """Step-weighted mean of two reports measured on disjoint data."""
        n = self.n_steps + other.n_steps

        def combine(a, b):
            return (a * self.n_steps + b * other.n_steps) / n

        return SpikeActivityReport(
            combine(self.enc_rates, other.enc_rates),
            combine(self.hid_rates, other.hid_rates),
            n,
            self.bins,
        )


def spike_activity(
    params: NetworkParams, sequences: SequenceType[Sequence], quantized: Optional[bool] = None
) -> SpikeActivityReport:
    enc_total = np.zeros(params.n_enc)
    hid_total = np.zeros(params.n_hid)
    steps = 0
    for seq in sequences:
        spikes = estimate_sequence(params, seq, quantized=quantized).spikes
        enc_total += spikes.enc.sum(axis=0)
        hid_total += spikes.hid.sum(axis=0)
        steps += len(seq)
    if steps == 0:
        raise InsufficientDataError("Spike activity needs at least one non-empty sequence")
    return SpikeActivityReport(enc_total / steps, hid_total / steps, steps)


@dataclass
class AblationPoint:
    threshold: float
    mean_error: float
    n_enc: int
    n_hid: int
    pruned_fraction: float
    error: str = ""


def ablation_sweep(
    params: NetworkParams,
    calibration: SequenceType[Sequence],
    evaluation: SequenceType[Sequence],
    thresholds: SequenceType[float] = DEFAULT_ABLATION_THRESHOLDS,
    quantized: bool = False,
) -> List[AblationPoint]:
    """Prune at each threshold (activity from ``calibration``) and re-evaluate."""
    if {s.name for s in calibration} & {s.name for s in evaluation}:
        raise ConfigurationError("Calibration and evaluation sequences must be disjoint")
    activity = spike_activity(params, calibration, quantized=quantized)
    points = []
    for threshold in thresholds:
        try:
            pruned = prune(params, activity.rates, threshold)
        except PruningError as exc:
            logger.warning("Ablation at %.3g: %s", threshold, exc)
            points.append(
                AblationPoint(threshold, math.nan, 0, 0, activity.pruned_fraction(threshold), str(exc))
            )
            continue
        reports = evaluate(SnnEstimator(pruned, quantized=quantized), evaluation)
        points.append(
            AblationPoint(
                threshold,
                pooled_mean(reports),
                pruned.n_enc,
                pruned.n_hid,
                activity.pruned_fraction(threshold),
            )
        )
    return points


def manipulate_imu(sequence: Sequence, mode: str) -> np.ndarray:
    """Raw (T, 6) IMU data with one sensor replaced."""
    if mode not in MANIPULATION_MODES:
        raise ConfigurationError(f"Unknown mode {mode!r}; expected one of {', '.join(MANIPULATION_MODES)}")
    imu = sequence.imu.copy()
    if mode == "zero_gyro":
        imu[:, :3] = 0.0
    elif mode == "zero_accel":
        imu[:, 3:] = 0.0
    elif mode == "gravity_accel":
        imu[:, 3:] = (0.0, 0.0, GRAVITY)
    return imu


@dataclass
class ManipulationResult:
    mode: str
    estimates: np.ndarray
    report: EvalReport


def input_manipulation(estimator: Estimator, sequence: Sequence, mode: str) -> ManipulationResult:
    """Estimate ``sequence`` after replacing a sensor stream before normalization."""
    estimates = estimator.estimate(sequence, imu=manipulate_imu(sequence, mode))
    report = angle_error_stats(estimates, sequence.truth, f"{estimator.name}:{mode}", sequence.name)
    return ManipulationResult(mode, estimates, report)


def benchmark_estimators(
    estimators: SequenceType[Estimator], sequence: Sequence, repeats: int = 3
) -> pd.DataFrame:
    """Wall-clock seconds per step, with FLOPs per hidden step for networks."""
    rows = []
    for estimator in estimators:
        timings = []
        for _ in range(max(1, repeats)):
            start = time.perf_counter()
            estimator.estimate(sequence)
            timings.append(time.perf_counter() - start)
        row = {"estimator": estimator.name, "seconds_per_step": min(timings) / len(sequence)}
        if isinstance(estimator, SnnEstimator):
            m, n = estimator.params.n_hid, estimator.params.n_enc
            row["snn_flops"] = flop_count("snn", m, n)
            row["gru_flops"] = flop_count("gru", m, n)
        rows.append(row)
    return pd.DataFrame(rows)
