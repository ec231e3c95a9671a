"""CSV emitters. Long format wherever the data feeds a plot."""

from dataclasses import asdict
from pathlib import Path
from typing import Iterable, List, Sequence as SequenceType, Tuple

import numpy as np
import pandas as pd

from apps.core.domain import Sequence

from .experiments import (
    AblationPoint,
    FoldReport,
    ManipulationResult,
    OffsetTrace,
    SpikeActivityReport,
    fold_table,
)
from .metrics import EvalReport, comparison_table, reports_frame


def _write(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def write_reports(reports: Iterable[EvalReport], path: Path) -> Path:
    """Per-sequence error rows."""
    return _write(reports_frame(reports), path)


def write_comparison(reports: Iterable[EvalReport], path: Path) -> Path:
    return _write(comparison_table(reports), path)


def write_fold_table(folds: SequenceType[FoldReport], path: Path) -> Path:
    return _write(fold_table(folds), path)


def write_offset_traces(traces: SequenceType[OffsetTrace], path: Path) -> Path:
    frames = [
        pd.DataFrame(
            {
                "estimator": trace.estimator,
                "t": trace.t,
                "pitch_est_deg": np.degrees(trace.estimates[:, 0]),
                "pitch_gt_deg": np.degrees(trace.truth[:, 0]),
                "error_deg": trace.pitch_error_deg,
            }
        )
        for trace in traces
    ]
    return _write(pd.concat(frames, ignore_index=True), path)


def write_offset_summary(traces: SequenceType[OffsetTrace], path: Path, threshold_deg: float) -> Path:
    rows = [
        {
            "estimator": trace.estimator,
            "threshold_deg": threshold_deg,
            "time_to_threshold": np.nan if trace.time_to_threshold is None else trace.time_to_threshold,
            "converged": trace.time_to_threshold is not None,
        }
        for trace in traces
    ]
    return _write(pd.DataFrame(rows), path)


def write_activity(report: SpikeActivityReport, path: Path) -> Path:
    rows = [
        {"layer": layer, "neuron": index, "rate": float(rate)}
        for layer, rates in report.rates.items()
        for index, rate in enumerate(rates)
    ]
    return _write(pd.DataFrame(rows), path)


def write_activity_histogram(report: SpikeActivityReport, path: Path) -> Path:
    rows = []
    for layer in report.rates:
        counts, edges = report.histogram(layer)
        rows += [
            {"layer": layer, "bin_low": lo, "bin_high": hi, "count": int(c)}
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        ]
    return _write(pd.DataFrame(rows), path)


def write_ablation(points: List[AblationPoint], path: Path) -> Path:
    return _write(pd.DataFrame([asdict(p) for p in points]), path)


def write_manipulation(runs: SequenceType[Tuple[Sequence, List[ManipulationResult]]], path: Path) -> Path:
    frames = [
        pd.DataFrame(
            {
                "sequence": seq.name,
                "mode": result.mode,
                "t": seq.t,
                "pitch_est_deg": np.degrees(result.estimates[:, 0]),
                "roll_est_deg": np.degrees(result.estimates[:, 1]),
                "pitch_gt_deg": np.degrees(seq.truth[:, 0]),
                "roll_gt_deg": np.degrees(seq.truth[:, 1]),
            }
        )
        for seq, results in runs
        for result in results
    ]
    return _write(pd.concat(frames, ignore_index=True), path)
