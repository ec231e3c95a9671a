"""Angle error statistics, comparison tables and FLOP accounting."""

import logging
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd

from apps.core.domain import wrap_angle
from apps.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

FLOP_METHODS = ("snn", "gru")


@dataclass(frozen=True)
class EvalReport:
    """Absolute pitch/roll error of one estimator on one sequence, in degrees."""

    estimator: str
    sequence: str
    mean: float
    median: float
    std: float
    samples: int
    known_initial: bool = False
    partition: str = "test"

    @property
    def initial(self) -> str:
        return "known" if self.known_initial else "unknown"

    def to_dict(self):
        row = asdict(self)
        row["initial"] = self.initial
        return row


def absolute_errors_deg(estimates, truth) -> np.ndarray:
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"Estimate shape {estimates.shape} does not match truth {truth.shape}")
    return np.degrees(np.abs(wrap_angle(estimates - truth)))


def angle_error_stats(
    estimates,
    truth,
    estimator: str = "",
    sequence: str = "",
    known_initial: bool = False,
    partition: str = "test",
) -> EvalReport:
    """Pitch and roll errors pooled into one sample."""
    errors = absolute_errors_deg(estimates, truth).ravel()
    if errors.size == 0:
        raise ValueError("Cannot compute error statistics of an empty trace")
    return EvalReport(
        estimator=estimator,
        sequence=sequence,
        mean=float(errors.mean()),
        median=float(np.median(errors)),
        std=float(errors.std()),
        samples=len(estimates),
        known_initial=known_initial,
        partition=partition,
    )


def reports_frame(reports: Iterable[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in reports])


def comparison_table(reports: Iterable[EvalReport]) -> pd.DataFrame:
    """Median, mean and SD of the per-sequence mean errors.

    One row per estimator and initial-state flag, with a column group per
    partition (``train_mean``, ``test_sd``, ...).
    """
    frame = reports_frame(reports)
    if frame.empty:
        return frame
    rows = []
    for (estimator, initial), group in frame.groupby(["estimator", "initial"], sort=False):
        row = {"estimator": estimator, "initial": initial}
        for partition, part in group.groupby("partition", sort=False):
            means = part["mean"].to_numpy()
            row[f"{partition}_median"] = float(np.median(means))
            row[f"{partition}_mean"] = float(means.mean())
            row[f"{partition}_sd"] = float(means.std())
        rows.append(row)
    return pd.DataFrame(rows)


def time_to_threshold(estimates, truth, dt: float, threshold_deg: float = 1.0, axis: int = 0) -> Optional[float]:
    """Time after which the error on ``axis`` stays below ``threshold_deg``.

    Returns ``None`` when the error is above the threshold at the last sample.
    """
    errors = absolute_errors_deg(estimates, truth)[:, axis]
    above = np.flatnonzero(errors >= threshold_deg)
    if len(above) == 0:
        return 0.0
    if above[-1] == len(errors) - 1:
        return None
    return float((above[-1] + 1) * dt)


def flop_count(method: str, m: int, n: int) -> int:
    """FLOPs of one hidden-layer step with ``m`` units and ``n`` inputs."""
    if m < 1 or n < 0:
        raise ConfigurationError(f"Layer sizes must satisfy M > 0, N >= 0 (got M={m}, N={n})")
    if method == "snn":
        return m * m + m * n + 2 * m
    if method == "gru":
        return 3 * m * m + 3 * m * n + 3 * m
    raise ConfigurationError(f"Unknown method {method!r}; expected one of {', '.join(FLOP_METHODS)}")


def pooled_mean(reports: List[EvalReport]) -> float:
    """Sample-weighted mean error over several sequences."""
    weights = np.array([r.samples for r in reports], dtype=float)
    return float(np.average([r.mean for r in reports], weights=weights))
