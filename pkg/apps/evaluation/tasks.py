import logging
from pathlib import Path
from typing import Any, Dict, Optional

from huey.contrib.djhuey import task

from apps.core.exceptions import NeuroAttitudeError
from apps.datasets.storage import read_sequence_csv, write_sequence_csv

from .estimators import load_estimator
from .metrics import angle_error_stats

logger = logging.getLogger(__name__)


def evaluate_sequence(
    kind: str,
    data_path: str,
    params_path: Optional[str] = None,
    known_initial: bool = False,
    quantized: bool = False,
    estimates_dir: Optional[str] = None,
    partition: str = "test",
) -> Dict[str, Any]:
    """Error report of one estimator on one dataset CSV, as a plain dict."""
    estimator = load_estimator(
        kind, Path(params_path) if params_path else None, known_initial=known_initial, quantized=quantized
    )
    sequence = read_sequence_csv(Path(data_path))
    estimates = estimator.estimate(sequence)
    report = angle_error_stats(
        estimates,
        sequence.truth,
        estimator=estimator.name,
        sequence=sequence.name,
        known_initial=known_initial,
        partition=partition,
    )
    row = report.to_dict()
    if estimates_dir:
        suffix = "known" if known_initial else "unknown"
        out = Path(estimates_dir) / f"{sequence.name}_{estimator.name}_{suffix}.csv"
        row["estimates_file"] = str(write_sequence_csv(sequence, out, estimates=estimates))
    logger.debug("Evaluated %s on %s: mean %.3f deg", estimator.name, sequence.name, report.mean)
    return row


@task()
def evaluate_sequence_task(**kwargs) -> Dict[str, Any]:
    try:
        return evaluate_sequence(**kwargs)
    except NeuroAttitudeError as exc:
        logger.error("Evaluation of %s failed: %s", kwargs.get("data_path"), exc)
        return {"failed": True, "message": str(exc), "exit_code": exc.exit_code}
