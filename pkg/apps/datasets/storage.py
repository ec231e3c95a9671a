import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import toml

from apps.core.domain import DEFAULT_DT, Sequence
from apps.core.exceptions import DatasetSchemaError, MissingInputError, NonFiniteInputError

from .simulator import split_sequences

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["t", "gx", "gy", "gz", "ax", "ay", "az", "pitch_gt", "roll_gt"]
ESTIMATE_COLUMNS = ["pitch_est", "roll_est"]
MANIFEST_FILENAME = "manifest.toml"
SPLITS = ("train", "val", "test")


def sequence_frame(seq: Sequence) -> pd.DataFrame:
    data = np.column_stack([seq.t, seq.gyro, seq.accel, seq.truth])
    return pd.DataFrame(data, columns=CSV_COLUMNS)


def write_sequence_csv(seq: Sequence, path: Path, estimates: Optional[np.ndarray] = None) -> Path:
    frame = sequence_frame(seq)
    if estimates is not None:
        estimates = np.asarray(estimates, dtype=float).reshape(len(seq), 2)
        frame[ESTIMATE_COLUMNS[0]] = estimates[:, 0]
        frame[ESTIMATE_COLUMNS[1]] = estimates[:, 1]
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def read_sequence_csv(
    path: Path, dt: Optional[float] = None, source: str = "sim"
) -> Sequence:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetSchemaError(f"Unreadable dataset CSV {path}: {exc}") from exc

    header = list(frame.columns)
    if header[: len(CSV_COLUMNS)] != CSV_COLUMNS:
        raise DatasetSchemaError(
            f"{path} header {','.join(header)} does not start with {','.join(CSV_COLUMNS)}"
        )
    extra = [c for c in header[len(CSV_COLUMNS) :] if c not in ESTIMATE_COLUMNS]
    if extra:
        raise DatasetSchemaError(f"{path} has unexpected columns: {', '.join(extra)}")
    if frame.empty:
        raise DatasetSchemaError(f"{path} has no samples")
    try:
        values = frame[CSV_COLUMNS].to_numpy(dtype=float)
    except ValueError as exc:
        raise DatasetSchemaError(f"{path} has non-numeric values: {exc}") from exc

    t = values[:, 0]
    if dt is None:
        dt = float(np.median(np.diff(t))) if len(t) > 1 else DEFAULT_DT
    try:
        return Sequence(
            t=t,
            gyro=values[:, 1:4],
            accel=values[:, 4:7],
            truth=values[:, 7:9],
            dt=dt,
            source=source,
            name=path.stem,
        )
    except NonFiniteInputError:
        raise
    except ValueError as exc:
        raise DatasetSchemaError(f"{path}: {exc}") from exc


def read_estimates(path: Path) -> np.ndarray:
    frame = pd.read_csv(path)
    missing = [c for c in ESTIMATE_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetSchemaError(f"{path} lacks estimate columns {', '.join(missing)}")
    return frame[ESTIMATE_COLUMNS].to_numpy(dtype=float)


def write_manifest(path: Path, dataset: Dict[str, Any], entries: List[Dict[str, Any]]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        toml.dump({"dataset": dataset, "sequences": entries}, handle)
    return path


def read_manifest(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        manifest = toml.load(path)
    except toml.TomlDecodeError as exc:
        raise DatasetSchemaError(f"Invalid manifest {path}: {exc}") from exc
    entries = manifest.get("sequences")
    if not isinstance(entries, list) or any("file" not in e for e in entries):
        raise DatasetSchemaError(f"Manifest {path} needs a [[sequences]] list with 'file' keys")
    return manifest


def dataset_files(path: Path, split: Optional[str] = None) -> List[Tuple[Path, str]]:
    """``(csv path, source label)`` of every sequence under ``path``, manifest order when present."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Dataset path not found: {path}")
    if split is not None and split not in SPLITS:
        raise DatasetSchemaError(f"Unknown split {split!r}; expected one of {', '.join(SPLITS)}")

    if path.is_file():
        return [(path, "sim")]

    manifest_path = path / MANIFEST_FILENAME
    if manifest_path.exists():
        entries = read_manifest(manifest_path)["sequences"]
        if split is not None:
            entries = [e for e in entries if e.get("split") == split]
        files = [(path / e["file"], e.get("source", "sim")) for e in entries]
    else:
        if split is not None:
            raise DatasetSchemaError(f"{path} has no {MANIFEST_FILENAME}; cannot select split {split!r}")
        files = [(p, "sim") for p in sorted(path.glob("*.csv"))]

    if not files:
        raise MissingInputError(f"No sequences found in {path}" + (f" for split {split!r}" if split else ""))
    return files


def load_dataset(path: Path, split: Optional[str] = None) -> List[Sequence]:
    """Load one CSV, or every sequence of a directory."""
    sequences = [read_sequence_csv(p, source=source) for p, source in dataset_files(path, split)]
    logger.info("Loaded %s sequences from %s", len(sequences), path)
    return sequences


def load_splits(path: Path, seed: int) -> Dict[str, List[Sequence]]:
    """Train / val / test sequences from the manifest's split labels.

    Datasets without labels are split 70/20/10 over whole sequences.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_FILENAME
    if path.is_dir() and manifest_path.exists():
        labels = {e.get("split") for e in read_manifest(manifest_path)["sequences"]}
        if set(SPLITS) <= labels:
            return {split: load_dataset(path, split) for split in SPLITS}
    return dict(zip(SPLITS, split_sequences(load_dataset(path), seed)))
