import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from apps.core.domain import NormalizationSpec
from apps.core.exceptions import CorruptParameterFileError, MissingInputError

from .runtime import LifParams, NetworkParams

logger = logging.getLogger(__name__)

FORMAT_TAG = "neuro-attitude-snn/1"

ARRAY_KEYS = (
    "enc_weights",
    "hid_weights_ff",
    "hid_weights_rec",
    "out_weights",
    "enc_tau_mem",
    "enc_tau_syn",
    "enc_threshold",
    "hid_tau_mem",
    "hid_tau_syn",
    "hid_threshold",
    "out_li",
    "norm_x_min",
    "norm_x_max",
)


def save_checkpoint(params: NetworkParams, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    metadata = {
        "format": FORMAT_TAG,
        "n_inputs": params.enc_weights.shape[0],
        "n_enc": params.n_enc,
        "n_hid": params.n_hid,
        "quantized": params.quantized,
        "current_first": params.current_first,
        **(extra or {}),
    }
    np.savez(
        path,
        metadata=np.array(json.dumps(metadata, sort_keys=True)),
        enc_weights=params.enc_weights,
        hid_weights_ff=params.hid_weights_ff,
        hid_weights_rec=params.hid_weights_rec,
        out_weights=params.out_weights,
        enc_tau_mem=params.enc_lif.tau_mem,
        enc_tau_syn=params.enc_lif.tau_syn,
        enc_threshold=params.enc_lif.threshold,
        hid_tau_mem=params.hid_lif.tau_mem,
        hid_tau_syn=params.hid_lif.tau_syn,
        hid_threshold=params.hid_lif.threshold,
        out_li=np.array(params.out_li),
        norm_x_min=params.normalization.x_min,
        norm_x_max=params.normalization.x_max,
    )
    logger.debug("Saved checkpoint %s (%s/%s neurons)", path, params.n_enc, params.n_hid)
    return path


def load_checkpoint(path: Path) -> Tuple[NetworkParams, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            metadata = json.loads(str(archive["metadata"]))
            arrays = {key: archive[key] for key in ARRAY_KEYS}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CorruptParameterFileError(f"Unreadable checkpoint {path}: {exc}") from exc

    if metadata.get("format") != FORMAT_TAG:
        raise CorruptParameterFileError(
            f"{path} has format {metadata.get('format')!r}, expected {FORMAT_TAG!r}"
        )
    try:
        params = NetworkParams(
            enc_weights=arrays["enc_weights"],
            hid_weights_ff=arrays["hid_weights_ff"],
            hid_weights_rec=arrays["hid_weights_rec"],
            out_weights=arrays["out_weights"],
            enc_lif=LifParams(arrays["enc_tau_mem"], arrays["enc_tau_syn"], arrays["enc_threshold"]),
            hid_lif=LifParams(arrays["hid_tau_mem"], arrays["hid_tau_syn"], arrays["hid_threshold"]),
            out_li=tuple(arrays["out_li"]),
            normalization=NormalizationSpec(arrays["norm_x_min"], arrays["norm_x_max"]),
            quantized=bool(metadata.get("quantized", False)),
            current_first=bool(metadata.get("current_first", True)),
        )
    except ValueError as exc:
        raise CorruptParameterFileError(f"Inconsistent checkpoint {path}: {exc}") from exc
    return params, metadata
