"""Uniform estimate-a-sequence interface over the SNN and the classical filters."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence as SequenceType

import numpy as np

from apps.core.domain import Sequence
from apps.core.exceptions import ConfigurationError
from apps.filters.algorithms import run_filter
from apps.filters.params import read_params
from apps.filters.tuning import MAPPINGS, get_mapping
from apps.snn.checkpoints import load_checkpoint
from apps.snn.runtime import NetworkParams, estimate_sequence

logger = logging.getLogger(__name__)

SNN_KIND = "snn"


class Estimator(Protocol):
    name: str
    known_initial: bool

    def estimate(self, sequence: Sequence, imu: Optional[np.ndarray] = None) -> np.ndarray:
        """(T, 2) ``[pitch, roll]`` estimates for ``sequence``."""

    def estimate_many(self, sequences: SequenceType[Sequence]) -> List[np.ndarray]:
        ...


@dataclass
class SnnEstimator:
    params: NetworkParams
    quantized: bool = False
    name: str = SNN_KIND

    # the network always starts from rest
    known_initial: bool = False

    def estimate(self, sequence: Sequence, imu: Optional[np.ndarray] = None) -> np.ndarray:
        return estimate_sequence(self.params, sequence, quantized=self.quantized, imu=imu).estimates

    def estimate_many(self, sequences: SequenceType[Sequence]) -> List[np.ndarray]:
        return [self.estimate(seq) for seq in sequences]


@dataclass
class FilterEstimator:
    kind: str
    params: object
    known_initial: bool = False
    name: str = ""

    def __post_init__(self):
        self.mapping = get_mapping(self.kind)
        if not self.name:
            self.name = self.kind

    def estimate(self, sequence: Sequence, imu: Optional[np.ndarray] = None) -> np.ndarray:
        if imu is not None:
            imu = np.asarray(imu, dtype=float)
            sequence = sequence.with_imu(gyro=imu[:, :3], accel=imu[:, 3:])
        return self.estimate_many([sequence])[0]

    def estimate_many(self, sequences: SequenceType[Sequence]) -> List[np.ndarray]:
        traces = run_filter(self.mapping.filter_kind, [self.params], list(sequences), self.known_initial)
        return [trace[0] for trace in traces]


def load_estimator(
    kind: str,
    params_path: Optional[Path] = None,
    known_initial: bool = False,
    quantized: bool = False,
):
    """Estimator from a checkpoint (``snn``) or a filter parameter file.

    Filters without a parameter file run with their default parameters.
    """
    if kind == SNN_KIND:
        if params_path is None:
            raise ConfigurationError("The snn estimator needs --params pointing at a checkpoint")
        params, _ = load_checkpoint(params_path)
        name = "snn-quantized" if quantized else SNN_KIND
        return SnnEstimator(params, quantized=quantized, name=name)

    mapping = get_mapping(kind)
    if params_path is None:
        params = mapping.params_class(adaptive=True) if kind == "adaptive" else mapping.params_class()
        logger.info("No parameter file for %s; using defaults %s", kind, params)
    else:
        _, params = read_params(params_path, expected_kind=kind)
    return FilterEstimator(kind, params, known_initial=known_initial)


def estimator_kinds() -> List[str]:
    return [SNN_KIND, *MAPPINGS]
