"""PSO tuning of the classical filters against dataset MSE."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence as SequenceType

import numpy as np

from apps.core.domain import Sequence
from apps.core.exceptions import ConfigurationError, InsufficientDataError

from .algorithms import ComplementaryParams, EkfParams, MadgwickParams, MahonyParams, get_filter, run_filter
from .pso import PsoConfig, PsoResult, pso_minimize

logger = logging.getLogger(__name__)

MAHONY_KP_SCALE = 10.0
EKF_LOG_MIN = -6.0
EKF_LOG_SPAN = 8.0


@dataclass(frozen=True)
class ParamMapping:
    """Unit-box encoding of one estimator's tunable parameters."""

    kind: str
    filter_kind: str
    names: tuple
    decode: Callable[[np.ndarray], object]
    encode: Callable[[object], np.ndarray]

    @property
    def dims(self) -> int:
        return len(self.names)

    @property
    def params_class(self):
        return get_filter(self.filter_kind).params_class


def _ekf_decode(u):
    return EkfParams(
        q_proc=float(10.0 ** (EKF_LOG_MIN + EKF_LOG_SPAN * u[0])),
        r_meas=float(10.0 ** (EKF_LOG_MIN + EKF_LOG_SPAN * u[1])),
    )


def _ekf_encode(p):
    return (np.log10([p.q_proc, p.r_meas]) - EKF_LOG_MIN) / EKF_LOG_SPAN


MAPPINGS: Dict[str, ParamMapping] = {
    m.kind: m
    for m in (
        ParamMapping(
            "complementary",
            "complementary",
            ("gamma",),
            lambda u: ComplementaryParams(gamma=float(u[0])),
            lambda p: np.array([p.gamma]),
        ),
        ParamMapping(
            "adaptive",
            "complementary",
            ("gamma",),
            lambda u: ComplementaryParams(gamma=float(u[0]), adaptive=True),
            lambda p: np.array([p.gamma]),
        ),
        ParamMapping(
            "mahony",
            "mahony",
            ("k_p", "k_i"),
            lambda u: MahonyParams(k_p=MAHONY_KP_SCALE * float(u[0]), k_i=float(u[1])),
            lambda p: np.array([p.k_p / MAHONY_KP_SCALE, p.k_i]),
        ),
        ParamMapping(
            "madgwick",
            "madgwick",
            ("beta",),
            lambda u: MadgwickParams(beta=float(u[0])),
            lambda p: np.array([p.beta]),
        ),
        ParamMapping("ekf", "ekf", ("q_proc", "r_meas"), _ekf_decode, _ekf_encode),
    )
}


def get_mapping(kind: str) -> ParamMapping:
    try:
        return MAPPINGS[kind]
    except KeyError:
        raise ConfigurationError(
            f"Cannot tune {kind!r}; expected one of {', '.join(MAPPINGS)}"
        ) from None


def dataset_mse(
    kind: str, params_list: SequenceType, sequences: SequenceType[Sequence], known_initial: bool = False
) -> np.ndarray:
    """Per-timestep MSE (rad^2) averaged over sequences, one value per parameter set."""
    mapping = get_mapping(kind)
    traces = run_filter(mapping.filter_kind, params_list, sequences, known_initial)
    per_sequence = [
        np.mean((trace - seq.truth[None]) ** 2, axis=(1, 2)) for trace, seq in zip(traces, sequences)
    ]
    return np.mean(per_sequence, axis=0)


def swarm_cost(kind: str, sequences: SequenceType[Sequence]) -> Callable[[np.ndarray], np.ndarray]:
    mapping = get_mapping(kind)

    def cost(positions: np.ndarray) -> np.ndarray:
        return dataset_mse(kind, [mapping.decode(u) for u in positions], sequences)

    return cost


@dataclass
class TuningResult:
    kind: str
    params: object
    cost: float
    pso: PsoResult

    def report_rows(self) -> List[Dict[str, float]]:
        """``iter, gbest_cost, param_i`` rows of the tuning report."""
        rows = []
        for iteration, (cost, best) in enumerate(zip(self.pso.history, self.pso.best_history)):
            row = {"iter": iteration, "gbest_cost": cost}
            row.update({f"param_{i}": float(v) for i, v in enumerate(best)})
            rows.append(row)
        return rows


def tune_filter(
    kind: str,
    sequences: SequenceType[Sequence],
    cfg: PsoConfig = PsoConfig(),
    seed: int = 0,
) -> TuningResult:
    """Best parameters of ``kind`` for ``sequences``, each filter started uninformed."""
    sequences = list(sequences)
    if not sequences:
        raise InsufficientDataError("Tuning needs at least one sequence")
    mapping = get_mapping(kind)
    logger.info(
        "Tuning %s (%s) on %d sequences with %d particles",
        kind,
        ", ".join(mapping.names),
        len(sequences),
        cfg.n_particles,
    )
    result = pso_minimize(swarm_cost(kind, sequences), mapping.dims, cfg, seed=seed, vectorized=True)
    params = mapping.decode(result.best)
    logger.info("Tuned %s: %s (cost %.6g)", kind, params, result.cost)
    return TuningResult(kind=kind, params=params, cost=result.cost, pso=result)
