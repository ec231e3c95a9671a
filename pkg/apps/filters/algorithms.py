"""Classical pitch/roll estimators.

Each filter is a pure state machine. The update kernels work on arrays with
arbitrary leading batch dimensions so one call can advance many parameter
sets over many sequences; the ``*_step`` functions are the single-sample
form of the same kernels.
"""

import abc
import logging
from dataclasses import dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence as SequenceType, Type

import numpy as np

from apps.core.domain import (
    EulerAngles,
    ImuSample,
    Quaternion,
    Sequence,
    euler_to_quat_array,
    gravity_direction_body,
    normalize_quat,
    quat_multiply,
    quat_to_euler_array,
    tilt_from_accel,
    wrap_angle,
)
from apps.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

GRADIENT_EPSILON = 1e-12
CONDITION_LIMIT = 1e12
COVARIANCE_INFLATION = 1.1
INITIAL_COVARIANCE = 0.5


@dataclass(frozen=True)
class ComplementaryParams:
    """Gyro weight ``gamma`` and the adaptive variant's settings.

    ``k_a`` is gamma reduction per degree of gyro/accelerometer disagreement
    and ``omega_gate`` is in rad/s.
    """

    gamma: float = 0.98
    adaptive: bool = False
    k_a: float = 0.01
    omega_gate: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.k_a < 0 or self.omega_gate < 0:
            raise ConfigurationError("k_a and omega_gate must be non-negative")


@dataclass(frozen=True)
class MahonyParams:
    k_p: float = 1.0
    k_i: float = 0.1

    def __post_init__(self):
        if self.k_p < 0 or self.k_i < 0:
            raise ConfigurationError("k_p and k_i must be non-negative")


@dataclass(frozen=True)
class MadgwickParams:
    beta: float = 0.1

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class EkfParams:
    q_proc: float = 1e-3
    r_meas: float = 1e-1

    def __post_init__(self):
        if not self.q_proc >= 0 or not self.r_meas > 0:
            raise ConfigurationError("EKF needs q_proc >= 0 and r_meas > 0")


@dataclass(frozen=True)
class MahonyState:
    q: Quaternion
    bias: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EkfState:
    q: Quaternion
    P: np.ndarray

    @classmethod
    def initial(cls, q: Optional[Quaternion] = None) -> "EkfState":
        return cls(q or Quaternion.identity(), INITIAL_COVARIANCE * np.eye(4))


def pure(vector) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    return np.concatenate([np.zeros(vector.shape[:-1] + (1,)), vector], axis=-1)


def quat_rate(q, omega) -> np.ndarray:
    """Quaternion derivative ``0.5 q (x) (0, omega)``."""
    return 0.5 * quat_multiply(q, pure(omega))


def integrate_quaternion(q, omega, dt: float) -> np.ndarray:
    return normalize_quat(q + quat_rate(q, omega) * dt)


def propagate_angles(angles, gyro, dt: float) -> np.ndarray:
    """Per-axis gyro propagation: pitch with the body y rate, roll with the body x rate."""
    gyro = np.asarray(gyro, dtype=float)
    rates = np.stack([gyro[..., 1], gyro[..., 0]], axis=-1)
    return wrap_angle(angles + rates * dt)


def integrate_gyro_euler(gyro, dt: float, initial=None) -> np.ndarray:
    """Reference per-axis gyro integration, (T, 3) -> (T, 2) ``[pitch, roll]``."""
    angles = np.zeros(2) if initial is None else np.asarray(initial, dtype=float)
    trace = np.empty((len(gyro), 2))
    for k, omega in enumerate(np.asarray(gyro, dtype=float)):
        angles = propagate_angles(angles, omega, dt)
        trace[k] = angles
    return trace


def integrate_gyro_quaternion(gyro, dt: float, initial=None) -> np.ndarray:
    """Reference first-order quaternion gyro integration, (T, 3) -> (T, 2)."""
    q = np.array([1.0, 0.0, 0.0, 0.0]) if initial is None else np.asarray(initial, dtype=float)
    trace = np.empty((len(gyro), 4))
    for k, omega in enumerate(np.asarray(gyro, dtype=float)):
        q = integrate_quaternion(q, omega, dt)
        trace[k] = q
    return quat_to_euler_array(trace)


def adaptive_gamma(gamma, estimate, accel_angles, gyro, k_a, omega_gate) -> np.ndarray:
    """Lower gamma toward accelerometer trust while the vehicle is nearly still.

    gamma_eff = clip(gamma - k_a * |estimate - accel| in degrees, 0, gamma),
    applied only when ||omega|| < omega_gate.
    """
    gamma = np.asarray(gamma, dtype=float)[..., None]
    still = (np.linalg.norm(gyro, axis=-1) < omega_gate)[..., None]
    disagreement = np.degrees(np.abs(wrap_angle(estimate - accel_angles)))
    lowered = np.clip(gamma - np.asarray(k_a)[..., None] * disagreement, 0.0, gamma)
    return np.where(still, lowered, gamma)


def complementary_update(angles, gyro, accel, dt, gamma, adaptive=False, k_a=0.01, omega_gate=0.1):
    propagated = propagate_angles(angles, gyro, dt)
    accel_angles, observable = tilt_from_accel(accel)
    if adaptive:
        weight = adaptive_gamma(gamma, propagated, accel_angles, gyro, k_a, omega_gate)
    else:
        weight = np.asarray(gamma, dtype=float)[..., None]
    blended = weight * propagated + (1.0 - weight) * accel_angles
    return np.where(observable[..., None], blended, propagated)


def _unit_accel(accel):
    accel = np.asarray(accel, dtype=float)
    norm = np.linalg.norm(accel, axis=-1, keepdims=True)
    _, observable = tilt_from_accel(accel)
    return accel / np.where(observable[..., None], norm, 1.0), observable


def mahony_update(q, bias, gyro, accel, dt, k_p, k_i):
    measured, observable = _unit_accel(accel)
    error = np.cross(measured, gravity_direction_body(q)) * observable[..., None]
    bias = bias - np.asarray(k_i)[..., None] * error * dt
    omega = gyro - bias + np.asarray(k_p)[..., None] * error
    return integrate_quaternion(q, omega, dt), bias


def madgwick_gradient(q, measured):
    """``J^T f`` of the gravity alignment cost for unit ``measured`` accel."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    f = gravity_direction_body(q) - measured
    f = np.stack(
        [
            f[..., 0],
            f[..., 1],
            2.0 * (0.5 - x * x - y * y) - measured[..., 2],
        ],
        axis=-1,
    )
    zero = np.zeros_like(w)
    jacobian = np.stack(
        [
            np.stack([-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x], axis=-1),
            np.stack([2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y], axis=-1),
            np.stack([zero, -4.0 * x, -4.0 * y, zero], axis=-1),
        ],
        axis=-2,
    )
    return np.einsum("...ji,...j->...i", jacobian, f)


def madgwick_update(q, gyro, accel, dt, beta):
    measured, observable = _unit_accel(accel)
    gradient = madgwick_gradient(q, measured)
    norm = np.linalg.norm(gradient, axis=-1, keepdims=True)
    correct = observable[..., None] & (norm >= GRADIENT_EPSILON)
    direction = np.where(correct, gradient / np.where(correct, norm, 1.0), 0.0)
    rate = quat_rate(q, gyro) - np.asarray(beta)[..., None] * direction
    return normalize_quat(q + rate * dt)


def _xi(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([-x, -y, -z], axis=-1),
            np.stack([w, -z, y], axis=-1),
            np.stack([z, w, -x], axis=-1),
            np.stack([-y, x, w], axis=-1),
        ],
        axis=-2,
    )


def _omega_matrix(omega):
    p, q, r = omega[..., 0], omega[..., 1], omega[..., 2]
    zero = np.zeros_like(p)
    return np.stack(
        [
            np.stack([zero, -p, -q, -r], axis=-1),
            np.stack([p, zero, r, -q], axis=-1),
            np.stack([q, -r, zero, p], axis=-1),
            np.stack([r, q, -p, zero], axis=-1),
        ],
        axis=-2,
    )


def _measurement_jacobian(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return 2.0 * np.stack(
        [
            np.stack([-y, z, -w, x], axis=-1),
            np.stack([x, w, z, y], axis=-1),
            np.stack([w, -x, -y, z], axis=-1),
        ],
        axis=-2,
    )


def ekf_update(q, P, gyro, accel, dt, q_proc, r_meas):
    """Quaternion random-walk EKF: gyro-driven predict, gravity-direction update."""
    q_proc = np.asarray(q_proc, dtype=float)[..., None, None]
    r_meas = np.asarray(r_meas, dtype=float)[..., None, None]
    identity = np.eye(4)

    F = identity + 0.5 * dt * _omega_matrix(np.broadcast_to(gyro, q.shape[:-1] + (3,)))
    xi = _xi(q)
    Q = q_proc * (dt * dt / 4.0) * xi @ np.swapaxes(xi, -1, -2)
    q_pred = q + quat_rate(q, gyro) * dt
    P_pred = F @ P @ np.swapaxes(F, -1, -2) + Q

    measured, observable = _unit_accel(accel)
    H = _measurement_jacobian(q_pred)
    Ht = np.swapaxes(H, -1, -2)
    S = H @ P_pred @ Ht + r_meas * np.eye(3)
    usable = observable & (np.linalg.cond(S) <= CONDITION_LIMIT)
    S_safe = np.where(usable[..., None, None], S, np.eye(3))
    K = np.swapaxes(np.linalg.solve(S_safe, H @ np.swapaxes(P_pred, -1, -2)), -1, -2)
    innovation = measured - gravity_direction_body(q_pred)
    correction = np.einsum("...ij,...j->...i", K, innovation)

    IKH = identity - K @ H
    P_upd = IKH @ P_pred @ np.swapaxes(IKH, -1, -2) + K @ (r_meas * np.eye(3)) @ np.swapaxes(K, -1, -2)
    inflated_observable = np.where(observable[..., None, None], COVARIANCE_INFLATION * P_pred, P_pred)

    q_new = np.where(usable[..., None], q_pred + correction, q_pred)
    P_new = np.where(usable[..., None, None], P_upd, inflated_observable)
    P_new = 0.5 * (P_new + np.swapaxes(P_new, -1, -2))
    return normalize_quat(q_new), P_new


class AttitudeFilter(abc.ABC):
    """Batched driver for one filter family."""

    name = ""
    params_class: Type = object
    uses_quaternion = True

    @classmethod
    def param_arrays(cls, params_list: SequenceType) -> Dict[str, np.ndarray]:
        return {
            f.name: np.array([getattr(p, f.name) for p in params_list], dtype=float)
            for f in fields(cls.params_class)
            if f.type is not bool and f.type != "bool"
        }

    @classmethod
    def initial_state(cls, batch_shape, initial_angles=None) -> Dict[str, np.ndarray]:
        if initial_angles is None:
            q = np.zeros(batch_shape + (4,))
            q[..., 0] = 1.0
        else:
            initial_angles = np.broadcast_to(initial_angles, batch_shape + (2,))
            q = euler_to_quat_array(initial_angles[..., 0], initial_angles[..., 1])
        return {"q": q}

    @classmethod
    @abc.abstractmethod
    def update(cls, state, arrays, gyro, accel, dt, params_list):
        raise NotImplementedError

    @classmethod
    def angles(cls, state) -> np.ndarray:
        return quat_to_euler_array(state["q"])


class ComplementaryFilter(AttitudeFilter):
    name = "complementary"
    params_class = ComplementaryParams
    uses_quaternion = False

    @classmethod
    def initial_state(cls, batch_shape, initial_angles=None):
        if initial_angles is None:
            return {"angles": np.zeros(batch_shape + (2,))}
        return {"angles": np.array(np.broadcast_to(initial_angles, batch_shape + (2,)), dtype=float)}

    @classmethod
    def update(cls, state, arrays, gyro, accel, dt, params_list):
        adaptive = {p.adaptive for p in params_list}
        if len(adaptive) != 1:
            raise ConfigurationError("A batch must not mix adaptive and plain complementary filters")
        angles = complementary_update(
            state["angles"],
            gyro,
            accel,
            dt,
            arrays["gamma"],
            adaptive=adaptive.pop(),
            k_a=arrays["k_a"],
            omega_gate=arrays["omega_gate"],
        )
        return {"angles": angles}

    @classmethod
    def angles(cls, state):
        return state["angles"]


class MahonyFilter(AttitudeFilter):
    name = "mahony"
    params_class = MahonyParams

    @classmethod
    def initial_state(cls, batch_shape, initial_angles=None):
        state = super().initial_state(batch_shape, initial_angles)
        state["bias"] = np.zeros(batch_shape + (3,))
        return state

    @classmethod
    def update(cls, state, arrays, gyro, accel, dt, params_list):
        q, bias = mahony_update(state["q"], state["bias"], gyro, accel, dt, arrays["k_p"], arrays["k_i"])
        return {"q": q, "bias": bias}


class MadgwickFilter(AttitudeFilter):
    name = "madgwick"
    params_class = MadgwickParams

    @classmethod
    def update(cls, state, arrays, gyro, accel, dt, params_list):
        return {"q": madgwick_update(state["q"], gyro, accel, dt, arrays["beta"])}


class ExtendedKalmanFilter(AttitudeFilter):
    name = "ekf"
    params_class = EkfParams

    @classmethod
    def initial_state(cls, batch_shape, initial_angles=None):
        state = super().initial_state(batch_shape, initial_angles)
        state["P"] = np.broadcast_to(INITIAL_COVARIANCE * np.eye(4), batch_shape + (4, 4)).copy()
        return state

    @classmethod
    def update(cls, state, arrays, gyro, accel, dt, params_list):
        q, P = ekf_update(state["q"], state["P"], gyro, accel, dt, arrays["q_proc"], arrays["r_meas"])
        return {"q": q, "P": P}


FILTERS: Dict[str, Type[AttitudeFilter]] = {
    f.name: f for f in (ComplementaryFilter, MahonyFilter, MadgwickFilter, ExtendedKalmanFilter)
}


def get_filter(kind: str) -> Type[AttitudeFilter]:
    try:
        return FILTERS[kind]
    except KeyError:
        raise ConfigurationError(
            f"Unknown filter {kind!r}; expected one of {', '.join(FILTERS)}"
        ) from None


def run_filter(
    kind: str,
    params_list: SequenceType,
    sequences: SequenceType[Sequence],
    known_initial: bool = False,
) -> List[np.ndarray]:
    """Estimates for every parameter set on every sequence.

    Returns one array per sequence of shape (len(params_list), T, 2).
    Sequences of equal length and dt are advanced together.
    """
    filter_cls = get_filter(kind)
    params_list = list(params_list)
    if not params_list:
        raise ConfigurationError("run_filter needs at least one parameter set")
    arrays = {k: v[:, None] for k, v in filter_cls.param_arrays(params_list).items()}

    groups: Dict[tuple, List[int]] = {}
    for index, seq in enumerate(sequences):
        groups.setdefault((len(seq), seq.dt), []).append(index)

    results: List[Optional[np.ndarray]] = [None] * len(sequences)
    for (steps, dt), members in groups.items():
        gyro = np.stack([sequences[i].gyro for i in members])[None]
        accel = np.stack([sequences[i].accel for i in members])[None]
        batch_shape = (len(params_list), len(members))
        initial = None
        if known_initial:
            initial = np.stack([sequences[i].truth[0] for i in members])[None]
        state = filter_cls.initial_state(batch_shape, initial)
        trace = np.empty(batch_shape + (steps, 2))
        for k in range(steps):
            state = filter_cls.update(state, arrays, gyro[:, :, k], accel[:, :, k], dt, params_list)
            trace[:, :, k] = filter_cls.angles(state)
        for position, index in enumerate(members):
            results[index] = trace[:, position]
    return results


def run_single(kind: str, params, sequence: Sequence, known_initial: bool = False) -> np.ndarray:
    """(T, 2) estimate trace of one filter on one sequence."""
    return run_filter(kind, [params], [sequence], known_initial)[0][0]


def _sample_arrays(sample: ImuSample):
    return np.asarray(sample.gyro, dtype=float), np.asarray(sample.accel, dtype=float)


def complementary_step(state: EulerAngles, params: ComplementaryParams, sample: ImuSample, dt: float) -> EulerAngles:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gyro, accel = _sample_arrays(sample)
    angles = complementary_update(
        state.as_array(), gyro, accel, dt, params.gamma, params.adaptive, params.k_a, params.omega_gate
    )
    return EulerAngles.from_array(angles)


def mahony_step(state: MahonyState, params: MahonyParams, sample: ImuSample, dt: float) -> MahonyState:
    gyro, accel = _sample_arrays(sample)
    q, bias = mahony_update(state.q.as_array(), np.asarray(state.bias, dtype=float), gyro, accel, dt, params.k_p, params.k_i)
    return MahonyState(Quaternion.from_array(q), tuple(float(b) for b in bias))


def madgwick_step(q: Quaternion, params: MadgwickParams, sample: ImuSample, dt: float) -> Quaternion:
    gyro, accel = _sample_arrays(sample)
    return Quaternion.from_array(madgwick_update(q.as_array(), gyro, accel, dt, params.beta))


def ekf_step(state: EkfState, params: EkfParams, sample: ImuSample, dt: float) -> EkfState:
    gyro, accel = _sample_arrays(sample)
    q, P = ekf_update(state.q.as_array(), state.P, gyro, accel, dt, params.q_proc, params.r_meas)
    return EkfState(Quaternion.from_array(q), P)


def default_params(kind: str):
    return get_filter(kind).params_class()


def filter_names() -> Iterable[str]:
    return FILTERS.keys()


__all__ = [
    "ComplementaryParams",
    "MahonyParams",
    "MadgwickParams",
    "EkfParams",
    "MahonyState",
    "EkfState",
    "complementary_step",
    "mahony_step",
    "madgwick_step",
    "ekf_step",
    "run_filter",
    "run_single",
    "integrate_gyro_euler",
    "integrate_gyro_quaternion",
    "get_filter",
    "default_params",
    "FILTERS",
]
