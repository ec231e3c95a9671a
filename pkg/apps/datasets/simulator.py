"""Synthetic quadrotor attitude trajectories and IMU synthesis.

Attitude programs are analytic so body rates are exact kinematic derivatives.
Translational motion uses a quasi-static thrust model: thrust cancels gravity
vertically, its horizontal part accelerates a point mass against linear drag.
"""

import abc
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence as SequenceType, Tuple, TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from apps.core.domain import DEFAULT_RATE_HZ, GRAVITY, Sequence
from apps.core.exceptions import ConfigurationError, InsufficientDataError

logger = logging.getLogger(__name__)

T = TypeVar("T")


class AttitudeProgram(abc.ABC):
    """An angle signal with analytic first and second time derivatives."""

    def __call__(self, t: ArrayLike) -> Tuple[NDArray, NDArray, NDArray]:
        t = np.atleast_1d(np.asarray_chkfinite(t, dtype=float))
        return self._y(t), self._dydt(t), self._d2ydt2(t)

    @abc.abstractmethod
    def _y(self, t: NDArray) -> NDArray:
        raise NotImplementedError

    @abc.abstractmethod
    def _dydt(self, t: NDArray) -> NDArray:
        raise NotImplementedError

    @abc.abstractmethod
    def _d2ydt2(self, t: NDArray) -> NDArray:
        raise NotImplementedError


class SinusoidProgram(AttitudeProgram):
    """Sum of sines ``sum_k a_k sin(w_k t + p_k)``; bounded by ``sum |a_k|``."""

    def __init__(self, amplitudes: ArrayLike, frequencies_hz: ArrayLike, phases: ArrayLike):
        self.amplitudes = np.asarray(amplitudes, dtype=float).reshape(-1, 1)
        self.omegas = 2.0 * np.pi * np.asarray(frequencies_hz, dtype=float).reshape(-1, 1)
        self.phases = np.asarray(phases, dtype=float).reshape(-1, 1)

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        max_tilt: float,
        f_min: float = 0.05,
        f_max: float = 2.0,
        n_components: int = 6,
    ) -> "SinusoidProgram":
        weights = rng.uniform(0.2, 1.0, n_components)
        amplitudes = max_tilt * weights / weights.sum()
        # log-uniform so slow drifts and quick manoeuvres are equally likely
        frequencies = np.exp(rng.uniform(np.log(f_min), np.log(f_max), n_components))
        phases = rng.uniform(0.0, 2.0 * np.pi, n_components)
        return cls(amplitudes, frequencies, phases)

    def _y(self, t):
        return (self.amplitudes * np.sin(self.omegas * t + self.phases)).sum(axis=0)

    def _dydt(self, t):
        return (self.amplitudes * self.omegas * np.cos(self.omegas * t + self.phases)).sum(axis=0)

    def _d2ydt2(self, t):
        return (
            -self.amplitudes * self.omegas**2 * np.sin(self.omegas * t + self.phases)
        ).sum(axis=0)


class HoldProgram(AttitudeProgram):
    def __init__(self, angle: float):
        self.angle = float(angle)

    def _y(self, t):
        return np.full_like(t, self.angle)

    def _dydt(self, t):
        return np.zeros_like(t)

    def _d2ydt2(self, t):
        return np.zeros_like(t)


class RampProgram(AttitudeProgram):
    """Constant rate, used for yaw."""

    def __init__(self, rate: float, start: float = 0.0):
        self.rate = float(rate)
        self.start = float(start)

    def _y(self, t):
        return self.start + self.rate * t

    def _dydt(self, t):
        return np.full_like(t, self.rate)

    def _d2ydt2(self, t):
        return np.zeros_like(t)


@dataclass(frozen=True)
class TrajectoryConfig:
    duration: float = 100.0
    rate: float = DEFAULT_RATE_HZ
    max_tilt: float = math.radians(45.0)
    f_min: float = 0.05
    f_max: float = 2.0
    n_components: int = 6
    yaw_rate_max: float = 0.0
    drag: float = 0.5
    equilibrium_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigurationError(f"rate must be positive, got {self.rate}")
        if not self.duration > 0:
            raise ConfigurationError(f"duration must be positive, got {self.duration}")
        if not 0.0 <= self.max_tilt < math.pi / 2:
            raise ConfigurationError(f"max_tilt must lie in [0, pi/2), got {self.max_tilt}")
        if not 0 < self.f_min <= self.f_max:
            raise ConfigurationError("Need 0 < f_min <= f_max")
        if self.n_components < 1:
            raise ConfigurationError("n_components must be at least 1")
        if self.drag < 0 or self.yaw_rate_max < 0:
            raise ConfigurationError("drag and yaw_rate_max must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.rate))


@dataclass(frozen=True)
class SensorModel:
    gyro_noise_density: float = 0.003
    accel_noise_density: float = 0.02
    gyro_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.gyro_noise_density < 0 or self.accel_noise_density < 0:
            raise ConfigurationError("Noise densities must be non-negative")
        for name in ("gyro_bias", "accel_bias"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ConfigurationError(f"{name} needs three axes")
            object.__setattr__(self, name, value)

    @classmethod
    def noiseless(cls) -> "SensorModel":
        return cls(gyro_noise_density=0.0, accel_noise_density=0.0)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["gyro_bias"] = list(self.gyro_bias)
        data["accel_bias"] = list(self.accel_bias)
        return data


@dataclass(frozen=True)
class SensorDelta:
    """Adjustment applied by ``augment``: extra biases and extra white-noise density."""

    gyro_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_noise_density: float = 0.0
    accel_noise_density: float = 0.0

    def __post_init__(self):
        if self.gyro_noise_density < 0 or self.accel_noise_density < 0:
            raise ConfigurationError("Noise density deltas must be non-negative")

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        accel_bias_scale: float = 0.2,
        gyro_bias_scale: float = 0.005,
        gyro_density_max: float = 0.003,
        accel_density_max: float = 0.02,
    ) -> "SensorDelta":
        return cls(
            gyro_bias=tuple(rng.uniform(-gyro_bias_scale, gyro_bias_scale, 3)),
            accel_bias=tuple(rng.uniform(-accel_bias_scale, accel_bias_scale, 3)),
            gyro_noise_density=float(rng.uniform(0.0, gyro_density_max)),
            accel_noise_density=float(rng.uniform(0.0, accel_density_max)),
        )


@dataclass
class Trajectory:
    t: NDArray
    pitch: NDArray
    roll: NDArray
    yaw: NDArray
    body_rates: NDArray
    accel_world: NDArray
    specific_force: NDArray
    dt: float
    programs: Dict[str, AttitudeProgram] = field(default_factory=dict)

    @property
    def truth(self) -> NDArray:
        return np.column_stack([self.pitch, self.roll])


def body_rates(
    t: ArrayLike,
    pitch_program: AttitudeProgram,
    roll_program: AttitudeProgram,
    yaw_program: AttitudeProgram,
) -> NDArray:
    """Body angular rates (p, q, r) from ZYX Euler angle rates."""
    theta, dtheta, _ = pitch_program(t)
    phi, dphi, _ = roll_program(t)
    _, dpsi, _ = yaw_program(t)
    p = dphi - dpsi * np.sin(theta)
    q = dtheta * np.cos(phi) + dpsi * np.cos(theta) * np.sin(phi)
    r = -dtheta * np.sin(phi) + dpsi * np.cos(theta) * np.cos(phi)
    return np.stack([p, q, r], axis=-1)


def _integrate_velocity(thrust_h: NDArray, drag: float, dt: float, equilibrium_start: bool) -> NDArray:
    """Exact solution of v' = u - drag * v for piecewise-linear u."""
    velocity = np.zeros_like(thrust_h)
    if drag > 0 and equilibrium_start:
        velocity[0] = thrust_h[0] / drag
    if drag > 0:
        alpha = math.exp(-drag * dt)
        b_hold = (1.0 - alpha) / drag
        b_ramp = 1.0 / drag - (1.0 - alpha) / (drag * drag * dt)
    for k in range(len(thrust_h) - 1):
        du = thrust_h[k + 1] - thrust_h[k]
        if drag > 0:
            velocity[k + 1] = alpha * velocity[k] + b_hold * thrust_h[k] + b_ramp * du
        else:
            velocity[k + 1] = velocity[k] + 0.5 * dt * (thrust_h[k] + thrust_h[k + 1])
    return velocity


def generate_trajectory(
    cfg: TrajectoryConfig,
    pitch_program: Optional[AttitudeProgram] = None,
    roll_program: Optional[AttitudeProgram] = None,
    yaw_program: Optional[AttitudeProgram] = None,
) -> Trajectory:
    rng = np.random.default_rng(cfg.seed)
    if pitch_program is None:
        pitch_program = SinusoidProgram.random(
            rng, cfg.max_tilt, cfg.f_min, cfg.f_max, cfg.n_components
        )
    if roll_program is None:
        roll_program = SinusoidProgram.random(
            rng, cfg.max_tilt, cfg.f_min, cfg.f_max, cfg.n_components
        )
    if yaw_program is None:
        yaw_rate = rng.uniform(-cfg.yaw_rate_max, cfg.yaw_rate_max) if cfg.yaw_rate_max else 0.0
        yaw_program = RampProgram(yaw_rate)

    t = np.arange(cfg.n_samples) * cfg.dt
    pitch, _, _ = pitch_program(t)
    roll, _, _ = roll_program(t)
    yaw, _, _ = yaw_program(t)
    rates = body_rates(t, pitch_program, roll_program, yaw_program)

    rotation = Rotation.from_euler("ZYX", np.column_stack([yaw, pitch, roll]))
    thrust = GRAVITY / (np.cos(roll) * np.cos(pitch))
    body_thrust = np.column_stack([np.zeros_like(t), np.zeros_like(t), -thrust])
    thrust_h = rotation.apply(body_thrust)[:, :2]

    velocity = _integrate_velocity(thrust_h, cfg.drag, cfg.dt, cfg.equilibrium_start)
    accel_world = np.zeros((len(t), 3))
    accel_world[:, :2] = thrust_h - cfg.drag * velocity

    gravity_world = np.array([0.0, 0.0, GRAVITY])
    specific_force = rotation.inv().apply(gravity_world - accel_world)

    logger.debug(
        "Generated %s samples, peak tilt %.1f deg",
        len(t),
        np.degrees(np.max(np.abs(np.concatenate([pitch, roll])))) if len(t) else 0.0,
    )
    return Trajectory(
        t=t,
        pitch=pitch,
        roll=roll,
        yaw=yaw,
        body_rates=rates,
        accel_world=accel_world,
        specific_force=specific_force,
        dt=cfg.dt,
        programs={"pitch": pitch_program, "roll": roll_program, "yaw": yaw_program},
    )


def synthesize_imu(
    trajectory: Trajectory, model: SensorModel, source: str = "sim", name: str = ""
) -> Sequence:
    rng = np.random.default_rng(model.seed)
    rate = 1.0 / trajectory.dt
    n = len(trajectory.t)
    noise = rng.standard_normal((n, 6))
    gyro = (
        trajectory.body_rates
        + np.asarray(model.gyro_bias)
        + model.gyro_noise_density * math.sqrt(rate) * noise[:, :3]
    )
    accel = (
        trajectory.specific_force
        + np.asarray(model.accel_bias)
        + model.accel_noise_density * math.sqrt(rate) * noise[:, 3:]
    )
    return Sequence(
        t=trajectory.t,
        gyro=gyro,
        accel=accel,
        truth=trajectory.truth,
        dt=trajectory.dt,
        source=source,
        name=name,
    )


def augment(seq: Sequence, delta: SensorDelta, seed: int) -> Sequence:
    """Re-bias and re-noise a copy of ``seq``; ground truth is untouched."""
    rng = np.random.default_rng(seed)
    rate = 1.0 / seq.dt
    noise = rng.standard_normal((len(seq), 6))
    gyro = (
        seq.gyro
        + np.asarray(delta.gyro_bias, dtype=float)
        + delta.gyro_noise_density * math.sqrt(rate) * noise[:, :3]
    )
    accel = (
        seq.accel
        + np.asarray(delta.accel_bias, dtype=float)
        + delta.accel_noise_density * math.sqrt(rate) * noise[:, 3:]
    )
    return seq.with_imu(gyro=gyro, accel=accel)


def offset_hold_sequence(
    pitch: float = math.radians(20.0),
    roll: float = 0.0,
    duration: float = 5.0,
    rate: float = DEFAULT_RATE_HZ,
    model: Optional[SensorModel] = None,
) -> Sequence:
    """A hover held at a fixed tilt; estimators starting level see an initial offset."""
    cfg = TrajectoryConfig(duration=duration, rate=rate, max_tilt=0.0)
    trajectory = generate_trajectory(
        cfg, pitch_program=HoldProgram(pitch), roll_program=HoldProgram(roll)
    )
    return synthesize_imu(trajectory, model or SensorModel(), name="offset_hold")


@dataclass(frozen=True)
class SimulatedSequence:
    sequence: Sequence
    seed: int
    trajectory: TrajectoryConfig
    sensor: SensorModel
    augmentation: Optional[int] = None


def simulate_dataset(
    n: int,
    trajectory_cfg: TrajectoryConfig,
    sensor_model: SensorModel,
    seed: int,
    augmentations: int = 0,
    source: str = "sim",
) -> List[SimulatedSequence]:
    """``n`` independent recordings plus ``augmentations`` augmented copies of each.

    Every recording draws its trajectory and noise from its own child of
    ``SeedSequence(seed)`` so adding recordings never changes earlier ones.
    """
    if n < 1:
        raise ConfigurationError(f"--n must be at least 1, got {n}")
    results = []
    for index, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        traj_seed, noise_seed, aug_seed = (int(s) for s in child.generate_state(3))
        cfg = replace(trajectory_cfg, seed=traj_seed)
        model = replace(sensor_model, seed=noise_seed)
        name = f"seq_{index:03d}"
        sequence = synthesize_imu(generate_trajectory(cfg), model, source=source, name=name)
        results.append(SimulatedSequence(sequence, traj_seed, cfg, model))

        aug_rng = np.random.default_rng(aug_seed)
        for aug_index in range(augmentations):
            delta = SensorDelta.random(aug_rng)
            augmented = augment(sequence, delta, seed=int(aug_rng.integers(2**32)))
            augmented = replace(augmented, name=f"{name}_aug{aug_index}")
            results.append(SimulatedSequence(augmented, traj_seed, cfg, model, aug_index))
    logger.info("Simulated %s sequences (%s recordings, %s augmentations each)", len(results), n, augmentations)
    return results


def split_sequences(
    items: SequenceType[T],
    seed: int,
    fractions: Tuple[float, float, float] = (0.7, 0.2, 0.1),
) -> Tuple[List[T], List[T], List[T]]:
    """Seeded disjoint train / validation / test partition."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ConfigurationError(f"Split fractions must be three non-negative values summing to 1: {fractions}")
    n = len(items)
    if n < 3:
        raise InsufficientDataError(f"Need at least 3 sequences to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(fractions[0] * n)))
    n_val = max(1, int(round(fractions[1] * n)))
    n_train = min(n_train, n - n_val - 1)
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train : n_train + n_val]]
    test = [items[i] for i in order[n_train + n_val :]]
    return train, val, test
