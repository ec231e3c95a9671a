"""Attitude value types and the quaternion / tilt math shared by every app.

Conventions: aerospace ZYX Euler angles, body frame x forward / y right /
z down, quaternions ``(w, x, y, z)`` rotate body vectors into the world frame.
The accelerometer convention reads ``+g`` on body z when level.
Angle arrays are always ordered ``[pitch, roll]``.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Sequence as SequenceType, Tuple

import numpy as np

from .exceptions import NonFiniteInputError, UnobservableError

GRAVITY = 9.80665
DEFAULT_RATE_HZ = 200.0
DEFAULT_DT = 1.0 / DEFAULT_RATE_HZ
IMU_CHANNELS = ("gx", "gy", "gz", "ax", "ay", "az")
MIN_ACCEL_NORM = 0.1

GYRO_FULL_SCALE = 34.9  # rad/s, +-2000 deg/s
ACCEL_FULL_SCALE = 156.9  # m/s^2, +-16 g


def wrap_angle(angle):
    """Wrap radians into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class EulerAngles:
    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("pitch", "roll"):
            value = getattr(self, name)
            if not math.isfinite(value) or not -math.pi < value <= math.pi:
                raise ValueError(f"{name} must lie in (-pi, pi], got {value}")

    @classmethod
    def from_array(cls, values) -> "EulerAngles":
        pitch, roll = np.asarray(values, dtype=float)[:2]
        return cls(pitch=float(pitch), roll=float(roll))

    @classmethod
    def from_degrees(cls, pitch: float, roll: float) -> "EulerAngles":
        return cls(pitch=math.radians(pitch), roll=math.radians(roll))

    def as_array(self) -> np.ndarray:
        return np.array([self.pitch, self.roll])

    def degrees(self) -> Tuple[float, float]:
        return math.degrees(self.pitch), math.degrees(self.roll)


@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        w, x, y, z = (float(v) for v in np.asarray(values, dtype=float)[:4])
        return cls(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        norm = self.norm
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError("Cannot normalize a zero or non-finite quaternion")
        return Quaternion.from_array(self.as_array() / norm)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: Tuple[float, float, float]
    accel: Tuple[float, float, float]

    def __post_init__(self):
        values = (self.t, *self.gyro, *self.accel)
        if len(values) != 7:
            raise ValueError("ImuSample needs three gyro and three accel axes")
        for index, value in enumerate(values[1:]):
            if not math.isfinite(value):
                raise NonFiniteInputError(index, value)
        if not math.isfinite(self.t):
            raise ValueError(f"Sample time must be finite, got {self.t}")

    def as_array(self) -> np.ndarray:
        return np.array([*self.gyro, *self.accel], dtype=float)


@dataclass(frozen=True)
class Sequence:
    """Timestamped 6-DOF IMU recording with pitch/roll ground truth.

    Stored column-wise: ``t`` (T,), ``gyro`` (T, 3), ``accel`` (T, 3),
    ``truth`` (T, 2) as ``[pitch, roll]`` radians.
    """

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    truth: np.ndarray
    dt: float = DEFAULT_DT
    source: str = "sim"
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        truth = np.asarray(self.truth, dtype=float).reshape(-1, 2)
        if not len(t) == len(gyro) == len(accel) == len(truth):
            raise ValueError(
                f"Sequence columns differ in length: t={len(t)}, gyro={len(gyro)}, "
                f"accel={len(accel)}, truth={len(truth)}"
            )
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("Sample times must be strictly increasing")
        imu = np.hstack([gyro, accel])
        bad = ~np.isfinite(imu)
        if bad.any():
            row, channel = np.argwhere(bad)[0]
            raise NonFiniteInputError(int(channel), float(imu[row, channel]))
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(truth)):
            raise ValueError("Sample times and ground truth must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "accel", accel)
        object.__setattr__(self, "truth", truth)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(
        cls,
        samples: SequenceType[ImuSample],
        truth: SequenceType[EulerAngles],
        dt: float = DEFAULT_DT,
        **kwargs,
    ) -> "Sequence":
        return cls(
            t=np.array([s.t for s in samples], dtype=float),
            gyro=np.array([s.gyro for s in samples], dtype=float).reshape(-1, 3),
            accel=np.array([s.accel for s in samples], dtype=float).reshape(-1, 3),
            truth=np.array([a.as_array() for a in truth], dtype=float).reshape(-1, 2),
            dt=dt,
            **kwargs,
        )

    @property
    def samples(self) -> List[ImuSample]:
        return [
            ImuSample(float(t), tuple(g), tuple(a))
            for t, g, a in zip(self.t, self.gyro, self.accel)
        ]

    @property
    def truth_angles(self) -> List[EulerAngles]:
        return [EulerAngles.from_array(row) for row in self.truth]

    @property
    def imu(self) -> np.ndarray:
        return np.hstack([self.gyro, self.accel])

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    def with_imu(self, gyro=None, accel=None) -> "Sequence":
        return replace(
            self,
            gyro=self.gyro if gyro is None else gyro,
            accel=self.accel if accel is None else accel,
        )

    def windows(self, length: int) -> List["Sequence"]:
        """Cut into non-overlapping windows of ``length`` samples; the tail is dropped."""
        if length <= 0:
            raise ValueError(f"Window length must be positive, got {length}")
        chunks = []
        for index, start in enumerate(range(0, len(self) - length + 1, length)):
            stop = start + length
            chunks.append(
                replace(
                    self,
                    t=self.t[start:stop],
                    gyro=self.gyro[start:stop],
                    accel=self.accel[start:stop],
                    truth=self.truth[start:stop],
                    name=f"{self.name}#{index}" if self.name else f"#{index}",
                )
            )
        return chunks


@dataclass(frozen=True)
class NormalizationSpec:
    x_min: np.ndarray = field(
        default_factory=lambda: np.array([-GYRO_FULL_SCALE] * 3 + [-ACCEL_FULL_SCALE] * 3)
    )
    x_max: np.ndarray = field(
        default_factory=lambda: np.array([GYRO_FULL_SCALE] * 3 + [ACCEL_FULL_SCALE] * 3)
    )

    def __post_init__(self):
        x_min = np.asarray(self.x_min, dtype=float).reshape(-1)
        x_max = np.asarray(self.x_max, dtype=float).reshape(-1)
        if x_min.shape != (6,) or x_max.shape != (6,):
            raise ValueError("NormalizationSpec needs bounds for 6 channels")
        if not np.all(np.isfinite(x_min)) or not np.all(np.isfinite(x_max)):
            raise ValueError("Normalization bounds must be finite")
        if not np.all(x_max > x_min):
            channel = int(np.argmin(x_max - x_min))
            raise ValueError(f"x_max must exceed x_min (channel {IMU_CHANNELS[channel]})")
        object.__setattr__(self, "x_min", x_min)
        object.__setattr__(self, "x_max", x_max)

    @classmethod
    def full_scale(cls) -> "NormalizationSpec":
        return cls()

    @classmethod
    def fit(cls, sequences: Iterable[Sequence], margin: float = 0.1) -> "NormalizationSpec":
        """Symmetric per-channel bounds covering the data, widened by ``margin``."""
        data = [seq.imu for seq in sequences]
        if not data:
            raise ValueError("Cannot fit normalization bounds without data")
        peak = np.abs(np.vstack(data)).max(axis=0)
        peak = np.where(peak > 0, peak, 1.0) * (1.0 + margin)
        return cls(x_min=-peak, x_max=peak)

    def apply(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        return 2.0 * (data - self.x_min) / (self.x_max - self.x_min) - 1.0

    def to_dict(self):
        return {"x_min": self.x_min.tolist(), "x_max": self.x_max.tolist()}

    @classmethod
    def from_dict(cls, data) -> "NormalizationSpec":
        return cls(x_min=np.asarray(data["x_min"]), x_max=np.asarray(data["x_max"]))


def normalize(sample: ImuSample, spec: NormalizationSpec) -> np.ndarray:
    values = sample.as_array()
    for channel, value in enumerate(values):
        if not math.isfinite(value):
            raise NonFiniteInputError(channel, value)
    return spec.apply(values)


def quat_multiply(p, q) -> np.ndarray:
    """Hamilton product on arrays of shape (..., 4)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def hamilton(p: Quaternion, q: Quaternion) -> Quaternion:
    return Quaternion.from_array(quat_multiply(p.as_array(), q.as_array()))


def normalize_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_euler_array(q) -> np.ndarray:
    """(..., 4) quaternions to (..., 2) ``[pitch, roll]``; pitch clamped at gimbal lock."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    pitch = np.arcsin(np.clip(2.0 * (w * y - x * z), -1.0, 1.0))
    roll = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    roll = np.where(roll <= -np.pi, np.pi, roll)
    return np.stack([pitch, roll], axis=-1)


def quat_to_euler(q: Quaternion) -> EulerAngles:
    if abs(q.norm - 1.0) > 1e-6:
        raise ValueError(f"quat_to_euler needs a unit quaternion, norm is {q.norm:.9f}")
    return EulerAngles.from_array(quat_to_euler_array(q.as_array()))


def euler_to_quat_array(pitch, roll, yaw=0.0) -> np.ndarray:
    cr, sr = np.cos(np.asarray(roll) / 2.0), np.sin(np.asarray(roll) / 2.0)
    cp, sp = np.cos(np.asarray(pitch) / 2.0), np.sin(np.asarray(pitch) / 2.0)
    cy, sy = np.cos(np.asarray(yaw) / 2.0), np.sin(np.asarray(yaw) / 2.0)
    return np.stack(
        np.broadcast_arrays(
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ),
        axis=-1,
    )


def euler_to_quat(angles: EulerAngles, yaw: float = 0.0) -> Quaternion:
    return Quaternion.from_array(euler_to_quat_array(angles.pitch, angles.roll, yaw))


def rotation_matrix(q) -> np.ndarray:
    """Body-to-world rotation matrices, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def rotate_to_body(vector, q) -> np.ndarray:
    """Express a world-frame vector in the body frame of attitude ``q``."""
    if isinstance(q, Quaternion):
        q = q.as_array()
    matrix = rotation_matrix(q)
    return np.einsum("...ji,...j->...i", matrix, np.asarray(vector, dtype=float))


def gravity_direction_body(q) -> np.ndarray:
    """Unit gravity direction in the body frame, i.e. ``R(q)^T e_z``."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
        axis=-1,
    )


def tilt_from_accel(accel) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised tilt: returns ``[pitch, roll]`` (..., 2) and an observability mask."""
    accel = np.asarray(accel, dtype=float)
    ax, ay, az = accel[..., 0], accel[..., 1], accel[..., 2]
    observable = np.sqrt(ax * ax + ay * ay + az * az) > MIN_ACCEL_NORM
    roll = np.arctan2(ay, az)
    roll = np.where(roll <= -np.pi, np.pi, roll)
    pitch = np.arctan2(-ax, np.sqrt(ay * ay + az * az))
    return np.stack([pitch, roll], axis=-1), observable


def accel_to_angles(accel) -> EulerAngles:
    angles, observable = tilt_from_accel(accel)
    if not bool(observable):
        raise UnobservableError(
            f"Accelerometer norm {float(np.linalg.norm(accel)):.3g} m/s^2 is below "
            f"{MIN_ACCEL_NORM} m/s^2"
        )
    return EulerAngles.from_array(angles)
