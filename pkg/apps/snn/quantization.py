"""Fixed-point parameter grid of the neuromorphic target.

Weights live on ``[-1, 1 - 2/256]`` with step ``2/256`` (8-bit signed),
decays on ``[0, 1]`` with step ``1/4096`` (12-bit). Rounding is half away
from zero, followed by a saturating clamp.
"""

from dataclasses import dataclass
from typing import Dict, Union

import numpy as np
import torch

from apps.core.exceptions import QuantizationError

OFF_GRID_TOLERANCE = 1e-12

Number = Union[float, np.ndarray]


@dataclass(frozen=True)
class QuantSpec:
    q_min: float
    q_max: float
    step: float

    def __post_init__(self):
        if not self.q_min < self.q_max:
            raise ValueError(f"q_min must be below q_max ({self.q_min} >= {self.q_max})")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        levels = (self.q_max - self.q_min) / self.step
        if abs(levels - round(levels)) > 1e-9:
            raise ValueError("Range must be an integer multiple of the step")

    @property
    def k_min(self) -> int:
        return int(round(self.q_min / self.step))

    @property
    def k_max(self) -> int:
        return int(round(self.q_max / self.step))


WEIGHT_SPEC = QuantSpec(q_min=-1.0, q_max=1.0 - 2.0 / 256.0, step=2.0 / 256.0)
DECAY_SPEC = QuantSpec(q_min=0.0, q_max=1.0, step=1.0 / 4096.0)


def _scalar_or_array(value: np.ndarray, like) -> Number:
    if np.ndim(like) == 0:
        return float(value)
    return value


def quantize(p: Number, spec: QuantSpec) -> Number:
    values = np.asarray(p, dtype=float)
    k = np.sign(values) * np.floor(np.abs(values) / spec.step + 0.5)
    quantized = np.clip(k * spec.step, spec.q_min, spec.q_max)
    return _scalar_or_array(quantized, p)


def dequantize(k, spec: QuantSpec) -> Number:
    return _scalar_or_array(np.asarray(k, dtype=float) * spec.step, k)


def to_hardware_integer(p_q: Number, spec: QuantSpec):
    values = np.asarray(p_q, dtype=float)
    k = np.round(values / spec.step)
    off_grid = np.abs(k * spec.step - values)
    if np.any(~np.isfinite(values)) or np.any(off_grid > OFF_GRID_TOLERANCE):
        worst = float(np.nanmax(np.where(np.isfinite(off_grid), off_grid, np.inf)))
        raise QuantizationError(f"Value is off the {spec.step:g} grid by {worst:.3g}")
    if np.any(k < spec.k_min) or np.any(k > spec.k_max):
        raise QuantizationError(f"Value outside [{spec.q_min}, {spec.q_max}]")
    if np.ndim(p_q) == 0:
        return int(k)
    return k.astype(np.int64)


def is_on_grid(p: Number, spec: QuantSpec) -> bool:
    try:
        to_hardware_integer(p, spec)
    except QuantizationError:
        return False
    return True


def quantize_tensor(p: torch.Tensor, spec: QuantSpec) -> torch.Tensor:
    k = torch.sign(p) * torch.floor(torch.abs(p) / spec.step + 0.5)
    return torch.clamp(k * spec.step, spec.q_min, spec.q_max)


def fake_quantize(p: torch.Tensor, spec: QuantSpec) -> torch.Tensor:
    """On-grid value forward, identity gradient backward."""
    return p + (quantize_tensor(p, spec) - p).detach()


def hardware_integers(params) -> Dict[str, np.ndarray]:
    """Integer representation of every weight and decay block of ``params``."""
    exported = {}
    for name, block in params.weight_blocks().items():
        exported[name] = to_hardware_integer(np.asarray(block), WEIGHT_SPEC)
    for name, block in params.decay_blocks().items():
        exported[name] = to_hardware_integer(np.asarray(block), DECAY_SPEC)
    return exported

