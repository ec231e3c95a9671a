"""Att-SNN forward engine.

Current-based encoding layer of LIF neurons, a recurrent LIF hidden layer and
a two-neuron leaky-integrator read-out whose membrane potentials are the
pitch and roll estimates in radians. Weight matrices are stored ``(in, out)``.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import torch

from apps.core.domain import EulerAngles, NormalizationSpec, Sequence, wrap_angle
from apps.core.exceptions import NonFiniteStateError, PruningError

from .quantization import DECAY_SPEC, WEIGHT_SPEC, quantize

logger = logging.getLogger(__name__)

N_INPUTS = 6
N_OUTPUTS = 2
DEFAULT_THRESHOLD = 0.5

# a spike vector is a float array of 0.0 / 1.0 entries, one per neuron
SpikeVector = np.ndarray
SpikeFunction = Callable[[torch.Tensor], torch.Tensor]


def _vector(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class LifParams:
    tau_mem: np.ndarray
    tau_syn: np.ndarray
    threshold: np.ndarray

    def __post_init__(self):
        tau_mem = _vector(self.tau_mem, "tau_mem")
        tau_syn = _vector(self.tau_syn, "tau_syn")
        threshold = _vector(self.threshold, "threshold")
        if not tau_mem.shape == tau_syn.shape == threshold.shape:
            raise ValueError("tau_mem, tau_syn and threshold must have one entry per neuron")
        for name, decay in (("tau_mem", tau_mem), ("tau_syn", tau_syn)):
            if np.any(~np.isfinite(decay)) or np.any(decay < 0) or np.any(decay > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
        if np.any(~(threshold > 0)):
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "tau_mem", tau_mem)
        object.__setattr__(self, "tau_syn", tau_syn)
        object.__setattr__(self, "threshold", threshold)

    @classmethod
    def uniform(cls, n: int, tau_mem: float, tau_syn: float, threshold: float = DEFAULT_THRESHOLD):
        return cls(np.full(n, tau_mem), np.full(n, tau_syn), np.full(n, threshold))

    @property
    def size(self) -> int:
        return len(self.tau_mem)

    def select(self, keep: np.ndarray) -> "LifParams":
        return LifParams(self.tau_mem[keep], self.tau_syn[keep], self.threshold[keep])


@dataclass(frozen=True)
class LifState:
    v: np.ndarray
    i: np.ndarray

    def __post_init__(self):
        v = _vector(self.v, "v")
        i = _vector(self.i, "i")
        if v.shape != i.shape:
            raise ValueError("v and i must have the same size")
        if np.any(~np.isfinite(v)) or np.any(~np.isfinite(i)):
            raise ValueError("LIF state must be finite")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "i", i)

    @classmethod
    def rest(cls, n: int) -> "LifState":
        return cls(np.zeros(n), np.zeros(n))


def lif_step(
    state: LifState,
    params: LifParams,
    input_current,
    current_first: bool = True,
) -> Tuple[LifState, SpikeVector]:
    """One LIF update: leak and accumulate current, integrate, spike, reset to zero.

    ``current_first`` selects whether the membrane integrates this step's
    synaptic current (default) or the previous one.
    """
    input_current = _vector(input_current, "input_current")
    if not state.v.shape == params.tau_mem.shape == input_current.shape:
        raise ValueError(
            f"Dimension mismatch: state {state.v.shape}, params {params.tau_mem.shape}, "
            f"input {input_current.shape}"
        )
    i_new = params.tau_syn * state.i + input_current
    v_new = params.tau_mem * state.v + (i_new if current_first else state.i)
    spikes = (v_new - params.threshold > 0).astype(float)
    v_new = np.where(spikes > 0, 0.0, v_new)
    return LifState(v_new, i_new), spikes


def li_step(
    state: LifState,
    decays: Tuple[float, float],
    input_current,
    current_first: bool = True,
) -> LifState:
    """Leaky integrator: ``lif_step`` without threshold or reset."""
    tau_mem, tau_syn = decays
    input_current = _vector(input_current, "input_current")
    if state.v.shape != input_current.shape:
        raise ValueError(f"Dimension mismatch: state {state.v.shape}, input {input_current.shape}")
    i_new = tau_syn * state.i + input_current
    v_new = tau_mem * state.v + (i_new if current_first else state.i)
    return LifState(v_new, i_new)


@dataclass(frozen=True)
class NetworkParams:
    enc_weights: np.ndarray
    hid_weights_ff: np.ndarray
    hid_weights_rec: np.ndarray
    out_weights: np.ndarray
    enc_lif: LifParams
    hid_lif: LifParams
    out_li: Tuple[float, float]
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec.full_scale)
    quantized: bool = False
    current_first: bool = True

    def __post_init__(self):
        enc = np.asarray(self.enc_weights, dtype=float)
        ff = np.asarray(self.hid_weights_ff, dtype=float)
        rec = np.asarray(self.hid_weights_rec, dtype=float)
        out = np.asarray(self.out_weights, dtype=float)
        n_enc, n_hid = self.enc_lif.size, self.hid_lif.size
        expected = {
            "enc_weights": (enc.shape, (N_INPUTS, n_enc)),
            "hid_weights_ff": (ff.shape, (n_enc, n_hid)),
            "hid_weights_rec": (rec.shape, (n_hid, n_hid)),
            "out_weights": (out.shape, (n_hid, N_OUTPUTS)),
        }
        for name, (shape, want) in expected.items():
            if shape != want:
                raise ValueError(f"{name} has shape {shape}, expected {want}")
        for name, block in (("enc_weights", enc), ("hid_weights_ff", ff), ("hid_weights_rec", rec), ("out_weights", out)):
            if not np.all(np.isfinite(block)):
                raise ValueError(f"{name} contains non-finite values")
        out_li = tuple(float(d) for d in self.out_li)
        if len(out_li) != 2 or not all(0.0 <= d <= 1.0 for d in out_li):
            raise ValueError(f"out_li must be a (tau_mem, tau_syn) pair in [0, 1], got {self.out_li}")
        object.__setattr__(self, "enc_weights", enc)
        object.__setattr__(self, "hid_weights_ff", ff)
        object.__setattr__(self, "hid_weights_rec", rec)
        object.__setattr__(self, "out_weights", out)
        object.__setattr__(self, "out_li", out_li)

    @classmethod
    def initialize(
        cls,
        n_enc: int = 100,
        n_hid: int = 100,
        seed: int = 0,
        threshold: float = DEFAULT_THRESHOLD,
        normalization: Optional[NormalizationSpec] = None,
        decay_range: Tuple[float, float] = (0.6, 0.95),
        current_first: bool = True,
    ) -> "NetworkParams":
        """Weights uniform in +-1/sqrt(fan_in), decays uniform in ``decay_range``; all on grid."""
        if n_enc < 1 or n_hid < 1:
            raise ValueError("Layer sizes must be positive")
        rng = np.random.default_rng(seed)

        def weights(fan_in, fan_out):
            bound = 1.0 / math.sqrt(fan_in)
            return quantize(rng.uniform(-bound, bound, (fan_in, fan_out)), WEIGHT_SPEC)

        def decays(n):
            return quantize(rng.uniform(*decay_range, n), DECAY_SPEC)

        return cls(
            enc_weights=weights(N_INPUTS, n_enc),
            hid_weights_ff=weights(n_enc, n_hid),
            hid_weights_rec=weights(n_hid, n_hid),
            out_weights=weights(n_hid, N_OUTPUTS),
            enc_lif=LifParams(decays(n_enc), decays(n_enc), np.full(n_enc, threshold)),
            hid_lif=LifParams(decays(n_hid), decays(n_hid), np.full(n_hid, threshold)),
            out_li=(float(decays(1)[0]), float(decays(1)[0])),
            normalization=normalization or NormalizationSpec.full_scale(),
            current_first=current_first,
        )

    @property
    def n_enc(self) -> int:
        return self.enc_lif.size

    @property
    def n_hid(self) -> int:
        return self.hid_lif.size

    def parameter_count(self) -> Tuple[int, int]:
        """(trainable weights, trainable neuron parameters); thresholds are fixed."""
        weights = sum(block.size for block in self.weight_blocks().values())
        neurons = 2 * self.n_enc + 2 * self.n_hid + 2
        return weights, neurons

    def weight_blocks(self) -> Dict[str, np.ndarray]:
        return {
            "enc_weights": self.enc_weights,
            "hid_weights_ff": self.hid_weights_ff,
            "hid_weights_rec": self.hid_weights_rec,
            "out_weights": self.out_weights,
        }

    def decay_blocks(self) -> Dict[str, np.ndarray]:
        return {
            "enc_tau_mem": self.enc_lif.tau_mem,
            "enc_tau_syn": self.enc_lif.tau_syn,
            "hid_tau_mem": self.hid_lif.tau_mem,
            "hid_tau_syn": self.hid_lif.tau_syn,
            "out_tau_mem": np.array([self.out_li[0]]),
            "out_tau_syn": np.array([self.out_li[1]]),
        }

    def quantized_copy(self) -> "NetworkParams":
        """Every weight and decay snapped onto the hardware grid."""
        return replace(
            self,
            enc_weights=quantize(self.enc_weights, WEIGHT_SPEC),
            hid_weights_ff=quantize(self.hid_weights_ff, WEIGHT_SPEC),
            hid_weights_rec=quantize(self.hid_weights_rec, WEIGHT_SPEC),
            out_weights=quantize(self.out_weights, WEIGHT_SPEC),
            enc_lif=LifParams(
                quantize(self.enc_lif.tau_mem, DECAY_SPEC),
                quantize(self.enc_lif.tau_syn, DECAY_SPEC),
                self.enc_lif.threshold,
            ),
            hid_lif=LifParams(
                quantize(self.hid_lif.tau_mem, DECAY_SPEC),
                quantize(self.hid_lif.tau_syn, DECAY_SPEC),
                self.hid_lif.threshold,
            ),
            out_li=(quantize(self.out_li[0], DECAY_SPEC), quantize(self.out_li[1], DECAY_SPEC)),
            quantized=True,
        )

    def to_tensors(self, dtype: torch.dtype = torch.float64) -> Dict[str, torch.Tensor]:
        tensors = {
            name: torch.tensor(block, dtype=dtype)
            for name, block in {**self.weight_blocks(), **self.decay_blocks()}.items()
        }
        tensors["out_tau_mem"] = tensors["out_tau_mem"].reshape(())
        tensors["out_tau_syn"] = tensors["out_tau_syn"].reshape(())
        tensors["enc_threshold"] = torch.tensor(self.enc_lif.threshold, dtype=dtype)
        tensors["hid_threshold"] = torch.tensor(self.hid_lif.threshold, dtype=dtype)
        return tensors

    def with_tensors(self, tensors: Mapping[str, torch.Tensor], quantized: bool = False) -> "NetworkParams":
        """Copy with blocks replaced by (detached) tensor values."""

        def array(name):
            return tensors[name].detach().cpu().to(torch.float64).numpy().copy()

        return replace(
            self,
            enc_weights=array("enc_weights"),
            hid_weights_ff=array("hid_weights_ff"),
            hid_weights_rec=array("hid_weights_rec"),
            out_weights=array("out_weights"),
            enc_lif=LifParams(array("enc_tau_mem"), array("enc_tau_syn"), self.enc_lif.threshold),
            hid_lif=LifParams(array("hid_tau_mem"), array("hid_tau_syn"), self.hid_lif.threshold),
            out_li=(float(array("out_tau_mem")), float(array("out_tau_syn"))),
            quantized=quantized,
        )


class NetworkTrace(NamedTuple):
    estimates: torch.Tensor
    enc_spikes: torch.Tensor
    hid_spikes: torch.Tensor


def heaviside(x: torch.Tensor) -> torch.Tensor:
    return (x > 0).to(x.dtype)


def _check_finite(tensor: torch.Tensor, timestep: int, layer: str):
    if not bool(torch.isfinite(tensor).all()):
        raise NonFiniteStateError(timestep, layer)


def run_network(
    tensors: Mapping[str, torch.Tensor],
    inputs: torch.Tensor,
    spike_fn: SpikeFunction = heaviside,
    current_first: bool = True,
    enc_mask: Optional[torch.Tensor] = None,
    hid_mask: Optional[torch.Tensor] = None,
    on_current: Optional[Callable[[str, int, torch.Tensor], None]] = None,
) -> NetworkTrace:
    """Unrolled simulation over ``inputs`` of shape (batch, steps, 6).

    All layers start at rest. Hidden recurrence reads the previous step's
    spikes. ``on_current(block, t, current)`` sees each layer's input current and is
    how the trainer attaches per-timestep gradient checks.
    """
    batch, steps, _ = inputs.shape
    dtype = inputs.dtype
    w_enc, w_ff = tensors["enc_weights"], tensors["hid_weights_ff"]
    w_rec, w_out = tensors["hid_weights_rec"], tensors["out_weights"]
    n_enc, n_hid = w_enc.shape[1], w_rec.shape[0]

    i_enc = torch.zeros(batch, n_enc, dtype=dtype)
    v_enc = torch.zeros(batch, n_enc, dtype=dtype)
    i_hid = torch.zeros(batch, n_hid, dtype=dtype)
    v_hid = torch.zeros(batch, n_hid, dtype=dtype)
    s_hid = torch.zeros(batch, n_hid, dtype=dtype)
    i_out = torch.zeros(batch, N_OUTPUTS, dtype=dtype)
    v_out = torch.zeros(batch, N_OUTPUTS, dtype=dtype)

    estimates, enc_record, hid_record = [], [], []
    for t in range(steps):
        current = inputs[:, t] @ w_enc
        if on_current is not None:
            on_current("enc_weights", t, current)
        i_prev = i_enc
        i_enc = tensors["enc_tau_syn"] * i_enc + current
        v_enc = tensors["enc_tau_mem"] * v_enc + (i_enc if current_first else i_prev)
        _check_finite(v_enc, t, "encoding")
        s_enc = spike_fn(v_enc - tensors["enc_threshold"])
        if enc_mask is not None:
            s_enc = s_enc * enc_mask
        v_enc = v_enc * (1.0 - s_enc)

        current = s_enc @ w_ff + s_hid @ w_rec
        if on_current is not None:
            on_current("hid_weights_ff", t, current)
        i_prev = i_hid
        i_hid = tensors["hid_tau_syn"] * i_hid + current
        v_hid = tensors["hid_tau_mem"] * v_hid + (i_hid if current_first else i_prev)
        _check_finite(v_hid, t, "hidden")
        s_hid = spike_fn(v_hid - tensors["hid_threshold"])
        if hid_mask is not None:
            s_hid = s_hid * hid_mask
        v_hid = v_hid * (1.0 - s_hid)

        current = s_hid @ w_out
        if on_current is not None:
            on_current("out_weights", t, current)
        i_prev = i_out
        i_out = tensors["out_tau_syn"] * i_out + current
        v_out = tensors["out_tau_mem"] * v_out + (i_out if current_first else i_prev)
        _check_finite(v_out, t, "output")

        estimates.append(v_out)
        enc_record.append(s_enc)
        hid_record.append(s_hid)

    if steps == 0:
        empty = torch.zeros(batch, 0, N_OUTPUTS, dtype=dtype)
        return NetworkTrace(empty, torch.zeros(batch, 0, n_enc, dtype=dtype), torch.zeros(batch, 0, n_hid, dtype=dtype))
    return NetworkTrace(
        torch.stack(estimates, dim=1),
        torch.stack(enc_record, dim=1),
        torch.stack(hid_record, dim=1),
    )


@dataclass(frozen=True)
class SpikeRecord:
    enc: np.ndarray
    hid: np.ndarray

    @property
    def enc_rates(self) -> np.ndarray:
        return self.enc.mean(axis=0) if len(self.enc) else np.zeros(self.enc.shape[-1])

    @property
    def hid_rates(self) -> np.ndarray:
        return self.hid.mean(axis=0) if len(self.hid) else np.zeros(self.hid.shape[-1])


@dataclass(frozen=True)
class ForwardResult:
    estimates: np.ndarray
    spikes: SpikeRecord

    @property
    def angles(self) -> List[EulerAngles]:
        return [EulerAngles.from_array(wrap_angle(row)) for row in self.estimates]


def _masks(silenced: Optional[Mapping[str, np.ndarray]]):
    if not silenced:
        return None, None
    enc_mask = hid_mask = None
    if "enc" in silenced:
        enc_mask = torch.tensor(~np.asarray(silenced["enc"], dtype=bool), dtype=torch.float64)
    if "hid" in silenced:
        hid_mask = torch.tensor(~np.asarray(silenced["hid"], dtype=bool), dtype=torch.float64)
    return enc_mask, hid_mask


def network_forward(
    params: NetworkParams,
    inputs,
    quantized: Optional[bool] = None,
    silenced: Optional[Mapping[str, np.ndarray]] = None,
) -> ForwardResult:
    """Run one normalized (T, 6) input sequence from rest in float64.

    ``quantized=True`` evaluates on the hardware grid; by default the
    network runs in whatever mode its parameters carry. ``silenced`` maps
    ``"enc"``/``"hid"`` to boolean masks of neurons whose spikes are forced to 0.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != N_INPUTS:
        raise ValueError(f"inputs must have shape (T, {N_INPUTS}), got {inputs.shape}")
    if quantized:
        params = params.quantized_copy()
    enc_mask, hid_mask = _masks(silenced)
    with torch.no_grad():
        trace = run_network(
            params.to_tensors(torch.float64),
            torch.from_numpy(inputs).unsqueeze(0),
            current_first=params.current_first,
            enc_mask=enc_mask,
            hid_mask=hid_mask,
        )
    return ForwardResult(
        estimates=trace.estimates[0].numpy(),
        spikes=SpikeRecord(enc=trace.enc_spikes[0].numpy(), hid=trace.hid_spikes[0].numpy()),
    )


def estimate_sequence(
    params: NetworkParams,
    sequence: Sequence,
    quantized: Optional[bool] = None,
    imu: Optional[np.ndarray] = None,
) -> ForwardResult:
    """Normalize raw IMU data with the network's own bounds, then forward it."""
    raw = sequence.imu if imu is None else imu
    return network_forward(params, params.normalization.apply(raw), quantized=quantized)


def prune(
    params: NetworkParams,
    activity: Mapping[str, np.ndarray],
    threshold_pct: float,
) -> NetworkParams:
    """Drop neurons whose mean firing fraction is below ``threshold_pct``.

    ``activity`` maps ``"enc"`` and ``"hid"`` to per-neuron rates measured on
    held-out data. Incident weights of removed neurons are dropped.
    """
    enc_rates = np.asarray(activity["enc"], dtype=float)
    hid_rates = np.asarray(activity["hid"], dtype=float)
    if enc_rates.shape != (params.n_enc,) or hid_rates.shape != (params.n_hid,):
        raise ValueError("Activity must hold one rate per encoding and hidden neuron")
    keep_enc = enc_rates >= threshold_pct
    keep_hid = hid_rates >= threshold_pct
    if not keep_enc.any():
        raise PruningError(f"Threshold {threshold_pct:g} removes every encoding neuron")
    if not keep_hid.any():
        raise PruningError(f"Threshold {threshold_pct:g} removes every hidden neuron")

    pruned = replace(
        params,
        enc_weights=params.enc_weights[:, keep_enc],
        hid_weights_ff=params.hid_weights_ff[keep_enc][:, keep_hid],
        hid_weights_rec=params.hid_weights_rec[keep_hid][:, keep_hid],
        out_weights=params.out_weights[keep_hid],
        enc_lif=params.enc_lif.select(keep_enc),
        hid_lif=params.hid_lif.select(keep_hid),
    )
    logger.info(
        "Pruned at %.3g%%: encoding %s -> %s, hidden %s -> %s",
        100.0 * threshold_pct,
        params.n_enc,
        pruned.n_enc,
        params.n_hid,
        pruned.n_hid,
    )
    return pruned


def silenced_by(params: NetworkParams, activity: Mapping[str, np.ndarray], threshold_pct: float) -> Dict[str, np.ndarray]:
    """Masks of the neurons ``prune`` would remove."""
    return {
        "enc": np.asarray(activity["enc"]) < threshold_pct,
        "hid": np.asarray(activity["hid"]) < threshold_pct,
    }
