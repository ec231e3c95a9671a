"""Supervised BPTT training of the Att-SNN.

The Heaviside spike is differentiated through the SuperSpike surrogate
``1 / (1 + width |x|)^2``. Decays are trained through a sigmoid so steps
cannot leave [0, 1]; with quantization in the loop every forward pass uses
on-grid values while gradients reach the full-resolution masters.
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np
import torch
from torch import nn

from apps.core.domain import Sequence
from apps.core.exceptions import (
    ConfigurationError,
    InsufficientDataError,
    NonFiniteGradientError,
    TrainingDivergedError,
)

from .quantization import DECAY_SPEC, WEIGHT_SPEC, fake_quantize
from .runtime import NetworkParams, NetworkTrace, run_network

logger = logging.getLogger(__name__)

WEIGHT_KEYS = ("enc_weights", "hid_weights_ff", "hid_weights_rec", "out_weights")
DECAY_KEYS = ("enc_tau_mem", "enc_tau_syn", "hid_tau_mem", "hid_tau_syn", "out_tau_mem", "out_tau_syn")
DECAY_CLAMP = 1e-4


@dataclass(frozen=True)
class SurrogateSpec:
    width: float = 20.0

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigurationError(f"Surrogate width must be positive, got {self.width}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.005
    lookahead_alpha: float = 0.5
    lookahead_k: int = 6
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0 < self.lookahead_alpha <= 1:
            raise ConfigurationError(f"lookahead_alpha must lie in (0, 1], got {self.lookahead_alpha}")
        if self.lookahead_k < 1:
            raise ConfigurationError(f"lookahead_k must be at least 1, got {self.lookahead_k}")


@dataclass(frozen=True)
class TrainConfig:
    batches_per_epoch: int = 15
    batch_size: int = 40
    stop_window: int = 20
    stop_ratio: float = 1.10
    stop_patience: int = 50
    max_epochs: int = 1000
    quantize_in_loop: bool = True
    divergence_limit: float = 1e6
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("batches_per_epoch", "batch_size", "stop_window", "stop_patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not self.stop_ratio > 0:
            raise ConfigurationError("stop_ratio must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


def superspike_grad(v_minus_thr, spec: SurrogateSpec = SurrogateSpec()):
    x = np.asarray(v_minus_thr, dtype=float)
    grad = 1.0 / (spec.width * np.abs(x) + 1.0) ** 2
    return float(grad) if np.ndim(v_minus_thr) == 0 else grad


class SuperSpike(torch.autograd.Function):
    """Heaviside forward, SuperSpike pseudo-derivative in both AD modes."""

    @staticmethod
    def forward(ctx, x, width):
        ctx.save_for_backward(x)
        ctx.save_for_forward(x)
        ctx.width = width
        return (x > 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        return grad_output / (ctx.width * torch.abs(x) + 1.0) ** 2, None

    @staticmethod
    def jvp(ctx, x_tangent, width_tangent):
        (x,) = ctx.saved_tensors
        return x_tangent / (ctx.width * torch.abs(x) + 1.0) ** 2


def surrogate_spike_fn(spec: SurrogateSpec) -> Callable[[torch.Tensor], torch.Tensor]:
    def spike(x):
        return SuperSpike.apply(x, spec.width)

    return spike


def _as_tensor(values, dtype=torch.float64) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values
    return torch.as_tensor(np.asarray(values, dtype=float), dtype=dtype)


def sequence_loss(estimates: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Half the summed squared pitch and roll error per sequence, averaged over the batch."""
    if estimates.shape != truth.shape:
        raise ValueError(f"Estimate shape {tuple(estimates.shape)} != truth shape {tuple(truth.shape)}")
    per_sequence = 0.5 * ((estimates - truth) ** 2).sum(dim=(-2, -1))
    return per_sequence.mean() if per_sequence.ndim else per_sequence


def mse_loss(estimates, truth) -> float:
    """Loss of one (T, 2) ``[pitch, roll]`` trace; divide by T for the per-step value."""
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"Length mismatch: {estimates.shape} vs {truth.shape}")
    return float(0.5 * np.sum((estimates - truth) ** 2))


def stack_sequences(
    sequences: SequenceType[Sequence], params: NetworkParams, dtype: torch.dtype
) -> Tuple[torch.Tensor, torch.Tensor]:
    lengths = {len(seq) for seq in sequences}
    if len(lengths) != 1:
        raise ValueError(f"Sequences in a batch must share one length, got {sorted(lengths)}")
    inputs = np.stack([params.normalization.apply(seq.imu) for seq in sequences])
    truth = np.stack([seq.truth for seq in sequences])
    return torch.as_tensor(inputs, dtype=dtype), torch.as_tensor(truth, dtype=dtype)


def _check_current_grad(block: str, t: int, current: torch.Tensor):
    if not current.requires_grad:
        return

    def check(grad):
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradientError(block, t)
        return grad

    current.register_hook(check)


def bptt_gradients(
    params: NetworkParams,
    batch: SequenceType[Sequence],
    surrogate: SurrogateSpec = SurrogateSpec(),
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Reverse-mode gradients of the batch loss for every weight and decay block (float64)."""
    if not batch:
        raise InsufficientDataError("bptt_gradients needs at least one sequence")
    inputs, truth = stack_sequences(batch, params, torch.float64)
    tensors = params.to_tensors(torch.float64)
    leaves = {}
    for key in WEIGHT_KEYS + DECAY_KEYS:
        leaves[key] = tensors[key].clone().requires_grad_(True)
    tensors.update(leaves)

    trace = run_network(
        tensors,
        inputs,
        spike_fn=surrogate_spike_fn(surrogate),
        current_first=params.current_first,
        on_current=_check_current_grad,
    )
    loss = sequence_loss(trace.estimates, truth)
    loss.backward()

    gradients = {}
    for key, leaf in leaves.items():
        grad = leaf.grad if leaf.grad is not None else torch.zeros_like(leaf)
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradientError(key, -1)
        gradients[key] = grad.detach().numpy().copy()
    return float(loss.detach()), gradients


def _logit(values: np.ndarray) -> np.ndarray:
    clipped = np.clip(values, DECAY_CLAMP, 1.0 - DECAY_CLAMP)
    return np.log(clipped / (1.0 - clipped))


class AttSnnModule(nn.Module):
    """Trainable masters: raw weights plus decay logits; thresholds fixed.

    Decays of exactly 0 or 1 lie outside the sigmoid's range and stay pinned
    at their initial value.
    """

    def __init__(self, params: NetworkParams, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.template = params
        for key, block in params.weight_blocks().items():
            self.register_parameter(key, nn.Parameter(torch.tensor(block, dtype=dtype)))
        for key, block in params.decay_blocks().items():
            logits = torch.tensor(_logit(block), dtype=dtype)
            pinned = torch.tensor((block <= 0.0) | (block >= 1.0))
            fixed = torch.tensor(block, dtype=dtype)
            if key.startswith("out_"):
                # one decay pair shared by the pitch and roll read-out neurons
                logits, pinned, fixed = logits.reshape(()), pinned.reshape(()), fixed.reshape(())
            self.register_parameter(key + "_logit", nn.Parameter(logits))
            self.register_buffer(key + "_pinned", pinned)
            self.register_buffer(key + "_fixed", fixed)
        self.register_buffer("enc_threshold", torch.tensor(params.enc_lif.threshold, dtype=dtype))
        self.register_buffer("hid_threshold", torch.tensor(params.hid_lif.threshold, dtype=dtype))

    def network_tensors(self, quantize: bool) -> Dict[str, torch.Tensor]:
        tensors = {}
        for key in WEIGHT_KEYS:
            weight = getattr(self, key)
            tensors[key] = fake_quantize(weight, WEIGHT_SPEC) if quantize else weight
        for key in DECAY_KEYS:
            decay = torch.where(
                getattr(self, key + "_pinned"),
                getattr(self, key + "_fixed"),
                torch.sigmoid(getattr(self, key + "_logit")),
            )
            tensors[key] = fake_quantize(decay, DECAY_SPEC) if quantize else decay
        tensors["enc_threshold"] = self.enc_threshold
        tensors["hid_threshold"] = self.hid_threshold
        return tensors

    def forward(self, inputs: torch.Tensor, spike_fn, quantize: bool) -> NetworkTrace:
        return run_network(
            self.network_tensors(quantize),
            inputs,
            spike_fn=spike_fn,
            current_first=self.template.current_first,
        )

    def to_params(self, quantize: bool) -> NetworkParams:
        with torch.no_grad():
            tensors = self.network_tensors(quantize)
        return self.template.with_tensors(tensors, quantized=quantize)


class Lookahead:
    """Keeps slow weights; every ``k`` inner steps moves them ``alpha`` toward the fast ones."""

    def __init__(self, optimizer: torch.optim.Optimizer, alpha: float = 0.5, k: int = 6):
        self.optimizer = optimizer
        self.alpha = alpha
        self.k = k
        self.step_count = 0
        self.slow = [p.detach().clone() for p in self._params()]

    def _params(self):
        for group in self.optimizer.param_groups:
            yield from group["params"]

    def zero_grad(self):
        self.optimizer.zero_grad()

    def step(self):
        self.optimizer.step()
        self.step_count += 1
        if self.step_count % self.k == 0:
            with torch.no_grad():
                for slow, fast in zip(self.slow, self._params()):
                    slow.lerp_(fast, self.alpha)
                    fast.copy_(slow)


class EarlyStopping:
    """Stops when the moving-average validation loss exceeds ``ratio`` x its minimum,
    or when the best raw loss is ``patience`` epochs old."""

    def __init__(self, window: int = 20, ratio: float = 1.10, patience: int = 50):
        self.window = window
        self.ratio = ratio
        self.patience = patience
        self.losses: List[float] = []
        self.best_loss = math.inf
        self.best_epoch = -1
        self.best_average = math.inf

    @property
    def moving_average(self) -> float:
        recent = self.losses[-self.window :]
        return float(np.mean(recent)) if recent else math.inf

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True when it is the new best."""
        self.losses.append(val_loss)
        epoch = len(self.losses) - 1
        self.best_average = min(self.best_average, self.moving_average)
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        epoch = len(self.losses) - 1
        if len(self.losses) >= self.window and self.moving_average > self.ratio * self.best_average:
            return True
        return epoch - self.best_epoch >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_moving_avg: float
    stopped: bool = False


@dataclass
class TrainingResult:
    params: NetworkParams
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    # float masters behind ``params``; equal to it when training ran unquantized
    master_params: Optional[NetworkParams] = None

    @property
    def best_val_loss(self) -> float:
        return min(record.val_loss for record in self.history)


def _evaluate(module: AttSnnModule, inputs, truth, spike_fn, quantize: bool, batch_size: int) -> float:
    """Per-timestep validation loss."""
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            trace = module(inputs[start : start + batch_size], spike_fn, quantize)
            total += float(sequence_loss(trace.estimates, truth[start : start + batch_size])) * len(
                trace.estimates
            )
    return total / (len(inputs) * inputs.shape[1])


def train(
    params: NetworkParams,
    train_set: SequenceType[Sequence],
    val_set: SequenceType[Sequence],
    cfg: TrainConfig = TrainConfig(),
    opt: OptimizerConfig = OptimizerConfig(),
    surrogate: SurrogateSpec = SurrogateSpec(),
    seed: int = 0,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainingResult:
    if not train_set or not val_set:
        raise InsufficientDataError("Training needs non-empty training and validation sets")
    shared = {seq.name for seq in train_set if seq.name} & {seq.name for seq in val_set if seq.name}
    if shared:
        raise ConfigurationError(f"Training and validation sets share {', '.join(sorted(shared))}")
    if any(a is b for a in train_set for b in val_set):
        raise ConfigurationError("Training and validation sets must be disjoint")

    dtype = cfg.torch_dtype
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    train_inputs, train_truth = stack_sequences(train_set, params, dtype)
    val_inputs, val_truth = stack_sequences(val_set, params, dtype)
    steps = train_inputs.shape[1]

    module = AttSnnModule(params, dtype)
    adam = torch.optim.Adam(module.parameters(), lr=opt.learning_rate, betas=opt.betas, eps=opt.eps)
    optimizer = Lookahead(adam, alpha=opt.lookahead_alpha, k=opt.lookahead_k)
    spike_fn = surrogate_spike_fn(surrogate)
    stopper = EarlyStopping(cfg.stop_window, cfg.stop_ratio, cfg.stop_patience)
    batch_size = min(cfg.batch_size, len(train_set))

    val_loss = _evaluate(module, val_inputs, val_truth, spike_fn, cfg.quantize_in_loop, batch_size)
    stopper.update(val_loss)
    history = [EpochRecord(0, math.nan, val_loss, stopper.moving_average)]
    best_state = copy.deepcopy(module.state_dict())
    logger.info("Epoch 0: untrained validation loss %.6f per step", val_loss)

    for epoch in range(1, cfg.max_epochs + 1):
        module.train()
        batch_losses = []
        for _ in range(cfg.batches_per_epoch):
            index = torch.as_tensor(rng.choice(len(train_set), size=batch_size, replace=False))
            optimizer.zero_grad()
            trace = module(train_inputs[index], spike_fn, cfg.quantize_in_loop)
            loss = sequence_loss(trace.estimates, train_truth[index])
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value) or loss_value > cfg.divergence_limit:
                raise TrainingDivergedError(
                    f"Training loss {loss_value:.4g} exceeded {cfg.divergence_limit:g} at epoch {epoch}"
                )
            loss.backward()
            for name, parameter in module.named_parameters():
                if parameter.grad is not None and not bool(torch.isfinite(parameter.grad).all()):
                    raise NonFiniteGradientError(name.removesuffix("_logit"), -1)
            optimizer.step()
            batch_losses.append(loss_value / steps)

        module.eval()
        val_loss = _evaluate(module, val_inputs, val_truth, spike_fn, cfg.quantize_in_loop, batch_size)
        improved = stopper.update(val_loss)
        if improved:
            best_state = copy.deepcopy(module.state_dict())
        record = EpochRecord(epoch, float(np.mean(batch_losses)), val_loss, stopper.moving_average)
        history.append(record)
        logger.info(
            "Epoch %s: train %.6f, val %.6f (avg %.6f)%s",
            epoch,
            record.train_loss,
            val_loss,
            record.val_moving_avg,
            " *" if improved else "",
        )
        if on_epoch is not None:
            on_epoch(record)
        if stopper.should_stop:
            break

    history[-1].stopped = True
    module.load_state_dict(best_state)
    logger.info(
        "Training stopped after epoch %s; best validation loss %.6f at epoch %s",
        history[-1].epoch,
        stopper.best_loss,
        stopper.best_epoch,
    )
    return TrainingResult(
        params=module.to_params(cfg.quantize_in_loop),
        history=history,
        best_epoch=stopper.best_epoch,
        master_params=module.to_params(False),
    )


def window_dataset(sequences: SequenceType[Sequence], length: int) -> List[Sequence]:
    """Fixed-length training windows cut from every sequence."""
    windows = [w for seq in sequences for w in seq.windows(length)]
    if not windows:
        raise InsufficientDataError(f"No sequence is at least {length} samples long")
    return windows
