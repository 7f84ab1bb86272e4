"""Optimization: AdamW with decoupled decay, cosine warmup, augmentation,
and the MAE-pretraining / classifier fine-tuning drivers.

Batches run as one tape; with ``workers > 1`` each batch is split into
ordered shards whose scaled losses are backpropagated in sample-index
order, so the merged gradient never depends on scheduling. ``workers=1``
is the bit-reproducible reference path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import model as mdl
from . import tensor as tt
from .datasynth import NoduleDataset
from .embedding import ImageSequence
from .model import ModelConfig, ModelParams
from .tensor import Tensor, backward


@dataclass
class ScheduleConfig:
    warmup_steps: int
    total_steps: int
    lr_base: float
    lr_min: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 <= warmup_steps < total_steps, got {self.warmup_steps}/{self.total_steps}"
            )
        if self.lr_min > self.lr_base:
            raise ValueError("lr_min must not exceed lr_base")


def lr_at(step: int, sched: ScheduleConfig) -> float:
    """Linear ramp to lr_base over warmup, then a single cosine decay to lr_min."""
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside schedule of {sched.total_steps} steps")
    if step < sched.warmup_steps:
        return sched.lr_base * step / sched.warmup_steps
    progress = (step - sched.warmup_steps) / (sched.total_steps - sched.warmup_steps)
    return sched.lr_min + 0.5 * (sched.lr_base - sched.lr_min) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Bias-corrected Adam plus decoupled weight decay.

    Update: p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p.
    Norm scales/offsets and CLS/mask tokens are excluded from decay.
    """

    def __init__(
        self,
        named_params: Dict[str, Tensor],
        lr: float = 3e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        decay_exempt: Callable[[str], bool] = mdl.no_weight_decay,
    ):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_exempt = decay_exempt
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.dtype, copy=False)
            if self.weight_decay and not self.decay_exempt(name):
                p.data -= (lr * self.weight_decay) * p.data

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def clip_gradients(named_params: Dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm."""
    norm = tt.global_grad_norm(named_params.values())
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in named_params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- augmentation ---------------------------------------------------------------

CROP_PAD = 4


@dataclass
class AugmentTransform:
    """One sequence-wide draw: shared crop offset, flip choice, intensity shift."""

    flip: bool
    dy: int  # crop offsets into the reflect-padded frame; CROP_PAD = identity
    dx: int
    shift: float

    @classmethod
    def identity(cls) -> "AugmentTransform":
        return cls(False, CROP_PAD, CROP_PAD, 0.0)

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "AugmentTransform":
        return cls(
            flip=bool(rng.integers(2)),
            dy=int(rng.integers(0, 2 * CROP_PAD + 1)),
            dx=int(rng.integers(0, 2 * CROP_PAD + 1)),
            shift=float(rng.uniform(-0.1, 0.1)),
        )


def _apply_transform(frames: np.ndarray, tf: AugmentTransform) -> np.ndarray:
    t, h, w, c = frames.shape
    padded = np.pad(frames, ((0, 0), (CROP_PAD, CROP_PAD), (CROP_PAD, CROP_PAD), (0, 0)),
                    mode="reflect")
    out = padded[:, tf.dy:tf.dy + h, tf.dx:tf.dx + w, :]
    if tf.flip:
        out = out[:, :, ::-1, :]
    return np.clip(out + tf.shift, 0.0, 1.0)


def augment(
    seq: ImageSequence,
    rng: np.random.Generator,
    transform: Optional[AugmentTransform] = None,
) -> ImageSequence:
    """One shared geometric transform per sequence plus a global intensity shift.

    Every frame receives the same crop offset and flip so growth geometry
    stays consistent across time.
    """
    tf = AugmentTransform.draw(rng) if transform is None else transform
    return ImageSequence(_apply_transform(seq.frames, tf), seq.times.copy(), seq.label)


def augment_batch(frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-sample draws in index order over a (B, T, H, W, C) stack."""
    return np.stack([
        _apply_transform(frames[i], AugmentTransform.draw(rng)) for i in range(len(frames))
    ])


# -- training drivers -------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-4
    lr_min: float = 0.0
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    clip_norm: float = 1.0
    mask_ratio: Optional[float] = None  # None: 0.75 for T >= 4, else 0.5
    seed: int = 0
    workers: int = 1
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("epochs, batch_size and workers must be positive")
        if self.mask_ratio is not None and not 0 < self.mask_ratio < 1:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")


def mae_defaults() -> TrainConfig:
    return TrainConfig(epochs=30, lr=1e-3)


def finetune_defaults() -> TrainConfig:
    return TrainConfig(epochs=20, lr=3e-4)


def default_mask_ratio(num_frames: int) -> float:
    """Heavier masking for longer sequences: 0.75 from four frames up, else 0.5."""
    return 0.75 if num_frames >= 4 else 0.5


def _schedule_for(dataset_len: int, cfg: TrainConfig) -> ScheduleConfig:
    steps_per_epoch = math.ceil(dataset_len / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = int(cfg.warmup_frac * total)
    return ScheduleConfig(min(warmup, total - 1), total, cfg.lr, cfg.lr_min)


def _shards(count: int, workers: int) -> List[np.ndarray]:
    return [s for s in np.array_split(np.arange(count), workers) if s.size]


def _run_batch(loss_for_rows: Callable[[np.ndarray], Tensor], batch_rows: np.ndarray,
               workers: int) -> float:
    """Backprop the mean batch loss, sharded in sample-index order."""
    total = 0.0
    n = len(batch_rows)
    for shard in _shards(n, workers):
        loss = loss_for_rows(batch_rows[shard])
        scaled = tt.mul(loss, len(shard) / n)
        backward(scaled)
        total += loss.item() * len(shard) / n
    return total


def pretrain_mae(
    dataset: NoduleDataset,
    params: ModelParams,
    config: ModelConfig,
    train: TrainConfig,
) -> Tuple[ModelParams, List[float], List[tuple]]:
    """Masked-autoencoder pretraining. Returns (params, per-step losses, metric rows)."""
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    t = dataset.num_frames
    n_tokens = t * config.patches_per_frame
    ratio = train.mask_ratio if train.mask_ratio is not None else default_mask_ratio(t)
    rng = np.random.default_rng(train.seed)
    named = params.named()
    opt = AdamW(named, lr=train.lr, weight_decay=train.weight_decay)
    sched = _schedule_for(len(dataset), train)

    losses: List[float] = []
    metrics: List[tuple] = []
    step = 0
    for epoch in range(train.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), train.batch_size):
            rows = order[start:start + train.batch_size]
            frames = dataset.frames[rows].astype(config.np_dtype)
            if train.augment:
                frames = augment_batch(frames, rng)
            times = dataset.times[rows].astype(np.float64)
            masks = np.stack([
                mdl.sample_mask(t, config.patches_per_frame, ratio, rng).masked
                for _ in rows
            ])

            def loss_for(sel):
                loss, _ = mdl.forward_mae_batch(
                    params, config, frames[sel], times[sel], masks[sel]
                )
                return loss

            opt.zero_grad()
            loss_val = _run_batch(loss_for, np.arange(len(rows)), train.workers)
            clip_gradients(named, train.clip_norm)
            opt.step(lr_at(step, sched))
            losses.append(loss_val)
            metrics.append((step, epoch, "train", "mae_loss", loss_val))
            step += 1
    return params, losses, metrics


def load_encoder_from(params: ModelParams, named_arrays: Dict[str, np.ndarray],
                      config: ModelConfig) -> None:
    """Copy encoder-side weights from a checkpoint's raw arrays (decoder dropped)."""
    target = params.named()
    for name, arr in named_arrays.items():
        if name.startswith("decoder") or name in ("mask_token", "classifier"):
            continue
        if name not in target:
            raise ValueError(f"checkpoint tensor '{name}' has no slot in this model")
        if target[name].shape != arr.shape:
            raise ValueError(
                f"shape mismatch for '{name}': checkpoint {arr.shape} vs model {target[name].shape}"
            )
        target[name].data[...] = arr.astype(config.np_dtype)


def train_classifier(
    dataset: NoduleDataset,
    params: ModelParams,
    config: ModelConfig,
    train: TrainConfig,
    val: Optional[NoduleDataset] = None,
) -> Tuple[ModelParams, List[tuple]]:
    """Binary cross-entropy fine-tuning; logs train loss and held-out AUC per epoch."""
    from .evaluate import ScoredSet, roc_auc, score_dataset  # deferred: evaluate sits above training

    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(train.seed)
    named = params.named()
    opt = AdamW(named, lr=train.lr, weight_decay=train.weight_decay)
    sched = _schedule_for(len(dataset), train)

    metrics: List[tuple] = []
    step = 0
    for epoch in range(train.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(order), train.batch_size):
            rows = order[start:start + train.batch_size]
            frames = dataset.frames[rows].astype(config.np_dtype)
            if train.augment:
                frames = augment_batch(frames, rng)
            times = dataset.times[rows].astype(np.float64)
            labels = dataset.labels[rows].astype(np.float64)

            def loss_for(sel):
                logits = mdl.forward_logits(params, config, frames[sel], times[sel])
                return mdl.bce_with_logits(logits, labels[sel])

            opt.zero_grad()
            loss_val = _run_batch(loss_for, np.arange(len(rows)), train.workers)
            clip_gradients(named, train.clip_norm)
            opt.step(lr_at(step, sched))
            epoch_losses.append(loss_val)
            metrics.append((step, epoch, "train", "bce_loss", loss_val))
            step += 1
        if val is not None and len(val):
            scores = score_dataset(params, config, val)
            labels = val.labels.astype(int)
            if labels.min() == labels.max():
                import warnings

                warnings.warn("validation set has a single class; AUC undefined")
                auc = float("nan")
            else:
                auc = roc_auc(ScoredSet(scores, labels))
            metrics.append((step, epoch, "val", "auc", auc))
    return params, metrics


def write_metrics_csv(path: str, rows: List[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,epoch,split,metric,value\n")
        for step, epoch, split, metric, value in rows:
            fh.write(f"{step},{epoch},{split},{metric},{value:.8g}\n")


# -- flat key=value config files ---------------------------------------------------


def parse_config_file(path: str) -> Dict[str, str]:
    """Flat key=value lines, '#' comments; returns raw string values."""
    out: Dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got '{stripped}'")
                key, value = stripped.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as e:
        raise OSError(f"cannot read config file '{path}': {e}") from e
    return out
