"""Encoder stack with three temporal modes, plus classifier and MAE heads.

Modes:
  * ``positional`` -- frame-ordinal sinusoids added to tokens (time-blind),
  * ``te``         -- sinusoids of the continuous time distance to the
                      latest scan added to tokens,
  * ``ta``         -- no additive time term; attention logits are rescaled
                      per head by the learnable temporal emphasis curve.

Every mode adds the same fixed 2D patch-position encodings. The CLS token
is prepended after the additive encodings and carries temporal index T
(zero time distance), so emphasis scaling never downweights its queries.
Blocks are pre-norm: x + MHA(LN(x)), then x + MLP(LN(x)), with a final norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from . import attention as attn
from . import embedding as emb
from . import tensor as tt
from .embedding import ImageSequence
from .tensor import Tensor

MODES = ("positional", "te", "ta")

TEM_INIT_SLOPE = 1.0  # per-month decline at init
TEM_INIT_OFFSET = 6.0  # months of near-unity emphasis at init


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 8
    depth: int = 8
    head_dim: int = 8
    mlp_hidden: int = 256
    patch_size: int = 8
    mode: str = "ta"
    pairwise_r: bool = False
    frame_h: int = 32
    frame_w: int = 32
    channels: int = 3
    decoder_depth: int = 2
    precision: str = "single"  # "single" for training, "double" for verification

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.heads * self.head_dim != self.dim:
            raise ValueError(
                f"heads*head_dim must equal dim: {self.heads}*{self.head_dim} != {self.dim}"
            )
        if self.mlp_hidden != 4 * self.dim:
            raise ValueError(f"mlp_hidden must be 4*dim, got {self.mlp_hidden}")
        if self.frame_h % self.patch_size or self.frame_w % self.patch_size:
            raise ValueError(
                f"patch size {self.patch_size} does not divide frame "
                f"{self.frame_h}x{self.frame_w}"
            )
        if self.dim % 4:
            raise ValueError(f"dim must be divisible by 4 for 2d encodings, got {self.dim}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got '{self.precision}'")

    @property
    def np_dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def grid(self) -> tuple:
        return self.frame_h // self.patch_size, self.frame_w // self.patch_size

    @property
    def patches_per_frame(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_len(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LayerParams:
    norm1_scale: Tensor
    norm1_offset: Tensor
    attn: attn.MhaLayer
    norm2_scale: Tensor
    norm2_offset: Tensor
    mlp_w1: Tensor
    mlp_w2: Tensor


@dataclass
class ModelParams:
    """All weights; classifier and MAE branches are optional so that
    checkpoints may carry either head."""

    patch_embed: Tensor
    cls_token: Tensor
    encoder: List[LayerParams]
    final_scale: Tensor
    final_offset: Tensor
    classifier: Optional[Tensor] = None
    mask_token: Optional[Tensor] = None
    decoder: Optional[List[LayerParams]] = None
    decoder_norm_scale: Optional[Tensor] = None
    decoder_norm_offset: Optional[Tensor] = None
    decoder_pred: Optional[Tensor] = None

    def named(self) -> dict:
        """Flat name -> Tensor map in a fixed order (checkpoints, optimizer)."""
        out = {"patch_embed": self.patch_embed, "cls_token": self.cls_token}
        for i, lp in enumerate(self.encoder):
            out.update(_layer_named(f"encoder.{i}", lp))
        out["final_norm.scale"] = self.final_scale
        out["final_norm.offset"] = self.final_offset
        if self.classifier is not None:
            out["classifier"] = self.classifier
        if self.mask_token is not None:
            out["mask_token"] = self.mask_token
        if self.decoder is not None:
            for i, lp in enumerate(self.decoder):
                out.update(_layer_named(f"decoder.{i}", lp))
            out["decoder_norm.scale"] = self.decoder_norm_scale
            out["decoder_norm.offset"] = self.decoder_norm_offset
            out["decoder_pred"] = self.decoder_pred
        return out

    def zero_grads(self) -> None:
        for t in self.named().values():
            t.zero_grad()


def _layer_named(prefix: str, lp: LayerParams) -> dict:
    out = {
        f"{prefix}.norm1.scale": lp.norm1_scale,
        f"{prefix}.norm1.offset": lp.norm1_offset,
    }
    for h, hw in enumerate(lp.attn.heads):
        out[f"{prefix}.attn.head{h}.wq"] = hw.w_q
        out[f"{prefix}.attn.head{h}.wk"] = hw.w_k
        out[f"{prefix}.attn.head{h}.wv"] = hw.w_v
    if lp.attn.tems is not None:
        for h, tem in enumerate(lp.attn.tems):
            out[f"{prefix}.attn.head{h}.tem_ua"] = tem.u_a
            out[f"{prefix}.attn.head{h}.tem_uc"] = tem.u_c
    out[f"{prefix}.attn.proj"] = lp.attn.w_o
    out[f"{prefix}.norm2.scale"] = lp.norm2_scale
    out[f"{prefix}.norm2.offset"] = lp.norm2_offset
    out[f"{prefix}.mlp.w1"] = lp.mlp_w1
    out[f"{prefix}.mlp.w2"] = lp.mlp_w2
    return out


def no_weight_decay(name: str) -> bool:
    """Norm scales/offsets and the CLS/mask tokens are never decayed."""
    return "norm" in name or name in ("cls_token", "mask_token")


def init_weights(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialization.

    Weight matrices ~ U(+/- 1/sqrt(fan_in)), norm scale 1 / offset 0,
    CLS and mask tokens ~ N(0, 0.02), classifier zeroed so the untrained
    model outputs probability 0.5 exactly.
    """
    rng = np.random.default_rng(seed)
    dt = config.np_dtype

    def linear(fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dt),
                      requires_grad=True)

    def norm_pair(dim):
        return (Tensor(np.ones(dim, dtype=dt), requires_grad=True),
                Tensor(np.zeros(dim, dtype=dt), requires_grad=True))

    def make_layer():
        n1s, n1o = norm_pair(config.dim)
        heads = [
            attn.HeadWeights(
                linear(config.dim, config.head_dim),
                linear(config.dim, config.head_dim),
                linear(config.dim, config.head_dim),
            )
            for _ in range(config.heads)
        ]
        tems = None
        if config.mode == "ta":
            tems = [
                attn.TemParams.from_values(TEM_INIT_SLOPE, TEM_INIT_OFFSET, dtype=dt)
                for _ in range(config.heads)
            ]
        w_o = linear(config.heads * config.head_dim, config.dim)
        n2s, n2o = norm_pair(config.dim)
        return LayerParams(
            n1s, n1o, attn.MhaLayer(heads, w_o, tems), n2s, n2o,
            linear(config.dim, config.mlp_hidden), linear(config.mlp_hidden, config.dim),
        )

    patch_embed = linear(config.patch_len, config.dim)
    cls_token = Tensor(rng.normal(0.0, 0.02, size=(1, config.dim)).astype(dt),
                       requires_grad=True)
    encoder = [make_layer() for _ in range(config.depth)]
    fs, fo = norm_pair(config.dim)
    classifier = Tensor(np.zeros((config.dim, 1), dtype=dt), requires_grad=True)
    mask_token = Tensor(rng.normal(0.0, 0.02, size=(1, config.dim)).astype(dt),
                        requires_grad=True)
    decoder = [make_layer() for _ in range(config.decoder_depth)]
    ds, do = norm_pair(config.dim)
    decoder_pred = linear(config.dim, config.patch_len)
    return ModelParams(
        patch_embed, cls_token, encoder, fs, fo,
        classifier, mask_token, decoder, ds, do, decoder_pred,
    )


# -- token pipeline (numpy side) -----------------------------------------------


def _patchify_batch(frames: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, T, H, W, C) -> (B, T*P, p*p*C) in row-major patch order."""
    b, t, h, w, c = frames.shape
    p = patch_size
    gh, gw = h // p, w // p
    tiles = frames.reshape(b, t, gh, p, gw, p, c).transpose(0, 1, 2, 4, 3, 5, 6)
    return tiles.reshape(b, t * gh * gw, p * p * c)


def _additive_encodings(config: ModelConfig, times: np.ndarray, frames_t: int) -> np.ndarray:
    """Fixed per-token offsets: 2D position plus the mode's time term.

    Returns (N, D) when shared across the batch (positional/ta modes),
    else (B, N, D).
    """
    pp = config.patches_per_frame
    gh, gw = config.grid
    pos = np.tile(emb.positional_encoding_2d(gh, gw, config.dim), (frames_t, 1))
    if config.mode == "positional":
        ordinals = np.arange(frames_t, dtype=np.float64)
        pos = pos + np.repeat(emb.time_encoding_many(ordinals, config.dim), pp, axis=0)
        return pos
    if config.mode == "te":
        rel = np.abs(times[:, -1:] - times)  # (B, T)
        te = emb.time_encoding_many(rel.reshape(-1), config.dim).reshape(
            times.shape[0], frames_t, config.dim
        )
        return pos[None] + np.repeat(te, pp, axis=1)
    return pos  # ta: attention handles time


def build_rel_matrix(
    times: np.ndarray,
    tokens_per_frame: int,
    include_cls: bool = True,
    visible: Optional[np.ndarray] = None,
    pairwise: bool = False,
) -> np.ndarray:
    """Batched relative time-distance matrix for the attention stack.

    `times` is (B, T). Token i of a sample gets that frame's distance to the
    latest scan in every column; the CLS slot (row/col 0 when included) sits
    at the latest temporal index, so its distances are zero.
    """
    times = np.asarray(times, dtype=np.float64)
    b, t = times.shape
    tok_times = np.repeat(times, tokens_per_frame, axis=1)  # (B, N)
    if visible is not None:
        tok_times = np.take_along_axis(tok_times, visible, axis=1)
    if include_cls:
        tok_times = np.concatenate([times[:, -1:], tok_times], axis=1)
    n = tok_times.shape[1]
    if pairwise:
        return np.abs(tok_times[:, :, None] - tok_times[:, None, :])
    rel = np.abs(times[:, -1:] - tok_times)  # (B, n)
    return np.broadcast_to(rel[:, :, None], (b, n, n)).copy()


def _rel_column(
    times: np.ndarray,
    tokens_per_frame: int,
    visible: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Row-constant time distances compressed to one column, (B, n, 1).

    Equivalent to build_rel_matrix under broadcasting (every row of the
    full matrix is constant); the attention stack broadcasts it across
    columns, skipping an N-fold recompute of identical emphasis values.
    """
    times = np.asarray(times, dtype=np.float64)
    tok_times = np.repeat(times, tokens_per_frame, axis=1)
    if visible is not None:
        tok_times = np.take_along_axis(tok_times, visible, axis=1)
    tok_times = np.concatenate([times[:, -1:], tok_times], axis=1)  # CLS first
    return np.abs(times[:, -1:] - tok_times)[:, :, None]


def _block(h: Tensor, lp: LayerParams, mode: str, rel: Optional[np.ndarray]) -> Tensor:
    a = tt.layer_norm(h, lp.norm1_scale, lp.norm1_offset)
    h = h + attn.multi_head(a, lp.attn, mode, rel)
    m = tt.layer_norm(h, lp.norm2_scale, lp.norm2_offset)
    return h + tt.matmul(tt.gelu(tt.matmul(m, lp.mlp_w1)), lp.mlp_w2)


def _encode(
    params: ModelParams,
    config: ModelConfig,
    frames: np.ndarray,
    times: np.ndarray,
    visible: Optional[np.ndarray] = None,
) -> Tensor:
    """Run the encoder; returns (B, K+1, D) with the CLS output at row 0."""
    dt = config.np_dtype
    b, t = frames.shape[0], frames.shape[1]
    patches = _patchify_batch(frames.astype(dt, copy=False), config.patch_size)
    x = tt.matmul(Tensor(patches), params.patch_embed)
    x = x + Tensor(_additive_encodings(config, times, t).astype(dt))
    if visible is not None:
        x = tt.gather_rows(x, visible)
    cls = tt.expand(params.cls_token, (b, 1, config.dim))
    h = tt.concat([cls, x], axis=1)
    rel = None
    attn_mode = "standard"
    if config.mode == "ta":
        attn_mode = "time_aware"
        if config.pairwise_r:
            rel = build_rel_matrix(times, config.patches_per_frame, True, visible, True)
        else:
            rel = _rel_column(times, config.patches_per_frame, visible)
    for lp in params.encoder:
        h = _block(h, lp, attn_mode, rel)
    return tt.layer_norm(h, params.final_scale, params.final_offset)


def forward_logits(
    params: ModelParams, config: ModelConfig, frames: np.ndarray, times: np.ndarray
) -> Tensor:
    """Classifier logits for a batch, shape (B,). Probability = sigmoid."""
    if params.classifier is None:
        raise ValueError("model has no classifier head")
    h = _encode(params, config, frames, times)
    cls_out = tt.gather_rows(h, np.array([0]))  # (B, 1, D)
    return tt.reshape(tt.matmul(cls_out, params.classifier), (frames.shape[0],))


def forward_classify(seq: ImageSequence, params: ModelParams, config: ModelConfig) -> float:
    """Malignancy probability in (0, 1) for one sequence."""
    _check_sequence(seq, config)
    logit = forward_logits(params, config, seq.frames[None], seq.times[None])
    return float(tt.sigmoid(logit).data[0])


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, computed stably from logits.

    Uses -log sigmoid(z) = softplus(-z) and -log(1 - sigmoid(z)) = softplus(z),
    i.e. loss = softplus(z) - z*y for y in {0, 1}.
    """
    y = np.asarray(labels, dtype=logits.dtype)
    return tt.tmean(tt.softplus(logits) + tt.mul(logits, Tensor(-y)))


def _check_sequence(seq: ImageSequence, config: ModelConfig) -> None:
    t, h, w, c = seq.frames.shape
    if (h, w, c) != (config.frame_h, config.frame_w, config.channels):
        raise ValueError(
            f"sequence frames {h}x{w}x{c} do not match configured "
            f"{config.frame_h}x{config.frame_w}x{config.channels}"
        )


# -- masked autoencoding --------------------------------------------------------


@dataclass
class MaskPlan:
    """Which patch tokens are hidden. The CLS token is never masked."""

    masked: np.ndarray  # (N,) bool
    ratio: float


def sample_mask(t: int, p: int, ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly random mask over the T*P patch tokens, ceil(ratio*N) of them."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    n = t * p
    count = math.ceil(ratio * n)
    masked = np.zeros(n, dtype=bool)
    masked[rng.choice(n, size=count, replace=False)] = True
    return MaskPlan(masked, ratio)


def _normalize_patches(patches: np.ndarray) -> np.ndarray:
    mu = patches.mean(axis=-1, keepdims=True)
    var = patches.var(axis=-1, keepdims=True)
    return (patches - mu) / np.sqrt(var + 1e-6)


def forward_mae_batch(
    params: ModelParams,
    config: ModelConfig,
    frames: np.ndarray,
    times: np.ndarray,
    masked: np.ndarray,
):
    """MAE loss over a batch. `masked` is (B, N) bool with equal counts per row.

    The encoder sees only visible tokens (plus CLS); the depth-2 decoder sees
    visible outputs scattered back among mask tokens that carry their
    positional(+time) encodings. Loss is the mean squared error on masked
    patches against per-patch standardized pixel targets.
    """
    if params.mask_token is None or params.decoder is None:
        raise ValueError("model has no MAE branch")
    dt = config.np_dtype
    b, t = frames.shape[0], frames.shape[1]
    n = t * config.patches_per_frame
    masked = np.asarray(masked, dtype=bool)
    if masked.shape != (b, n):
        raise ValueError(f"mask shape {masked.shape} does not match (B={b}, N={n})")
    counts = masked.sum(axis=1)
    if (counts == 0).any() or (counts == n).any():
        raise ValueError("mask plans must hide at least one token and keep one visible")
    if np.unique(counts).size != 1:
        raise ValueError("per-sample mask counts must match within a batch")

    visible = np.nonzero(~masked)[1].reshape(b, -1)
    hidden = np.nonzero(masked)[1].reshape(b, -1)

    enc = _encode(params, config, frames, times, visible=visible)  # (B, K+1, D)
    k = visible.shape[1]
    cls_out = tt.gather_rows(enc, np.array([0]))
    vis_out = tt.gather_rows(enc, np.arange(1, k + 1))

    enc_add = _additive_encodings(config, times, t).astype(dt)
    base = tt.expand(params.mask_token, (b, n, config.dim)) + Tensor(enc_add)
    full = tt.scatter_rows(base, visible, vis_out)
    h = tt.concat([cls_out, full], axis=1)  # (B, N+1, D)

    rel = None
    attn_mode = "standard"
    if config.mode == "ta":
        attn_mode = "time_aware"
        if config.pairwise_r:
            rel = build_rel_matrix(times, config.patches_per_frame, True, None, True)
        else:
            rel = _rel_column(times, config.patches_per_frame, None)
    for lp in params.decoder:
        h = _block(h, lp, attn_mode, rel)
    h = tt.layer_norm(h, params.decoder_norm_scale, params.decoder_norm_offset)

    dec_masked = tt.gather_rows(h, hidden + 1)  # skip CLS slot
    preds = tt.matmul(dec_masked, params.decoder_pred)  # (B, M, patch_len)

    patches = _patchify_batch(frames.astype(dt, copy=False), config.patch_size)
    targets = _normalize_patches(patches)
    target_sel = np.take_along_axis(targets, hidden[:, :, None], axis=1)
    diff = preds + Tensor((-target_sel).astype(dt))
    loss = tt.tmean(diff * diff)
    return loss, preds.data


def forward_mae(seq: ImageSequence, params: ModelParams, config: ModelConfig, plan: MaskPlan):
    """Single-sequence MAE forward: (scalar loss tensor, masked-patch predictions)."""
    _check_sequence(seq, config)
    n = seq.num_frames * config.patches_per_frame
    if plan.masked.shape != (n,):
        raise ValueError(f"mask plan covers {plan.masked.size} tokens, sequence has {n}")
    loss, preds = forward_mae_batch(
        params, config, seq.frames[None], seq.times[None], plan.masked[None]
    )
    return loss, preds[0]
