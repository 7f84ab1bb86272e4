"""Multi-head self-attention, standard and time-aware.

The time-aware variant rescales ReLU-gated query-key logits with a
learnable temporal emphasis curve before the softmax. The curve is a
flipped sigmoid of the relative time distance,

    scale(R) = 1 / (1 + exp(a*R - c)),

with a, c > 0 enforced by softplus reparameterization of unconstrained
scalars. Each head (and each layer) owns an independent (a, c) pair, so
some heads can learn to penalize stale scans hard while others stay
time-agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from . import tensor as tt
from .tensor import Tensor


def inverse_softplus(y: float) -> float:
    """Value u with softplus(u) == y, for y > 0."""
    if y <= 0:
        raise ValueError(f"softplus range is positive, got {y}")
    return float(y + math.log(-math.expm1(-y)))


@dataclass
class TemParams:
    """Unconstrained scalars behind one head's temporal emphasis curve."""

    u_a: Tensor
    u_c: Tensor

    @classmethod
    def from_values(cls, a: float, c: float, dtype=np.float64) -> "TemParams":
        return cls(
            u_a=Tensor(np.asarray(inverse_softplus(a), dtype=dtype), requires_grad=True),
            u_c=Tensor(np.asarray(inverse_softplus(c), dtype=dtype), requires_grad=True),
        )

    def slope(self) -> Tensor:
        """Decline slope a > 0 (graph node)."""
        return tt.softplus(self.u_a)

    def offset(self) -> Tensor:
        """Time-distance offset c > 0 (graph node)."""
        return tt.softplus(self.u_c)


@dataclass
class HeadWeights:
    """Per-head query/key/value projections, each D x d."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor


@dataclass
class MhaLayer:
    """One multi-head attention layer: per-head weights plus output projection."""

    heads: List[HeadWeights]
    w_o: Tensor
    tems: Optional[List[TemParams]] = None  # one per head in time-aware mode

    @property
    def head_dim(self) -> int:
        return self.heads[0].w_q.shape[1]


def _validate_rel_times(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r)
    if (r < 0).any():
        raise ValueError("relative time distances must be nonnegative")
    return r


def tem_scale(rel: Union[np.ndarray, Tensor], params: TemParams) -> Tensor:
    """Temporal emphasis values in (0, 1) for a matrix of time distances.

    Equals sigmoid(c - a*R): maximal at R == 0 where it never falls below
    0.5, and monotonically nonincreasing in R.
    """
    r = rel.data if isinstance(rel, Tensor) else np.asarray(rel, dtype=np.float64)
    _validate_rel_times(r)
    a = params.slope()
    c = params.offset()
    return tt.sigmoid(c + tt.neg(tt.mul(a, Tensor(r, dtype=a.dtype))))


def _ensure_batched(h: Tensor):
    if h.ndim == 2:
        return tt.reshape(h, (1,) + h.shape), True
    return h, False


def _stacked_emphasis(tems: Sequence[TemParams], rel_b: np.ndarray, dtype) -> Tensor:
    """Per-head emphasis values for broadcast against (.., heads, N, N) logits."""
    nh = len(tems)
    a = tt.reshape(tt.stack([t.slope() for t in tems]), (nh, 1, 1))
    c = tt.reshape(tt.stack([t.offset() for t in tems]), (nh, 1, 1))
    return tt.sigmoid(c + tt.neg(tt.mul(a, Tensor(rel_b, dtype=dtype))))


def attention_head_standard(h: Union[np.ndarray, Tensor], w: HeadWeights) -> Tensor:
    """Scaled dot-product attention for one head: softmax(Q K^T / sqrt(d)) V."""
    h = tt.as_tensor(h)
    q = tt.matmul(h, w.w_q)
    k = tt.matmul(h, w.w_k)
    v = tt.matmul(h, w.w_v)
    d = w.w_q.shape[1]
    logits = tt.mul(tt.matmul(q, tt.transpose_last2(k)), 1.0 / math.sqrt(d))
    return tt.matmul(tt.softmax_rows(logits), v)


def attention_head_time_aware(
    h: Union[np.ndarray, Tensor],
    w: HeadWeights,
    tem: TemParams,
    rel: np.ndarray,
) -> Tensor:
    """One time-aware head: softmax(ReLU(Q K^T) * scale(R) / sqrt(d)) V.

    The ReLU gate keeps raw logits nonnegative so that multiplying by the
    emphasis value always moves attention down, never up.
    """
    h = tt.as_tensor(h)
    rel = _validate_rel_times(rel)
    q = tt.matmul(h, w.w_q)
    k = tt.matmul(h, w.w_k)
    v = tt.matmul(h, w.w_v)
    n = h.shape[-2]
    if rel.shape[-2:] != (n, n):
        raise ValueError(f"time-distance matrix {rel.shape} does not match {n} tokens")
    d = w.w_q.shape[1]
    gated = tt.relu(tt.matmul(q, tt.transpose_last2(k)))
    scaled = tt.mul(tt.mul(gated, tem_scale(rel, tem)), 1.0 / math.sqrt(d))
    return tt.matmul(tt.softmax_rows(scaled), v)


def multi_head(
    h: Union[np.ndarray, Tensor],
    layer: MhaLayer,
    mode: str = "standard",
    rel: Optional[np.ndarray] = None,
) -> Tensor:
    """All heads at once, concatenated and projected back to the token dim.

    Per-head projections run as a single column-concatenated matmul and are
    split back into heads afterwards; gradients flow to each head's own
    weight matrices through the concat. `rel` may be a full time-distance
    matrix or its row-constant single-column form, (.., N, 1).
    """
    if mode not in ("standard", "time_aware"):
        raise ValueError(f"unknown attention mode '{mode}'")
    if mode == "time_aware" and rel is None:
        raise ValueError("time_aware attention requires the relative time-distance matrix")

    h = tt.as_tensor(h)
    h, squeeze = _ensure_batched(h)
    lead = h.shape[:-2]
    n, dim = h.shape[-2], h.shape[-1]
    nh = len(layer.heads)
    d = layer.head_dim
    to_heads_perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)

    def project(weights):
        # one concatenated (D, nh*d) product, then split into heads:
        # cheaper than nh broadcast matmuls, same per-head math
        cat = tt.matmul(h, tt.concat(weights, axis=1))  # lead + (n, nh*d)
        return tt.transpose(tt.reshape(cat, lead + (n, nh, d)), to_heads_perm)

    q = project([hw.w_q for hw in layer.heads])  # lead + (nh, n, d)
    k = project([hw.w_k for hw in layer.heads])
    v = project([hw.w_v for hw in layer.heads])

    raw = tt.matmul(q, tt.transpose_last2(k))
    if mode == "standard":
        logits = tt.mul(raw, 1.0 / math.sqrt(d))
    else:
        rel = _validate_rel_times(rel)
        if rel.ndim == 2:
            rel_b = rel[None]
        else:
            rel_b = rel.reshape(lead + (1,) + rel.shape[-2:])
        emphasis = _stacked_emphasis(layer.tems, rel_b, h.dtype)
        logits = tt.mul(tt.mul(tt.relu(raw), emphasis), 1.0 / math.sqrt(d))

    attn = tt.softmax_rows(logits)
    per_head = tt.matmul(attn, v)  # lead + (nh, n, d)
    merged = tt.reshape(tt.transpose(per_head, to_heads_perm), lead + (n, nh * d))
    out = tt.matmul(merged, layer.w_o)
    if squeeze:
        out = tt.reshape(out, out.shape[1:])
    return out
