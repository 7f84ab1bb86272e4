"""Token extraction and temporal/positional encodings for image sequences.

A longitudinal sequence of T frames becomes N = T*P tokens (P patches per
frame). Two temporal encodings are supported: continuous-time sinusoids of
the relative time distance to the latest scan, and ordinal (index) sinusoids
for the time-blind baseline. Fixed 2D patch-position encodings are shared by
every mode. All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

ENCODING_BASE = 10000.0


@dataclass
class ImageSequence:
    """T frames of H x W x C intensities in [0, 1] plus acquisition times.

    Times are months, nonnegative and strictly increasing. Label is 0
    (benign), 1 (malignant), or None for unlabeled data.
    """

    frames: np.ndarray
    times: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (T, H, W, C), got shape {self.frames.shape}")
        if self.times.ndim != 1 or len(self.times) != len(self.frames):
            raise ValueError(
                f"times length {self.times.shape} does not match {len(self.frames)} frames"
            )
        _check_times(self.times)

    @property
    def num_frames(self) -> int:
        return len(self.times)


@dataclass
class TokenSequence:
    """N x D embedded tokens with their originating frame indices."""

    tokens: np.ndarray
    frame_index: np.ndarray  # length N, values in 0..T-1, nondecreasing blocks
    tokens_per_frame: int

    def __post_init__(self):
        n = len(self.tokens)
        if len(self.frame_index) != n or n % self.tokens_per_frame:
            raise ValueError(
                f"{n} tokens do not form frames of {self.tokens_per_frame} "
                f"with {len(self.frame_index)} indices"
            )

    @property
    def num_frames(self) -> int:
        return len(self.tokens) // self.tokens_per_frame


def _check_times(times: np.ndarray) -> None:
    if times.size == 0:
        raise ValueError("times must be nonempty")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError(f"times must be strictly increasing, got {times.tolist()}")


def patchify(frame: np.ndarray, patch_size: int) -> np.ndarray:
    """Split an H x W x C frame into P flattened patches, row-major order."""
    h, w, c = frame.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"patch size {p} does not divide frame dims H={h}, W={w}")
    gh, gw = h // p, w // p
    tiles = frame.reshape(gh, p, gw, p, c).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(gh * gw, p * p * c)


def unpatchify(patches: np.ndarray, frame_shape: tuple, patch_size: int) -> np.ndarray:
    """Inverse of patchify."""
    h, w, c = frame_shape
    p = patch_size
    gh, gw = h // p, w // p
    tiles = patches.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4)
    return tiles.reshape(h, w, c)


def embed_patches(patches: np.ndarray, w_embed: np.ndarray) -> np.ndarray:
    """Linearly project flattened patches into the token dimension (no bias)."""
    if patches.shape[-1] != w_embed.shape[0]:
        raise ValueError(
            f"patch length {patches.shape[-1]} does not match embedding rows {w_embed.shape[0]}"
        )
    return patches @ w_embed


def rel_time_vector(times) -> np.ndarray:
    """Per-frame distance (months) to the latest acquisition: |t_T - t_t|."""
    times = np.asarray(times, dtype=np.float64)
    _check_times(times)
    return np.abs(times[-1] - times)


def time_encoding(r: float, dim: int) -> np.ndarray:
    """Sinusoidal encoding of a continuous time distance.

    Even slots hold sin(r / base^(2i/D)), odd slots cos of the same angle,
    for i = 0 .. D/2-1. Entries are bounded in [-1, 1].
    """
    if dim % 2 or dim < 2:
        raise ValueError(f"encoding dim must be even and >= 2, got {dim}")
    if r < 0:
        raise ValueError(f"time distance must be nonnegative, got {r}")
    return time_encoding_many(np.array([r]), dim)[0]


def time_encoding_many(rs: np.ndarray, dim: int) -> np.ndarray:
    """Vectorized time_encoding: one row per distance."""
    if dim % 2 or dim < 2:
        raise ValueError(f"encoding dim must be even and >= 2, got {dim}")
    rs = np.asarray(rs, dtype=np.float64)
    i = np.arange(dim // 2)
    angles = rs.reshape(-1, 1) / ENCODING_BASE ** (2.0 * i / dim)
    out = np.empty(rs.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles).reshape(rs.shape + (dim // 2,))
    out[..., 1::2] = np.cos(angles).reshape(rs.shape + (dim // 2,))
    return out


def time_shift_matrix(k: float, dim: int) -> np.ndarray:
    """The D x D block-rotation M_k with M_k @ TE(r) == TE(r + k) for all r.

    Built analytically from 2x2 rotations by angle k / base^(2i/D) acting on
    each (sin, cos) pair.
    """
    if dim % 2 or dim < 2:
        raise ValueError(f"encoding dim must be even and >= 2, got {dim}")
    m = np.zeros((dim, dim), dtype=np.float64)
    for i in range(dim // 2):
        theta = k / ENCODING_BASE ** (2.0 * i / dim)
        ct, st = np.cos(theta), np.sin(theta)
        s, c = 2 * i, 2 * i + 1
        # [sin(a+t), cos(a+t)] = [[ct, st], [-st, ct]] @ [sin a, cos a]
        m[s, s], m[s, c] = ct, st
        m[c, s], m[c, c] = -st, ct
    return m


def add_time_encodings(seq: TokenSequence, r: np.ndarray) -> TokenSequence:
    """Add TE(r_t) to every token of frame t. Not idempotent."""
    r = np.asarray(r, dtype=np.float64)
    if len(r) != seq.num_frames:
        raise ValueError(
            f"got {len(r)} time distances for {seq.num_frames} frames"
        )
    enc = time_encoding_many(r, seq.tokens.shape[1])
    tokens = seq.tokens + enc[seq.frame_index]
    return TokenSequence(tokens, seq.frame_index.copy(), seq.tokens_per_frame)


def positional_encoding_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2D patch-position encodings, P x D (row half, column half).

    The first D/2 dims encode the patch row index with the sinusoid family,
    the last D/2 the column index. Added identically to every frame.
    """
    if dim % 4:
        raise ValueError(f"2d positional encoding needs dim divisible by 4, got {dim}")
    half = dim // 2
    rows = time_encoding_many(np.arange(grid_h, dtype=np.float64), half)
    cols = time_encoding_many(np.arange(grid_w, dtype=np.float64), half)
    out = np.empty((grid_h * grid_w, dim), dtype=np.float64)
    for i in range(grid_h):
        for j in range(grid_w):
            out[i * grid_w + j, :half] = rows[i]
            out[i * grid_w + j, half:] = cols[j]
    return out


def rel_time_matrix(times, tokens_per_frame: int) -> np.ndarray:
    """N x N relative time distances, N = T*P.

    Row i is constant at the distance between token i's frame and the
    latest frame, so rows belonging to the latest frame are all zero.
    """
    times = np.asarray(times, dtype=np.float64)
    _check_times(times)
    if tokens_per_frame < 1:
        raise ValueError(f"tokens_per_frame must be >= 1, got {tokens_per_frame}")
    r = np.repeat(rel_time_vector(times), tokens_per_frame)
    n = r.size
    return np.broadcast_to(r[:, None], (n, n)).copy()


def pairwise_time_matrix(times, tokens_per_frame: int) -> np.ndarray:
    """|t_i - t_j| per token pair. Optional variant, off by default."""
    times = np.asarray(times, dtype=np.float64)
    _check_times(times)
    t = np.repeat(times, tokens_per_frame)
    return np.abs(t[:, None] - t[None, :])


def tokenize_sequence(seq: ImageSequence, w_embed: np.ndarray, patch_size: int) -> TokenSequence:
    """Patchify + embed every frame of a sequence into one token sequence."""
    per_frame = [embed_patches(patchify(f, patch_size), w_embed) for f in seq.frames]
    p = per_frame[0].shape[0]
    tokens = np.concatenate(per_frame, axis=0)
    frame_index = np.repeat(np.arange(seq.num_frames), p)
    return TokenSequence(tokens, frame_index, p)
