"""Procedural longitudinal nodule benchmark.

Two variants of the same growth simulation:

  * v1 -- scans at regular intervals; malignant nodules grow 3x faster on
    average, so later frames separate the classes by size.
  * v2 -- per-frame target sizes are drawn from one class-independent
    schedule and acquisition times are derived from each sample's growth
    rate (t = (d - d0) / g). Size distributions then match across classes
    frame by frame and the time stamps carry the only label signal.

Growth is linear, d(t) = d0 + g*t, with g from a truncated gaussian whose
malignant version is the benign distribution scaled by 3. Nodules render
as additive radial blobs whose full-width-half-max equals the requested
diameter. Generation is deterministic: sample i uses the stream seeded by
(seed, i), so parallel and serial generation agree byte for byte.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .embedding import ImageSequence

DATASET_MAGIC = b"TDDS"
DATASET_VERSION = 1

GROWTH_RATIO = 3.0  # malignant mean is three times the benign mean
MIN_GROWTH_FRACTION = 0.05  # truncate rates below this fraction of the mean
CENTER_JITTER = 2.0  # px of per-frame nodule drift


@dataclass
class GeneratorSpec:
    image_size: int = 32
    channels: int = 3
    frames: int = 5
    benign_growth_mean: float = 0.25  # px per month
    growth_std: float = 0.08
    init_diameter_mean: float = 3.0
    init_diameter_std: float = 0.5
    intensity: float = 0.85
    edge_softness: float = 2.0
    interval_months: float = 3.0  # v1 scan spacing
    schedule_step_mean: float = 1.0  # v2 per-frame diameter increment (px)
    schedule_step_std: float = 0.3
    background: str = "noise"  # "noise" or a CIFAR-10 binary file path
    variant: str = "v1"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("v1", "v2"):
            raise ValueError(f"variant must be 'v1' or 'v2', got '{self.variant}'")
        for name in ("growth_std", "init_diameter_std", "schedule_step_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.benign_growth_mean <= 0:
            raise ValueError("benign_growth_mean must be positive")

    @property
    def malignant_growth_mean(self) -> float:
        # enforced relation, not an independent knob
        return GROWTH_RATIO * self.benign_growth_mean


@dataclass
class SyntheticSample:
    sequence: ImageSequence
    sample_seed: int
    growth: float
    init_diameter: float
    diameters: np.ndarray


class NoduleDataset:
    """In-memory dataset: stacked frames, times and labels."""

    def __init__(self, frames: np.ndarray, times: np.ndarray, labels: np.ndarray):
        self.frames = np.asarray(frames, dtype=np.float32)
        self.times = np.asarray(times, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.uint8)
        if not (len(self.frames) == len(self.times) == len(self.labels)):
            raise ValueError("frames/times/labels lengths disagree")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[1]

    def sequence(self, i: int) -> ImageSequence:
        return ImageSequence(self.frames[i], self.times[i].astype(np.float64),
                             int(self.labels[i]))

    @classmethod
    def from_samples(cls, samples: List[SyntheticSample]) -> "NoduleDataset":
        return cls(
            np.stack([s.sequence.frames for s in samples]).astype(np.float32),
            np.stack([s.sequence.times for s in samples]).astype(np.float32),
            np.array([s.sequence.label for s in samples], dtype=np.uint8),
        )


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def sample_growth(label: int, spec: GeneratorSpec, rng: np.random.Generator) -> float:
    """Growth rate in px/month; malignant draws are the benign law scaled by 3."""
    floor = MIN_GROWTH_FRACTION * spec.benign_growth_mean
    g = rng.normal(spec.benign_growth_mean, spec.growth_std)
    while g <= floor:
        g = rng.normal(spec.benign_growth_mean, spec.growth_std)
    return float(g * GROWTH_RATIO) if label else float(g)


def _sample_init_diameter(spec: GeneratorSpec, rng: np.random.Generator) -> float:
    lo = max(0.5, spec.init_diameter_mean - 3.0 * spec.init_diameter_std)
    d = rng.normal(spec.init_diameter_mean, spec.init_diameter_std)
    while d < lo:
        d = rng.normal(spec.init_diameter_mean, spec.init_diameter_std)
    return float(d)


def _noise_background(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    """Smoothed uniform noise in [0.05, 0.45] so the bright blob stands out."""
    raw = rng.random((spec.image_size, spec.image_size, spec.channels))
    sm = np.stack([gaussian_filter(raw[..., c], sigma=2.0) for c in range(spec.channels)], axis=-1)
    lo, hi = sm.min(), sm.max()
    if hi - lo < 1e-12:
        return np.full_like(sm, 0.25)
    return 0.05 + 0.4 * (sm - lo) / (hi - lo)


def render_nodule(
    background: np.ndarray,
    center: tuple,
    diameter_px: float,
    spec: GeneratorSpec,
) -> np.ndarray:
    """Superimpose an additive radial blob, clamped to [0, 1].

    The profile is intensity * exp(-ln2 * (2*dist/diameter)^k), which puts
    the half-maximum exactly at dist = diameter/2 (FWHM == diameter).
    """
    h, w = background.shape[:2]
    cy, cx = center
    if not (0 <= cy < h and 0 <= cx < w):
        raise ValueError(f"nodule center {center} outside {h}x{w} frame")
    if diameter_px <= 0:
        raise ValueError(f"diameter must be positive, got {diameter_px}")
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    blob = spec.intensity * np.exp(
        -math.log(2.0) * (2.0 * dist / diameter_px) ** spec.edge_softness
    )
    return np.clip(background + blob[..., None], 0.0, 1.0)


def _pick_center(spec: GeneratorSpec, rng: np.random.Generator) -> tuple:
    # keep the blob core away from the border
    margin = spec.image_size * 0.3
    return (
        float(rng.uniform(margin, spec.image_size - margin)),
        float(rng.uniform(margin, spec.image_size - margin)),
    )


def _jittered(center, spec: GeneratorSpec, rng: np.random.Generator) -> tuple:
    j = rng.uniform(-CENTER_JITTER, CENTER_JITTER, size=2)
    cy = float(np.clip(center[0] + j[0], 1, spec.image_size - 2))
    cx = float(np.clip(center[1] + j[1], 1, spec.image_size - 2))
    return cy, cx


def _render_sequence(
    spec: GeneratorSpec,
    rng: np.random.Generator,
    times: np.ndarray,
    diameters: np.ndarray,
    label: int,
    sample_seed: int,
    growth: float,
    d0: float,
    backgrounds: Optional[np.ndarray],
) -> SyntheticSample:
    if (diameters >= spec.image_size).any():
        raise ValueError("nodule diameter exceeds the frame; shrink growth or horizon")
    if backgrounds is None:
        bg = _noise_background(spec, rng)
    else:
        bg = backgrounds[rng.integers(len(backgrounds))]
    center = _pick_center(spec, rng)
    frames = np.stack([
        render_nodule(bg, _jittered(center, spec, rng), d, spec) for d in diameters
    ])
    seq = ImageSequence(frames.astype(np.float32), times, label)
    return SyntheticSample(seq, sample_seed, growth, d0, diameters)


def plan_v1(spec: GeneratorSpec, rng: np.random.Generator, label: int):
    """Regular sampling: (times, diameters, growth, d0) before rendering."""
    g = sample_growth(label, spec, rng)
    d0 = _sample_init_diameter(spec, rng)
    times = spec.interval_months * np.arange(spec.frames, dtype=np.float64)
    return times, d0 + g * times, g, d0


def plan_v2(spec: GeneratorSpec, rng: np.random.Generator, label: int):
    """Irregular sampling with class-matched sizes.

    Target diameters come from a shared increasing schedule; times follow
    from the sample's growth rate via t = (d - d0) / g, so a malignant
    sample reaches the same sizes in a third of the time.
    """
    g = sample_growth(label, spec, rng)
    d0 = _sample_init_diameter(spec, rng)
    steps = np.maximum(
        rng.normal(spec.schedule_step_mean, spec.schedule_step_std, size=spec.frames - 1),
        0.1,
    )
    diameters = d0 + np.concatenate([[0.0], np.cumsum(steps)])
    times = (diameters - d0) / g
    if spec.frames > 1 and not np.all(np.diff(times) > 0):
        raise AssertionError("derived times must increase for positive steps and growth")
    return times, diameters, g, d0


def generate_v1(
    spec: GeneratorSpec,
    rng: np.random.Generator,
    label: Optional[int] = None,
    sample_seed: int = -1,
    backgrounds: Optional[np.ndarray] = None,
) -> SyntheticSample:
    if label is None:
        label = int(rng.integers(2))
    times, diameters, g, d0 = plan_v1(spec, rng, label)
    return _render_sequence(spec, rng, times, diameters, label, sample_seed, g, d0, backgrounds)


def generate_v2(
    spec: GeneratorSpec,
    rng: np.random.Generator,
    label: Optional[int] = None,
    sample_seed: int = -1,
    backgrounds: Optional[np.ndarray] = None,
) -> SyntheticSample:
    if label is None:
        label = int(rng.integers(2))
    times, diameters, g, d0 = plan_v2(spec, rng, label)
    return _render_sequence(spec, rng, times, diameters, label, sample_seed, g, d0, backgrounds)


def generate_samples(spec: GeneratorSpec, n: int, seed: int) -> List[SyntheticSample]:
    """n samples with exactly balanced labels (even indices benign)."""
    if n < 1:
        raise ValueError("need at least one sample")
    backgrounds = None
    if spec.background != "noise":
        backgrounds = load_external_backgrounds(spec.background)
        if backgrounds.shape[1:] != (spec.image_size, spec.image_size, spec.channels):
            raise ValueError(
                f"external backgrounds are {backgrounds.shape[1:]}, spec wants "
                f"{(spec.image_size, spec.image_size, spec.channels)}"
            )
    make = generate_v1 if spec.variant == "v1" else generate_v2
    out = []
    for i in range(n):
        rng = _sample_rng(seed, i)
        out.append(make(spec, rng, label=i % 2, sample_seed=i, backgrounds=backgrounds))
    return out


def generate_dataset(spec: GeneratorSpec, n: int, seed: int, path: Optional[str] = None) -> NoduleDataset:
    """Generate and (optionally) persist a dataset; deterministic per seed."""
    ds = NoduleDataset.from_samples(generate_samples(spec, n, seed))
    if path is not None:
        save_dataset(path, ds)
    return ds


# -- TDDS container -------------------------------------------------------------


def save_dataset(path: str, ds: NoduleDataset) -> None:
    """Write the binary dataset container (magic ``TDDS``), little-endian."""
    n = len(ds)
    t, h, w, c = ds.frames.shape[1:]
    try:
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<I", DATASET_VERSION))
            fh.write(struct.pack("<IBHHBB", n, t, h, w, c, 4))  # precision: 4-byte floats
            for i in range(n):
                fh.write(struct.pack("<B", int(ds.labels[i])))
                fh.write(ds.times[i].astype("<f4").tobytes())
                fh.write(np.ascontiguousarray(ds.frames[i], dtype="<f4").tobytes())
    except OSError as e:
        raise OSError(f"cannot write dataset to '{path}': {e}") from e


def load_dataset(path: str) -> NoduleDataset:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != DATASET_MAGIC:
                raise ValueError(
                    f"'{path}' is not a dataset: expected magic {DATASET_MAGIC!r}, got {magic!r}"
                )
            (version,) = struct.unpack("<I", fh.read(4))
            if version != DATASET_VERSION:
                raise ValueError(f"'{path}': unsupported dataset version {version}")
            n, t, h, w, c, prec = struct.unpack("<IBHHBB", fh.read(11))
            if prec != 4:
                raise ValueError(f"'{path}': unsupported value precision {prec}")
            labels = np.empty(n, dtype=np.uint8)
            times = np.empty((n, t), dtype=np.float32)
            frames = np.empty((n, t, h, w, c), dtype=np.float32)
            frame_len = t * h * w * c
            for i in range(n):
                rec = fh.read(1 + 4 * t + 4 * frame_len)
                if len(rec) != 1 + 4 * t + 4 * frame_len:
                    raise ValueError(f"'{path}': truncated at sample {i}")
                labels[i] = rec[0]
                times[i] = np.frombuffer(rec, dtype="<f4", count=t, offset=1)
                frames[i] = np.frombuffer(
                    rec, dtype="<f4", count=frame_len, offset=1 + 4 * t
                ).reshape(t, h, w, c)
    except OSError as e:
        raise OSError(f"cannot read dataset from '{path}': {e}") from e
    return NoduleDataset(frames, times, labels)


def load_external_backgrounds(path: str) -> np.ndarray:
    """Read a CIFAR-10 binary batch: records of 1 label byte + 3072 image bytes.

    Labels are discarded; images come back as (n, 32, 32, 3) floats in [0, 1].
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise OSError(f"cannot read backgrounds from '{path}': {e}") from e
    rec = 3073
    if len(raw) == 0 or len(raw) % rec:
        raise ValueError(
            f"'{path}': size {len(raw)} is not a multiple of {rec} "
            f"(1 label byte + 3072 image bytes per record)"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    images = arr[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float32) / 255.0


def interval_stats(ds: NoduleDataset) -> dict:
    """Mean inter-scan gap per class (months), for summaries and checks."""
    gaps = np.diff(ds.times.astype(np.float64), axis=1)
    out = {}
    for label, name in ((0, "benign"), (1, "malignant")):
        sel = gaps[ds.labels == label]
        out[name] = float(sel.mean()) if sel.size else float("nan")
    return out
