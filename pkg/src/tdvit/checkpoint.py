"""Binary checkpoint container (magic ``TDVT``), bit-exact round trips.

Layout, all little-endian:
    magic       4 bytes  b"TDVT"
    version     u32
    config_len  u32, then UTF-8 JSON of the model config
    n_tensors   u32
    per tensor: name_len u32, name bytes, rank u32, extents u32[rank],
                raw values in the config's declared precision
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from . import attention as attn
from .model import LayerParams, ModelConfig, ModelParams
from .tensor import Tensor

MAGIC = b"TDVT"
VERSION = 1


def _dtype_for(config: ModelConfig):
    return np.dtype("<f4") if config.precision == "single" else np.dtype("<f8")


def save_checkpoint(path: str, params: ModelParams, config: ModelConfig) -> None:
    named = params.named()
    dt = _dtype_for(config)
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(named)))
        for name, tensor in named.items():
            nb = name.encode("utf-8")
            arr = tensor.data.astype(dt)  # contiguous copy, keeps 0-d shapes
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, path: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"checkpoint '{path}' is truncated")
    return buf


def load_named(path: str) -> Tuple[Dict[str, np.ndarray], ModelConfig]:
    """Raw named arrays plus config, without assembling ModelParams."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(
                f"'{path}' is not a checkpoint: expected magic {MAGIC!r}, got {magic!r}"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != VERSION:
            raise ValueError(f"'{path}': unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read_exact(fh, 4, path))
        config = ModelConfig.from_dict(json.loads(_read_exact(fh, clen, path)))
        dt = _dtype_for(config)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
        named: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, path))
            name = _read_exact(fh, nlen, path).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, path))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path))
            raw = _read_exact(fh, int(np.prod(shape, dtype=np.int64)) * dt.itemsize, path)
            named[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return named, config


def load_checkpoint(path: str) -> Tuple[ModelParams, ModelConfig]:
    """Rebuild ModelParams from a checkpoint; missing heads stay None."""
    named, config = load_named(path)
    dt = config.np_dtype

    def take(name):
        if name not in named:
            raise ValueError(f"'{path}': checkpoint missing tensor '{name}'")
        return Tensor(named.pop(name).astype(dt), requires_grad=True)

    def take_layers(prefix, depth):
        layers = []
        for i in range(depth):
            heads = []
            tems = [] if config.mode == "ta" else None
            for h in range(config.heads):
                heads.append(
                    attn.HeadWeights(
                        take(f"{prefix}.{i}.attn.head{h}.wq"),
                        take(f"{prefix}.{i}.attn.head{h}.wk"),
                        take(f"{prefix}.{i}.attn.head{h}.wv"),
                    )
                )
                if tems is not None:
                    tems.append(
                        attn.TemParams(
                            take(f"{prefix}.{i}.attn.head{h}.tem_ua"),
                            take(f"{prefix}.{i}.attn.head{h}.tem_uc"),
                        )
                    )
            layers.append(
                LayerParams(
                    take(f"{prefix}.{i}.norm1.scale"),
                    take(f"{prefix}.{i}.norm1.offset"),
                    attn.MhaLayer(heads, take(f"{prefix}.{i}.attn.proj"), tems),
                    take(f"{prefix}.{i}.norm2.scale"),
                    take(f"{prefix}.{i}.norm2.offset"),
                    take(f"{prefix}.{i}.mlp.w1"),
                    take(f"{prefix}.{i}.mlp.w2"),
                )
            )
        return layers

    patch_embed = take("patch_embed")
    cls_token = take("cls_token")
    encoder = take_layers("encoder", config.depth)
    final_scale = take("final_norm.scale")
    final_offset = take("final_norm.offset")
    classifier = take("classifier") if "classifier" in named else None
    has_mae = "mask_token" in named
    mask_token = take("mask_token") if has_mae else None
    decoder = take_layers("decoder", config.decoder_depth) if has_mae else None
    dns = take("decoder_norm.scale") if has_mae else None
    dno = take("decoder_norm.offset") if has_mae else None
    dpred = take("decoder_pred") if has_mae else None
    return (
        ModelParams(
            patch_embed, cls_token, encoder, final_scale, final_offset,
            classifier, mask_token, decoder, dns, dno, dpred,
        ),
        config,
    )
