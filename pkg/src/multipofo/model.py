"""Shared MLP encoder, mirrored decoder and linear peak-load head.

Checkpoint layout (all integers and floats little-endian)::

    magic      b"MPOFOCKP"
    version    uint16
    hlen       uint32, length of the JSON header
    header     UTF-8 JSON (config echo, layer names, shapes, frozen flags)
    payload    float64 parameters, layer by layer, weights then bias
    checksum   CRC-32 of header + payload, uint32
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Scaler
from .errors import CheckpointError, ShapeError
from .multiscale import ScaleSpec, layout
from .nn_core import IDENTITY, RELU, DenseLayer, forward_stack, init_dense

MAGIC = b"MPOFOCKP"
FORMAT_VERSION = 1


@dataclass
class MultipofoModel:
    encoder: list
    decoder: list
    heads: list
    scales: list
    I: int
    L_max: int
    frozen_encoder: bool = False
    scalers: dict = field(default_factory=dict)
    encoder_hash: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].out_dim

    @property
    def horizon(self) -> int:
        return self.heads[0].out_dim

    @property
    def input_dim(self) -> int:
        return self.L_max + self.I

    @property
    def per_scale_heads(self) -> bool:
        return len(self.heads) > 1

    @property
    def layers(self) -> list:
        return [*self.encoder, *self.decoder, *self.heads]

    def scale(self, name: str) -> ScaleSpec:
        for s in self.scales:
            if s.name == name:
                return s
        available = ", ".join(s.name for s in self.scales)
        raise KeyError(f"unknown scale {name!r}; available scales: {available}")


def build_model(
    scales,
    rng: np.random.Generator,
    hidden=(256, 128),
    latent_dim: int = 64,
    horizon: int = 1,
    I: int | None = None,
    per_scale_heads: bool = False,
) -> MultipofoModel:
    enabled, L_max, width = layout(scales, I)
    enc_dims = [L_max + width, *hidden, latent_dim]
    encoder = [
        init_dense(enc_dims[k], enc_dims[k + 1], RELU, rng, f"encoder.{k}") for k in range(len(enc_dims) - 1)
    ]
    dec_dims = [latent_dim, *reversed(hidden), L_max]
    n_dec = len(dec_dims) - 1
    decoder = [
        init_dense(dec_dims[k], dec_dims[k + 1], RELU if k < n_dec - 1 else IDENTITY, rng, f"decoder.{k}")
        for k in range(n_dec)
    ]
    n_heads = width if per_scale_heads else 1
    heads = [init_dense(latent_dim, horizon, IDENTITY, rng, f"head.{k}") for k in range(n_heads)]
    return MultipofoModel(encoder, decoder, heads, list(enabled), width, L_max)


def _check(x, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != dim:
        raise ShapeError(f"{what}: expected last dimension {dim}, got shape {x.shape}")
    return x


def encode(model: MultipofoModel, embedded, tape=None) -> np.ndarray:
    return forward_stack(model.encoder, _check(embedded, model.input_dim, "encode"), tape)


def reconstruct(model: MultipofoModel, z, tape=None) -> np.ndarray:
    return forward_stack(model.decoder, _check(z, model.latent_dim, "reconstruct"), tape)


def predict(model: MultipofoModel, z, scale_index=None) -> np.ndarray:
    """Affine head ``W z + b``; with per-scale heads ``scale_index`` picks the head per row."""
    z = _check(z, model.latent_dim, "predict")
    if not model.per_scale_heads:
        return forward_stack(model.heads[:1], z)
    if scale_index is None:
        raise ValueError("model has per-scale heads; pass scale_index")
    idx = np.broadcast_to(np.asarray(scale_index), z.shape[:-1])
    out = np.empty(z.shape[:-1] + (model.horizon,))
    for k, head in enumerate(model.heads):
        rows = idx == k
        if np.any(rows):
            out[rows] = forward_stack([head], z[rows])
    return out


def params_hash(layers) -> str:
    h = hashlib.sha256()
    for layer in layers:
        h.update(layer.name.encode())
        h.update(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return h.hexdigest()


def freeze_encoder(model: MultipofoModel) -> MultipofoModel:
    """Freeze the encoder and the decoder; only the head trains afterwards."""
    for layer in (*model.encoder, *model.decoder):
        layer.frozen = True
    model.frozen_encoder = True
    model.encoder_hash = params_hash(model.encoder)
    return model


def _header(model: MultipofoModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "I": model.I,
        "L_max": model.L_max,
        "frozen_encoder": model.frozen_encoder,
        "encoder_hash": model.encoder_hash,
        "scales": [s.to_dict() for s in model.scales],
        "scalers": {cid: model.scalers[cid].to_dict() for cid in sorted(model.scalers)},
        "meta": model.meta,
        "layers": {
            part: [
                {
                    "name": layer.name,
                    "shape": list(layer.weights.shape),
                    "activation": layer.activation,
                    "frozen": layer.frozen,
                }
                for layer in layers
            ]
            for part, layers in (("encoder", model.encoder), ("decoder", model.decoder), ("heads", model.heads))
        },
    }


def to_bytes(model: MultipofoModel) -> bytes:
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for layer in model.layers
        for arr in (layer.weights, layer.bias)
    )
    body = header + payload
    return (
        MAGIC
        + struct.pack("<HI", FORMAT_VERSION, len(header))
        + body
        + struct.pack("<I", zlib.crc32(body))
    )


def from_bytes(blob: bytes) -> MultipofoModel:
    prefix = len(MAGIC) + 6
    if len(blob) < prefix + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a multipofo checkpoint (bad magic or truncated header)")
    version, hlen = struct.unpack("<HI", blob[len(MAGIC) : prefix])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    body, tail = blob[prefix:-4], blob[-4:]
    if len(body) < hlen:
        raise CheckpointError("checkpoint is truncated or corrupt (header incomplete)")
    (crc,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint is truncated or corrupt (checksum mismatch)")
    try:
        header = json.loads(body[:hlen].decode())
    except ValueError as exc:
        raise CheckpointError(f"checkpoint header is corrupt: {exc}") from None

    payload = body[hlen:]
    offset = 0
    parts = {}
    for part in ("encoder", "decoder", "heads"):
        layers = []
        for spec in header["layers"][part]:
            rows, cols = spec["shape"]
            n = rows * cols + rows
            if offset + 8 * n > len(payload):
                raise CheckpointError("checkpoint is truncated or corrupt (payload too short)")
            flat = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).astype(np.float64)
            offset += 8 * n
            layers.append(
                DenseLayer(
                    flat[: rows * cols].reshape(rows, cols).copy(),
                    flat[rows * cols :].copy(),
                    spec["activation"],
                    spec["frozen"],
                    spec["name"],
                )
            )
        parts[part] = layers
    if offset != len(payload):
        raise CheckpointError("checkpoint payload has trailing bytes")
    return MultipofoModel(
        parts["encoder"],
        parts["decoder"],
        parts["heads"],
        [ScaleSpec(**s) for s in header["scales"]],
        header["I"],
        header["L_max"],
        header["frozen_encoder"],
        {cid: Scaler.from_dict(d) for cid, d in header["scalers"].items()},
        header["encoder_hash"],
        header["meta"],
    )


def save(model: MultipofoModel, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load(path) -> MultipofoModel:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(blob)
