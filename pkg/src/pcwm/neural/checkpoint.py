"""Binary checkpoint format.

Layout: ``b"PCWMCKPT"``, u32 version, u32 length of a UTF-8 JSON header, the
header, then every parameter as little-endian float32 in header order.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointVersionError, ConfigMismatch, MalformedCheckpoint
from .model import DecoderConfig, build_decoder, Decoder

MAGIC = b"PCWMCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    config: DecoderConfig
    params: "OrderedDict[str, np.ndarray]"  # float32 arrays
    best_val_acc: float = 0.0
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Decoder, **kwargs) -> "Checkpoint":
        params = OrderedDict(
            (k, v.detach().cpu().numpy().astype(np.float32).copy())
            for k, v in model.state_dict().items())
        return cls(model.config, params, **kwargs)

    def to_model(self, dtype=torch.float32) -> Decoder:
        model = build_decoder(self.config, dtype=dtype)
        expected = model.state_dict()
        if list(expected) != list(self.params) or any(
                tuple(expected[k].shape) != self.params[k].shape for k in expected):
            raise ConfigMismatch("checkpoint parameters do not match its decoder config")
        model.load_state_dict(OrderedDict(
            (k, torch.from_numpy(v.copy()).to(dtype)) for k, v in self.params.items()))
        return model


def encode(ckpt: Checkpoint) -> bytes:
    header = {
        "config": ckpt.config.to_dict(),
        "best_val_acc": float(ckpt.best_val_acc),
        "epoch": int(ckpt.epoch),
        "params": [[k, list(v.shape)] for k, v in ckpt.params.items()],
        "meta": ckpt.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in ckpt.params.values())
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + payload


def decode(raw: bytes) -> Checkpoint:
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise MalformedCheckpoint("missing PCWMCKPT magic")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    if len(raw) < 16 + hlen:
        raise MalformedCheckpoint("truncated checkpoint header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        config = DecoderConfig.from_dict(header["config"])
        shapes = [(str(k), tuple(int(d) for d in s)) for k, s in header["params"]]
        best, epoch, meta = float(header["best_val_acc"]), int(header["epoch"]), header.get("meta", {})
    except ConfigMismatch:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedCheckpoint(f"bad checkpoint header: {exc}") from None
    offset = 16 + hlen
    params = OrderedDict()
    for name, shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * count
        if end > len(raw):
            raise MalformedCheckpoint("truncated checkpoint payload")
        params[name] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
        offset = end
    if offset != len(raw):
        raise MalformedCheckpoint(f"{len(raw) - offset} trailing bytes after payload")
    ckpt = Checkpoint(config, params, best, epoch, meta)
    expected = build_decoder(config).state_dict()
    if list(expected) != list(params) or any(tuple(expected[k].shape) != params[k].shape for k in expected):
        raise ConfigMismatch("checkpoint parameter shapes do not match its decoder config")
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode(Path(path).read_bytes())
