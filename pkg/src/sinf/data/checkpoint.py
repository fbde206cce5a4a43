"""Versioned checkpoint container.

Layout::

    8 bytes   magic b"SINFCKPT"
    4 bytes   format version, little-endian uint32
    8 bytes   header length L, little-endian uint64
    L bytes   UTF-8 JSON header
    rest      payload: little-endian float64 arrays, concatenated

The header holds ``arrays`` (name -> {shape, offset, count} with offsets in
float64 elements), the optimizer scalars, the training step and the run
config. Array names are ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import AdamWState

MAGIC = b"SINFCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: AdamWState | None = None
    step: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _arrays(ck: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{k}": v for k, v in ck.params.items()}
    if ck.optimizer is not None:
        out.update({f"adam_m/{k}": v for k, v in ck.optimizer.m.items()})
        out.update({f"adam_v/{k}": v for k, v in ck.optimizer.v.items()})
    return out


def encode_checkpoint(ck: Checkpoint) -> bytes:
    arrays = _arrays(ck)
    index, chunks, offset = {}, [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
        index[name] = {"shape": list(a.shape), "offset": offset, "count": int(a.size)}
        chunks.append(a.astype("<f8").tobytes())
        offset += a.size
    opt = None
    if ck.optimizer is not None:
        o = ck.optimizer
        opt = {"lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps,
               "weight_decay": o.weight_decay, "step": o.step}
    header = {"arrays": index, "optimizer": opt, "step": int(ck.step), "config": ck.config,
              "extra": ck.extra, "payload_floats": offset}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(hb)) + hb + b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", data[8:12])
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (this build reads version {VERSION})")
    (hlen,) = struct.unpack("<Q", data[12:20])
    if 20 + hlen > len(data):
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    payload = data[20 + hlen:]
    n = header["payload_floats"]
    if len(payload) != 8 * n:
        raise CheckpointError(f"payload length {len(payload)} bytes does not match the header ({8 * n} bytes)")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params, m, v = {}, {}, {}
    for name, info in header["arrays"].items():
        off, cnt = info["offset"], info["count"]
        if off + cnt > n:
            raise CheckpointError(f"array {name} exceeds the payload")
        arr = flat[off:off + cnt].reshape(info["shape"]).copy()
        kind, _, key = name.partition("/")
        {"param": params, "adam_m": m, "adam_v": v}[kind][key] = arr
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = AdamWState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"],
                         weight_decay=o["weight_decay"], step=o["step"], m=m, v=v)
    return Checkpoint(params, opt, header["step"], header["config"], header.get("extra", {}))


def save_checkpoint(ck: Checkpoint, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ck))
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
