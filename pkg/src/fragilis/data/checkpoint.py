"""Portable binary checkpoints for networks and tensor bundles.

Layout (all integers little endian)::

    b"FRGL"                 magic
    u32 version             currently 1
    u32 n                   descriptor length in bytes
    u8[n]                   UTF-8 JSON descriptor
    f64[...]                tensors, row-major, in descriptor order
    u32 crc32               over every preceding byte

The descriptor is ``{"kind": ..., "tensors": [{"name", "shape"}], "meta": {...}}``;
network checkpoints add ``"spec"`` and ``"init_seed"`` and store tensors as
``W0, b0, W1, b1, ...``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..nn import MlpParams, MlpSpec

MAGIC = b"FRGL"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def encode_tensors(tensors: dict[str, np.ndarray], kind: str = "tensors", **descriptor) -> bytes:
    names = list(tensors)
    arrays = [np.asarray(tensors[k], dtype=np.float64) for k in names]
    desc = dict(descriptor)
    desc["kind"] = kind
    desc["tensors"] = [{"name": k, "shape": list(a.shape)} for k, a in zip(names, arrays)]
    head = json.dumps(desc, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    payload = MAGIC + struct.pack("<II", VERSION, len(head)) + head + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode_tensors(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise CheckpointMagicError("not a checkpoint: missing FRGL magic")
    version, n = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointChecksumError("checksum mismatch: file is corrupted")
    if 12 + n > len(buf) - 4:
        raise CheckpointShapeError("descriptor runs past end of file")
    desc = json.loads(buf[12:12 + n].decode("utf-8"))
    body = memoryview(buf)[12 + n:-4]
    tensors, offset = {}, 0
    for entry in desc["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + size > len(body):
            raise CheckpointShapeError(f"tensor {entry['name']!r} with shape {shape} exceeds the payload")
        tensors[entry["name"]] = np.frombuffer(body[offset:offset + size], dtype="<f8").reshape(shape).astype(np.float64)
        offset += size
    if offset != len(body):
        raise CheckpointShapeError(f"{len(body) - offset} payload bytes not covered by the descriptor")
    return tensors, desc


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_tensors(tensors, meta=meta or {}))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    tensors, desc = decode_tensors(Path(path).read_bytes())
    return tensors, desc.get("meta", {})


def encode_checkpoint(params: MlpParams, meta: dict | None = None) -> bytes:
    tensors = {}
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        tensors[f"W{k}"] = w
        tensors[f"b{k}"] = b
    return encode_tensors(tensors, kind="mlp", spec=params.spec.to_dict(),
                          init_seed=params.init_seed, meta=meta or {})


def decode_checkpoint(buf: bytes) -> MlpParams:
    tensors, desc = decode_tensors(buf)
    if desc.get("kind") != "mlp":
        raise CheckpointError(f"expected a network checkpoint, found kind {desc.get('kind')!r}")
    spec = MlpSpec.from_dict(desc["spec"])
    sizes = spec.layer_sizes
    ws, bs = [], []
    for k in range(len(sizes) - 1):
        w, b = tensors.get(f"W{k}"), tensors.get(f"b{k}")
        if w is None or b is None or w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
            raise CheckpointShapeError(f"layer {k} tensors do not match spec sizes {sizes[k]}->{sizes[k + 1]}")
        ws.append(w)
        bs.append(b)
    if len(tensors) != 2 * len(ws):
        raise CheckpointShapeError("checkpoint holds tensors beyond the MlpSpec layers")
    return MlpParams(spec, tuple(ws), tuple(bs), desc.get("init_seed"))


def save_checkpoint(params: MlpParams, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, meta))


def load_checkpoint(path) -> MlpParams:
    return decode_checkpoint(Path(path).read_bytes())
