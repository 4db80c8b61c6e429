"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"VFLC" | u32 version | u32 len + utf-8 fingerprint | u32 epoch
    u32 tensor count | tensor*
    u64 len | optimizer section: f64 momentum, f64 weight decay, u32 count, tensor*
    u64 len | rng section: utf-8 JSON of the bit-generator state
    u64 len | metadata section: utf-8 JSON (model config and run info)

    tensor := u32 name len | utf-8 name | u32 rank | u64 dims[rank] | u32 dtype code | raw values
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VFLC"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(ValueError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    fingerprint: str
    epoch: int = 0
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _write_tensors(out: io.BytesIO, tensors: dict[str, np.ndarray]) -> None:
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name}")
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(struct.pack("<I", code))
        out.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    fp = ckpt.fingerprint.encode("utf-8")
    out.write(struct.pack("<I", len(fp)))
    out.write(fp)
    out.write(struct.pack("<I", ckpt.epoch))
    _write_tensors(out, ckpt.params)
    opt = io.BytesIO()
    opt.write(struct.pack("<dd", ckpt.momentum, ckpt.weight_decay))
    _write_tensors(opt, ckpt.buffers)
    out.write(_section(opt.getvalue()))
    out.write(_section(_json_bytes(ckpt.rng_state)))
    out.write(_section(_json_bytes(ckpt.meta)))
    return out.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes at offset {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            try:
                name = self.take(n).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointError("corrupt tensor name") from exc
            (rank,) = self.unpack("<I")
            if rank > 16:
                raise CheckpointError(f"corrupt tensor rank {rank} for {name}")
            dims = self.unpack(f"<{rank}Q")
            (code,) = self.unpack("<I")
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code} for {name}")
            dt = _DTYPES[code]
            count_el = int(np.prod(dims, dtype=np.uint64)) if rank else 1
            raw = self.take(count_el * dt.itemsize)
            out[name] = np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        return out


def loads(blob: bytes) -> Checkpoint:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    fingerprint = r.take(n).decode("utf-8", errors="strict")
    (epoch,) = r.unpack("<I")
    params = r.tensors()
    (opt_len,) = r.unpack("<Q")
    opt = _Reader(r.take(opt_len))
    momentum, weight_decay = opt.unpack("<dd")
    buffers = opt.tensors()
    if opt.pos != len(opt.blob):
        raise CheckpointError("corrupt optimizer section")
    try:
        (rng_len,) = r.unpack("<Q")
        rng_state = json.loads(r.take(rng_len).decode("utf-8"))
        (meta_len,) = r.unpack("<Q")
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint section: {exc}") from exc
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(params, fingerprint, epoch, momentum, weight_decay, buffers, rng_state, meta)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blob = dumps(ckpt)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path, expected_fingerprint: str | None = None, force: bool = False) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = loads(blob)
    if expected_fingerprint is not None and ckpt.fingerprint != expected_fingerprint and not force:
        raise FingerprintMismatch(
            f"checkpoint fingerprint {ckpt.fingerprint} does not match config {expected_fingerprint}")
    return ckpt
