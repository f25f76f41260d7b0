"""Binary checkpoint container.

Layout (little-endian)::

    "IIDC" | u32 version
    u32 meta_len | utf-8 "key = value" lines
    u32 n_blobs | blobs
    u32 has_optimizer [| u64 step | u32 n_blobs | blobs]

Each blob is ``u32 name_len | name | u32 ndim | u32 dims... | f32 data``.
Optimizer moments are stored as blobs named ``m/<param>`` and ``v/<param>``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"IIDC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_blobs(blobs: dict) -> bytes:
    parts = [struct.pack("<I", len(blobs))]
    for name in sorted(blobs):
        arr = np.ascontiguousarray(blobs[name], dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def bytes(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def blobs(self):
        (count,) = self.take("<I")
        out = {}
        for _ in range(count):
            (nlen,) = self.take("<I")
            name = self.bytes(nlen).decode()
            (ndim,) = self.take("<I")
            shape = self.take(f"<{ndim}I")
            n = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(self.bytes(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        return out


def save_checkpoint(path, params: dict, meta: dict | None = None, optimizer: AdamState | None = None):
    meta_text = "".join(f"{k} = {v}\n" for k, v in (meta or {}).items()).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_text)), meta_text,
             _pack_blobs(params)]
    if optimizer is None or not optimizer.m:
        parts.append(struct.pack("<I", 0))
    else:
        moments = {f"m/{k}": v for k, v in optimizer.m.items()}
        moments.update({f"v/{k}": v for k, v in optimizer.v.items()})
        parts.append(struct.pack("<IQ", 1, optimizer.step))
        parts.append(_pack_blobs(moments))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path):
    """Returns ``(params, meta, optimizer_state_or_None)``."""
    r = _Reader(Path(path).read_bytes())
    (magic,) = r.take("<4s")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    (version,) = r.take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (mlen,) = r.take("<I")
    meta = {}
    for line in r.bytes(mlen).decode().splitlines():
        if line.strip():
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    params = r.blobs()
    (has_opt,) = r.take("<I")
    state = None
    if has_opt:
        (step,) = r.take("<Q")
        moments = r.blobs()
        state = AdamState(step=step)
        for name, arr in moments.items():
            kind, key = name.split("/", 1)
            (state.m if kind == "m" else state.v)[key] = arr
    return params, meta, state
