"""Checkpoint files: a named parameter list with shapes and raw float32 payloads.

Layout, all little-endian: magic "CKP1" u32, version u32, count u32, then per
parameter: name length u16 + utf-8 name, ndim u8, each dim u32, followed by
the float32 payload.
"""

from __future__ import annotations

import struct

import numpy as np

CKPT_MAGIC = 0x31504B43  # little-endian bytes b"CKP1"
CKPT_VERSION = 1


def save_checkpoint(path: str, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", CKPT_MAGIC, CKPT_VERSION, len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(value, dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, count = struct.unpack_from("<III", raw)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic:#x}")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(raw, dtype="<f4", count=n,
                                     offset=off).reshape(shape).copy()
        off += 4 * n
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return params
