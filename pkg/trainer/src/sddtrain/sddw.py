"""Writer/reader for the engine's `.sddw` weight bundle format.

Implemented independently of the engine package: the byte layout is the
contract (magic "SDDW", u32 version, u16 fingerprint length + UTF-8
fingerprint, u32 tensor count, then per tensor u16 name length + name,
u8 rank, u32 dims, little-endian float32 payload; tensors sorted by
name).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SDDW"
VERSION = 1


def save(tensors: dict[str, np.ndarray], fingerprint: str = "") -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    fp = fingerprint.encode("utf-8")
    out += struct.pack("<H", len(fp))
    out += fp
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        t = np.ascontiguousarray(tensors[name], dtype="<f4")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.tobytes()
    return bytes(out)


def load(data: bytes) -> tuple[dict[str, np.ndarray], str]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("truncated weight file")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ValueError("bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (fp_len,) = struct.unpack("<H", take(2))
    fingerprint = take(fp_len).decode("utf-8")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n_vals = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * n_vals), dtype="<f4").reshape(dims).copy()
    return tensors, fingerprint


def write_file(path, tensors: dict[str, np.ndarray], fingerprint: str = "") -> None:
    with open(path, "wb") as f:
        f.write(save(tensors, fingerprint))


def read_file(path) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as f:
        return load(f.read())
