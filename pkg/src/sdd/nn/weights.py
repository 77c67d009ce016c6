"""Binary weight bundles (`.sddw`).

Little-endian layout (see docs/weights-format.md for the byte-exact
spec):

    magic   4 bytes          b"SDDW"
    version u32              currently 1
    fp_len  u16              config fingerprint length (may be 0)
    fp      fp_len bytes     UTF-8 fingerprint string
    count   u32              number of tensors
    per tensor:
        name_len u16
        name     UTF-8 bytes
        rank     u8
        dims     u32 * rank
        data     float32 * prod(dims)

Tensors are stored as float32; `WeightsBundle` keeps them as float32 and
hands out float64 views for the compute kernels on demand.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import FormatError

MAGIC = b"SDDW"
VERSION = 1


@dataclass
class WeightsBundle:
    tensors: dict[str, np.ndarray]
    fingerprint: str = ""
    version: int = VERSION
    _cache64: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name, t in self.tensors.items():
            if t.dtype != np.float32:
                self.tensors[name] = np.ascontiguousarray(t, dtype=np.float32)

    def get(self, name: str) -> np.ndarray:
        """Tensor as float64 (cached); raises FormatError if absent."""
        if name not in self.tensors:
            raise FormatError(f"bundle is missing tensor '{name}'")
        if name not in self._cache64:
            self._cache64[name] = self.tensors[name].astype(np.float64)
        return self._cache64[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def validate_against(self, expected: dict[str, tuple[int, ...]]) -> None:
        """Check the bundle provides exactly the demanded tensor set."""
        missing = sorted(set(expected) - set(self.tensors))
        extra = sorted(set(self.tensors) - set(expected))
        bad_shape = [
            f"{n}: have {tuple(self.tensors[n].shape)}, want {tuple(expected[n])}"
            for n in sorted(set(expected) & set(self.tensors))
            if tuple(self.tensors[n].shape) != tuple(expected[n])
        ]
        problems = []
        if missing:
            problems.append("missing: " + ", ".join(missing))
        if extra:
            problems.append("unexpected: " + ", ".join(extra))
        if bad_shape:
            problems.append("mis-shaped: " + "; ".join(bad_shape))
        if problems:
            raise FormatError("weight bundle validation failed: " + " | ".join(problems))


def config_fingerprint(payload: str) -> str:
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def save_weights(bundle: WeightsBundle) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", bundle.version)
    fp = bundle.fingerprint.encode("utf-8")
    out += struct.pack("<H", len(fp))
    out += fp
    out += struct.pack("<I", len(bundle.tensors))
    for name in sorted(bundle.tensors):
        t = bundle.tensors[name]
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    return bytes(out)


def load_weights(data: bytes) -> WeightsBundle:
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"truncated weight file while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic: not a weight bundle")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    (fp_len,) = struct.unpack("<H", take(2, "fingerprint length"))
    fingerprint = bytes(take(fp_len, "fingerprint")).decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"tensor {i} name length"))
        name = bytes(take(name_len, f"tensor {i} name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"'{name}' rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"'{name}' dims"))
        n_vals = int(np.prod(dims)) if rank else 1
        raw = take(4 * n_vals, f"'{name}' data")
        if name in tensors:
            raise FormatError(f"duplicate tensor '{name}'")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return WeightsBundle(tensors=tensors, fingerprint=fingerprint, version=version)


def write_weights_file(path, bundle: WeightsBundle) -> None:
    with open(path, "wb") as f:
        f.write(save_weights(bundle))


def read_weights_file(path) -> WeightsBundle:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise FormatError(f"cannot read weight file {path}: {e}") from e
    return load_weights(data)
