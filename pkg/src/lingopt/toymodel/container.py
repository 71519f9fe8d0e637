"""Binary container shared by checkpoints and inline image payloads.

Layout: 16-byte magic, little-endian uint64 metadata length, UTF-8
``key=value`` lines, then every array as little-endian float64 in the order
given. Shapes live in the metadata; this module does not interpret them.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CheckpointError

MAGIC_LEN = 16


def pack(magic: bytes, meta: dict[str, str], arrays: list[np.ndarray]) -> bytes:
    if len(magic) != MAGIC_LEN:
        raise ValueError(f"magic must be {MAGIC_LEN} bytes")
    lines = []
    for key, value in meta.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"metadata entry {key!r} cannot be encoded")
        lines.append(f"{key}={value}")
    blob = "\n".join(lines).encode("utf-8")
    parts = [magic, struct.pack("<Q", len(blob)), blob]
    for a in arrays:
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def unpack(data: bytes, magic: bytes) -> tuple[dict[str, str], memoryview]:
    """Return the metadata and a view over the raw float64 payload."""
    if len(data) < MAGIC_LEN + 8 or data[:MAGIC_LEN] != magic:
        raise CheckpointError("bad magic header")
    (n,) = struct.unpack_from("<Q", data, MAGIC_LEN)
    start = MAGIC_LEN + 8
    if start + n > len(data):
        raise CheckpointError("truncated metadata block")
    meta = {}
    text = bytes(data[start:start + n]).decode("utf-8")
    for line in text.split("\n") if text else []:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed metadata line {line!r}")
        meta[key] = value
    return meta, memoryview(data)[start + n:]


def read_arrays(payload: memoryview, shapes: list[tuple[int, int]]) -> list[np.ndarray]:
    need = sum(r * c for r, c in shapes) * 8
    if len(payload) != need:
        raise CheckpointError(f"payload is {len(payload)} bytes, expected {need}")
    out, offset = [], 0
    for r, c in shapes:
        a = np.frombuffer(payload, dtype="<f8", count=r * c, offset=offset)
        out.append(a.astype(np.float64).reshape(r, c))
        offset += r * c * 8
    return out
