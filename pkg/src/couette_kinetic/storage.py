"""Binary formats: collision-kernel cache and field dumps.

Both formats start with a fixed 64-byte little-endian header followed by
row-major float64 data.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

KERNEL_MAGIC = b"CKKERNEL"
FIELD_MAGIC = b"CKFIELD1"
FORMAT_VERSION = 1
CACHE_ENV = "COUETTE_KINETIC_CACHE"

# magic, version, n, sha256 digest, b_amp, n_omega
_KERNEL_HEAD = struct.Struct("<8sII32sdi")
# magic, version, grid hash (16 hex chars), representation tag, ndim, dims[4]
_FIELD_HEAD = struct.Struct("<8sI16s8sI4I")
HEADER_BYTES = 64


class CacheMismatch(RuntimeError):
    pass


def default_cache_dir() -> Path | None:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def cache_key(parts: dict) -> bytes:
    text = ";".join(f"{k}={parts[k]!r}" for k in sorted(parts))
    return hashlib.sha256(text.encode()).digest()


def write_kernel_cache(path: Path, key: bytes, b_amp: float, n_omega: int,
                       matrix: np.ndarray, meta: np.ndarray) -> None:
    n = matrix.shape[0]
    head = _KERNEL_HEAD.pack(KERNEL_MAGIC, FORMAT_VERSION, n, key, b_amp, n_omega)
    head = head.ljust(HEADER_BYTES, b"\0")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(meta, dtype="<f8").tobytes())
        # write in row blocks to avoid a second full-size buffer
        for start in range(0, n, 1024):
            fh.write(np.ascontiguousarray(matrix[start:start + 1024], dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_kernel_cache(path: Path, key: bytes, n_meta: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_BYTES)
        magic, version, n, stored_key, _b_amp, _n_omega = _KERNEL_HEAD.unpack(head[:_KERNEL_HEAD.size])
        if magic != KERNEL_MAGIC or version != FORMAT_VERSION:
            raise CacheMismatch(f"{path}: not a kernel cache of version {FORMAT_VERSION}")
        if stored_key != key:
            raise CacheMismatch(f"{path}: configuration hash mismatch")
        meta = np.frombuffer(fh.read(8 * n_meta), dtype="<f8").copy()
        matrix = np.fromfile(fh, dtype="<f8", count=n * n)
    if matrix.size != n * n:
        raise CacheMismatch(f"{path}: truncated matrix")
    return matrix.reshape(n, n), meta


def write_field(path: Path, values: np.ndarray, grid_hash: str, representation: str) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim > 4:
        raise ValueError("field dumps support at most 4 dimensions")
    dims = list(values.shape) + [0] * (4 - values.ndim)
    tag = representation[:8].encode().ljust(8, b"\0")
    head = _FIELD_HEAD.pack(FIELD_MAGIC, FORMAT_VERSION, grid_hash.encode()[:16].ljust(16, b"\0"),
                            tag, values.ndim, *dims)
    with open(path, "wb") as fh:
        fh.write(head.ljust(HEADER_BYTES, b"\0"))
        fh.write(values.tobytes())


def read_field(path: Path) -> tuple[np.ndarray, str, str]:
    """Return (values, grid_hash, representation tag prefix)."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_BYTES)
        magic, version, ghash, tag, ndim, *dims = _FIELD_HEAD.unpack(head[:_FIELD_HEAD.size])
        if magic != FIELD_MAGIC or version != FORMAT_VERSION:
            raise ValueError(f"{path}: not a field dump")
        shape = tuple(dims[:ndim])
        values = np.fromfile(fh, dtype="<f8", count=int(np.prod(shape)))
    return values.reshape(shape), ghash.rstrip(b"\0").decode(), tag.rstrip(b"\0").decode()
