"""Eigenvalue cache: content-addressed binary files of sorted spectra.

File layout: magic bytes "SSFLAB01", unsigned 64-bit little-endian count,
then count IEEE-754 little-endian doubles ascending. Eigenvectors are never
persisted; vector-requiring kernels bypass the cache entirely.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "CACHE_DIR_ENV",
    "cache_key",
    "write_eigenvalues",
    "read_eigenvalues",
    "SpectrumCache",
]

MAGIC = b"SSFLAB01"
CACHE_DIR_ENV = "SSF_LAB_CACHE_DIR"

log = logging.getLogger(__name__)


def cache_key(model, sample) -> str:
    """64-bit content hash of (canonical model spec, sample provenance)."""
    blob = json.dumps(
        {
            "model": model.canonical_dict(),
            "master_seed": int(sample.master_seed),
            "index": int(sample.index),
        },
        sort_keys=True,
    ).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


def write_eigenvalues(path, values: np.ndarray) -> None:
    """Atomic write (temp file + rename) of the SSFLAB01 format."""
    values = np.ascontiguousarray(values, dtype="<f8")
    payload = MAGIC + struct.pack("<Q", len(values)) + values.tobytes()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_eigenvalues(path) -> np.ndarray:
    """Read an SSFLAB01 file; raises ValueError on bad magic or length."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"bad cache file magic in {path}")
    (count,) = struct.unpack_from("<Q", data, len(MAGIC))
    expected = len(MAGIC) + 8 + 8 * count
    if len(data) != expected:
        raise ValueError(f"truncated cache file {path}: {len(data)} != {expected}")
    return np.frombuffer(data, dtype="<f8", offset=len(MAGIC) + 8).astype(float)


class SpectrumCache:
    """Directory-backed eigenvalue cache; safe for concurrent readers and a
    writer-via-rename."""

    def __init__(self, directory=None):
        if directory is None:
            directory = os.environ.get(CACHE_DIR_ENV, Path.home() / ".cache" / "ssflab")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.eig"

    def get_or_compute(self, model, sample, producer) -> np.ndarray:
        key = cache_key(model, sample)
        path = self._path(key)
        if path.exists():
            try:
                return read_eigenvalues(path)
            except ValueError as exc:
                log.warning("corrupt cache file removed, recomputing: %s", exc)
                path.unlink(missing_ok=True)
        values = np.asarray(producer(), dtype=float)
        write_eigenvalues(path, values)
        return values

    def stats(self) -> dict:
        files = list(self.directory.glob("*.eig"))
        return {
            "directory": str(self.directory),
            "entries": len(files),
            "bytes": sum(f.stat().st_size for f in files),
        }

    def clear(self) -> int:
        files = list(self.directory.glob("*.eig"))
        for f in files:
            f.unlink(missing_ok=True)
        return len(files)
