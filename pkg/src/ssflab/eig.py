"""Symmetric eigendecomposition and spectral functionals built on it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import SymmetricOperator

__all__ = [
    "EigenSolveError",
    "Spectrum",
    "EnergyInterval",
    "eigen_decompose",
    "counting",
    "count_in",
    "weighted_projector_trace",
    "weighted_heat_trace",
]


class EigenSolveError(RuntimeError):
    """Eigensolver failed to converge; carries the matrix tag."""


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues with optional orthonormal eigenvector columns."""

    values: np.ndarray
    vectors: np.ndarray | None = None
    tag: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if np.any(np.diff(v) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        if self.vectors is not None:
            w = np.asarray(self.vectors, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "vectors", w)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def deg_tol(self) -> float:
        diam = float(self.values[-1] - self.values[0]) if self.n else 0.0
        return 1e-9 * diam


@dataclass(frozen=True)
class EnergyInterval:
    """Half-open energy interval [a, b)."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"invalid interval [{self.a}, {self.b})")

    @property
    def width(self) -> float:
        return self.b - self.a


def eigen_decompose(op: SymmetricOperator, need_vectors: bool = False) -> Spectrum:
    """Full spectrum (ascending, with multiplicity) of a symmetric operator."""
    mat = op.to_dense()
    try:
        if need_vectors:
            vals, vecs = np.linalg.eigh(mat)
            return Spectrum(values=vals, vectors=vecs, tag=op.tag)
        vals = np.linalg.eigvalsh(mat)
        return Spectrum(values=vals, tag=op.tag)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise EigenSolveError(f"eigensolver failed on operator {op.tag!r}: {exc}") from exc


def counting(spec: Spectrum, E: float) -> int:
    """N(E) = #{eigenvalues <= E}, right-continuous and nondecreasing."""
    return int(np.searchsorted(spec.values, E, side="right"))


def count_in(spec: Spectrum, interval: EnergyInterval) -> int:
    """#{eigenvalues in [a, b)}; additive over adjacent intervals."""
    lo = np.searchsorted(spec.values, interval.a, side="left")
    hi = np.searchsorted(spec.values, interval.b, side="left")
    return int(hi - lo)


def _require_vectors(spec: Spectrum) -> np.ndarray:
    if spec.vectors is None:
        raise ValueError("operation requires eigenvectors; decompose with need_vectors=True")
    return spec.vectors


def weighted_projector_trace(spec: Spectrum, w: np.ndarray, interval: EnergyInterval) -> float:
    """Tr w^{1/2} E(Delta) w^{1/2} for a diagonal weight w >= 0."""
    vecs = _require_vectors(spec)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weight must be nonnegative")
    lo = np.searchsorted(spec.values, interval.a, side="left")
    hi = np.searchsorted(spec.values, interval.b, side="left")
    if hi <= lo:
        return 0.0
    block = vecs[:, lo:hi]
    return float(w @ (block * block).sum(axis=1))


def weighted_heat_trace(spec: Spectrum, w: np.ndarray, t: float) -> float:
    """Tr w e^{-tH} = sum_i e^{-t lambda_i} <v_i, w v_i> for diagonal w."""
    if t <= 0:
        raise ValueError("t must be positive")
    vecs = _require_vectors(spec)
    w = np.asarray(w, dtype=float)
    site_weights = w @ (vecs * vecs)  # <v_i, w v_i> per eigenpair
    return float(np.exp(-t * spec.values) @ site_weights)
