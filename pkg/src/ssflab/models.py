"""Finite-volume Anderson-type lattice models.

Builds periodic tight-binding Hamiltonians H = H0 + lam * sum_j omega_j u_j
on a d-dimensional torus of L^d sites, together with the iid disorder
configurations that drive them.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConfigurationError",
    "BoxGeometry",
    "DisorderDistribution",
    "DisorderSample",
    "SiteProfile",
    "ModelSpec",
    "SymmetricOperator",
    "splitmix64",
    "realization_seed",
    "build_free_hamiltonian",
    "sample_disorder",
    "assemble_hamiltonian",
    "with_site_coupling",
    "sum_profile_potential",
    "translate_sample",
    "embed_sample",
]

_MASK64 = (1 << 64) - 1
# stream-domain tag so exterior fill in embed_sample never collides with the
# realization streams themselves
_EMBED_TAG = 0xE3B0C44298FC1C14


class ConfigurationError(ValueError):
    """Rejected model/geometry configuration."""


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 mixing function (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def realization_seed(master_seed: int, index: int) -> int:
    """Per-realization stream seed; independent of execution order."""
    return splitmix64((master_seed & _MASK64) ^ splitmix64(index & _MASK64))


@dataclass(frozen=True)
class BoxGeometry:
    """d-dimensional periodic box with L sites per side, row-major indexing."""

    d: int
    L: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.L < 3:
            raise ConfigurationError(
                f"side length must satisfy L >= 3 (got L={self.L}): periodic wrap "
                "would create duplicate bonds"
            )

    @property
    def n(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    def site_index(self, coords) -> int:
        coords = tuple(int(c) % self.L for c in coords)
        return int(np.ravel_multi_index(coords, self.shape))

    def site_coords(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(index, self.shape))

    def all_coords(self) -> np.ndarray:
        """(n, d) array of multi-indices in linearization order."""
        return np.indices(self.shape).reshape(self.d, -1).T

    def shift_map(self, offset) -> np.ndarray:
        """Permutation p with p[j] = index of site (coords(j) + offset) mod L."""
        coords = (self.all_coords() + np.asarray(offset, dtype=int)) % self.L
        return np.ravel_multi_index(coords.T, self.shape)

    @property
    def center(self) -> tuple[int, ...]:
        return (self.L // 2,) * self.d


@dataclass(frozen=True)
class DisorderDistribution:
    """Coupling distribution: uniform on [0,1] or a piecewise-constant density.

    For kind="piecewise", `support` is [a, b] and `weights` are density values
    on len(weights) equal-width bins; the density must integrate to 1.
    """

    kind: str = "uniform01"
    support: tuple[float, float] = (0.0, 1.0)
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "uniform01":
            object.__setattr__(self, "support", (0.0, 1.0))
            return
        if self.kind != "piecewise":
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        a, b = self.support
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ConfigurationError("support must be a bounded interval [a, b)")
        if not self.weights:
            raise ConfigurationError("piecewise density needs bin weights")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ConfigurationError("density must be nonnegative")
        mass = float(w.sum() * (b - a) / len(w))
        if abs(mass - 1.0) > 1e-12:
            raise ConfigurationError(f"density must integrate to 1, got {mass!r}")

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "uniform01":
            return rng.random(count)
        a, b = self.support
        w = np.asarray(self.weights, dtype=float)
        k = len(w)
        probs = w / w.sum()
        cum = np.cumsum(probs)
        bins = np.searchsorted(cum, rng.random(count), side="right")
        bins = np.minimum(bins, k - 1)
        width = (b - a) / k
        return a + (bins + rng.random(count)) * width

    def contains(self, values: np.ndarray) -> bool:
        a, b = self.support
        return bool(np.all((values >= a) & (values <= b)))


@dataclass(frozen=True)
class DisorderSample:
    """One realization of iid couplings on the box sites."""

    geometry: BoxGeometry
    couplings: np.ndarray
    master_seed: int
    index: int

    def __post_init__(self):
        c = np.asarray(self.couplings, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "couplings", c)
        if c.shape != (self.geometry.n,):
            raise ConfigurationError(
                f"expected {self.geometry.n} couplings, got {c.shape}"
            )


@dataclass(frozen=True)
class SiteProfile:
    """Single-site potential u: offsets (relative to the anchor) -> value > 0."""

    offsets: tuple[tuple[int, ...], ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.offsets) != len(self.values) or not self.offsets:
            raise ConfigurationError("profile needs matching nonempty offsets/values")
        if len(set(self.offsets)) != len(self.offsets):
            raise ConfigurationError("duplicate offsets in profile")
        if any(v <= 0 for v in self.values):
            raise ConfigurationError("profile values must be strictly positive")

    @classmethod
    def delta(cls, d: int) -> "SiteProfile":
        return cls(offsets=((0,) * d,), values=(1.0,))

    @property
    def rank(self) -> int:
        return len(self.offsets)

    def diameter(self) -> int:
        offs = np.asarray(self.offsets, dtype=int)
        return int((offs.max(axis=0) - offs.min(axis=0)).max())

    def fits(self, geom: BoxGeometry) -> bool:
        dims = {len(o) for o in self.offsets}
        return dims == {geom.d} and self.diameter() < geom.L

    def require_fits(self, geom: BoxGeometry) -> None:
        if not self.fits(geom):
            raise ConfigurationError(
                f"profile (diameter {self.diameter()}) does not fit in box L={geom.L}"
            )


@dataclass(frozen=True)
class SymmetricOperator:
    """Dense real symmetric matrix stored as a flat lower triangle."""

    n: int
    tril: np.ndarray
    tag: str = ""

    def __post_init__(self):
        t = np.asarray(self.tril, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "tril", t)
        if t.shape != (self.n * (self.n + 1) // 2,):
            raise ValueError("lower-triangle length does not match dimension")
        if not np.all(np.isfinite(t)):
            raise ValueError("operator entries must be finite")

    @classmethod
    def from_dense(cls, mat: np.ndarray, tag: str = "") -> "SymmetricOperator":
        mat = np.asarray(mat, dtype=float)
        n = mat.shape[0]
        return cls(n=n, tril=mat[np.tril_indices(n)], tag=tag)

    def to_dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        idx = np.tril_indices(self.n)
        m[idx] = self.tril
        m = m + m.T
        m[np.diag_indices(self.n)] /= 2.0
        return m

    def diagonal(self) -> np.ndarray:
        idx = np.cumsum(np.arange(1, self.n + 1)) - 1
        return self.tril[idx]

    def add_diagonal(self, diag: np.ndarray, tag: str | None = None) -> "SymmetricOperator":
        diag = np.asarray(diag, dtype=float)
        t = self.tril.copy()
        idx = np.cumsum(np.arange(1, self.n + 1)) - 1
        t[idx] += diag
        return SymmetricOperator(n=self.n, tril=t, tag=self.tag if tag is None else tag)

    def trace(self) -> float:
        return float(self.diagonal().sum())


def _resolve_background(geom: BoxGeometry, V0) -> np.ndarray:
    """Tile a periodic background potential onto the full box."""
    if V0 is None:
        return np.zeros(geom.n)
    if np.isscalar(V0):
        return np.full(geom.n, float(V0))
    cell = np.asarray(V0, dtype=float)
    if cell.ndim == 1 and cell.shape == (geom.n,) and geom.d != 1:
        return cell.copy()
    if cell.ndim != geom.d:
        raise ConfigurationError("background cell dimension does not match box")
    p = cell.shape[0]
    if any(s != p for s in cell.shape):
        raise ConfigurationError("background cell must be cubic")
    if geom.L % p != 0:
        raise ConfigurationError(
            f"background period {p} does not divide side length {geom.L}"
        )
    coords = geom.all_coords() % p
    return cell[tuple(coords.T)]


@dataclass(frozen=True)
class ModelSpec:
    """Full model: geometry, background, single-site profile, coupling scale."""

    geometry: BoxGeometry
    profile: SiteProfile
    lam: float = 1.0
    distribution: DisorderDistribution = field(default_factory=DisorderDistribution)
    background: object = None  # None, scalar, or periodic cell array

    def __post_init__(self):
        self.profile.require_fits(self.geometry)
        _resolve_background(self.geometry, self.background)

    def free_hamiltonian(self) -> SymmetricOperator:
        return build_free_hamiltonian(self.geometry, self.background)

    def with_geometry(self, geom: BoxGeometry) -> "ModelSpec":
        return replace(self, geometry=geom)

    def canonical_dict(self) -> dict:
        bg = self.background
        if bg is not None and not np.isscalar(bg):
            bg = np.asarray(bg, dtype=float).tolist()
        return {
            "d": self.geometry.d,
            "L": self.geometry.L,
            "lam": repr(float(self.lam)),
            "profile_offsets": [list(o) for o in self.profile.offsets],
            "profile_values": [repr(float(v)) for v in self.profile.values],
            "distribution": {
                "kind": self.distribution.kind,
                "support": [repr(float(x)) for x in self.distribution.support],
                "weights": None
                if self.distribution.weights is None
                else [repr(float(w)) for w in self.distribution.weights],
            },
            "background": bg,
        }

    def model_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=8).hexdigest()


def build_free_hamiltonian(geom: BoxGeometry, V0=None) -> SymmetricOperator:
    """Free lattice operator: diagonal 2d + V0, hopping -1 on periodic bonds."""
    background = _resolve_background(geom, V0)
    n = geom.n
    h = np.zeros((n, n))
    np.fill_diagonal(h, 2.0 * geom.d + background)
    sites = np.arange(n)
    for axis in range(geom.d):
        offset = tuple(1 if a == axis else 0 for a in range(geom.d))
        nbr = geom.shift_map(offset)
        h[sites, nbr] = -1.0
        h[nbr, sites] = -1.0
    return SymmetricOperator.from_dense(h, tag=f"free-d{geom.d}-L{geom.L}")


def sample_disorder(
    dist: DisorderDistribution, geom: BoxGeometry, master_seed: int, index: int
) -> DisorderSample:
    """Draw one iid coupling realization, reproducible per (master_seed, index)."""
    seed = realization_seed(master_seed, index)
    rng = np.random.Generator(np.random.PCG64(seed))
    omega = dist.draw(rng, geom.n)
    return DisorderSample(
        geometry=geom, couplings=omega, master_seed=master_seed, index=index
    )


def profile_potential(
    geom: BoxGeometry, profile: SiteProfile, couplings: np.ndarray, lam: float
) -> np.ndarray:
    """Diagonal lam * sum_j omega_j u(. - j) with periodic wrap."""
    profile.require_fits(geom)
    pot = np.zeros(geom.n)
    for offset, value in zip(profile.offsets, profile.values):
        target = geom.shift_map(offset)
        pot[target] += lam * value * couplings
    return pot


def assemble_hamiltonian(model: ModelSpec, sample: DisorderSample) -> SymmetricOperator:
    """H = H0 + lam * sum_j omega_j u_j (the random part is diagonal)."""
    if sample.geometry != model.geometry:
        raise ConfigurationError("sample geometry does not match model")
    pot = profile_potential(model.geometry, model.profile, sample.couplings, model.lam)
    h0 = model.free_hamiltonian()
    return h0.add_diagonal(pot, tag=model.model_hash())


def with_site_coupling(sample: DisorderSample, j, value: float) -> DisorderSample:
    """Copy of the sample with omega_j overwritten (j a site index or coords)."""
    idx = j if np.isscalar(j) else sample.geometry.site_index(j)
    couplings = sample.couplings.copy()
    couplings[idx] = value
    return replace(sample, couplings=couplings)


def sum_profile_potential(geom: BoxGeometry, profile: SiteProfile, lam: float = 1.0) -> np.ndarray:
    """lam * sum_j u_j, i.e. all couplings set to one; its max is the constant
    dominating the weighted trace by the plain eigenvalue count."""
    return profile_potential(geom, profile, np.ones(geom.n), lam)


def translate_sample(sample: DisorderSample, shift) -> DisorderSample:
    """Cyclic shift: omega'_x = omega_{x - shift mod L}."""
    geom = sample.geometry
    shift = (shift,) if np.isscalar(shift) else tuple(shift)
    src = geom.shift_map(tuple(-s for s in shift))
    return replace(sample, couplings=sample.couplings[src])


def embed_sample(
    inner: DisorderSample,
    outer_geom: BoxGeometry,
    fill: str = "fresh-iid",
    dist: DisorderDistribution | None = None,
) -> DisorderSample:
    """Place an inner-box realization centered in a larger box.

    The exterior is filled with zeros or with fresh iid couplings drawn from a
    deterministically derived stream, so embeddings are reproducible.
    """
    geom = inner.geometry
    if outer_geom.d != geom.d:
        raise ConfigurationError("inner and outer boxes must share the dimension")
    if outer_geom.L < geom.L:
        raise ConfigurationError("outer box must be at least as large as the inner box")
    if fill not in ("fresh-iid", "zeros"):
        raise ConfigurationError(f"unknown fill rule {fill!r}")
    if outer_geom.L == geom.L:
        return replace(inner, geometry=outer_geom)

    if fill == "zeros":
        couplings = np.zeros(outer_geom.n)
    else:
        if dist is None:
            raise ConfigurationError("fresh-iid fill needs the generating distribution")
        seed = splitmix64(realization_seed(inner.master_seed, inner.index) ^ _EMBED_TAG)
        rng = np.random.Generator(np.random.PCG64(seed))
        couplings = dist.draw(rng, outer_geom.n)

    couplings[inner_region_indices(geom, outer_geom)] = inner.couplings
    return DisorderSample(
        geometry=outer_geom,
        couplings=couplings,
        master_seed=inner.master_seed,
        index=inner.index,
    )


def inner_region_indices(inner_geom: BoxGeometry, outer_geom: BoxGeometry) -> np.ndarray:
    """Outer-box indices of the centered inner region, in inner linearization order."""
    off = (outer_geom.L - inner_geom.L) // 2
    coords = inner_geom.all_coords() + off
    return np.ravel_multi_index(coords.T, outer_geom.shape)
