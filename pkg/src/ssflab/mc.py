"""Monte Carlo engine over disorder realizations.

Estimates disorder expectations (Wegner counts, averaged single-site SSF, DOS,
the kappa measure, thermodynamic error terms, spectral shift density) with
standard errors. Aggregation order is fixed by realization index, so results
are bit-identical regardless of the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .eig import (
    EnergyInterval,
    Spectrum,
    counting,
    eigen_decompose,
    weighted_heat_trace,
    weighted_projector_trace,
)
from .models import (
    BoxGeometry,
    ConfigurationError,
    ModelSpec,
    assemble_hamiltonian,
    embed_sample,
    profile_potential,
    sample_disorder,
    sum_profile_potential,
    with_site_coupling,
)
from .ssf import integrate, ssf_from_spectra, total_integral

__all__ = [
    "BinGrid",
    "McPlan",
    "McAggregate",
    "McKernelError",
    "MeasureEstimate",
    "WegnerReport",
    "KappaEstimate",
    "IdentityReport",
    "ThermoReport",
    "SsdReport",
    "run_realizations",
    "wegner_scan",
    "expected_ssf_bins",
    "dos_bins",
    "kappa_bins",
    "dos_ssf_identity_report",
    "thermo_error_scan",
    "ssd_scan",
]

# shift bin edges off the rational spectral points of the free operator
EDGE_OFFSET = 1e-4 * math.sqrt(2.0)


@dataclass(frozen=True)
class BinGrid:
    """Uniform half-open energy bins over [emin, emax), edges slightly offset."""

    emin: float
    emax: float
    nbins: int

    def __post_init__(self):
        if self.nbins < 1 or not self.emin < self.emax:
            raise ConfigurationError("need emin < emax and at least one bin")

    @property
    def h(self) -> float:
        return (self.emax - self.emin) / self.nbins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.emin, self.emax, self.nbins + 1) + EDGE_OFFSET

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def intervals(self) -> list[EnergyInterval]:
        e = self.edges
        return [EnergyInterval(e[k], e[k + 1]) for k in range(self.nbins)]


@dataclass(frozen=True)
class McPlan:
    """Realization count, master seed, worker count and the energy bin grid."""

    M: int
    master_seed: int
    workers: int = 1
    bins: BinGrid | None = None

    def __post_init__(self):
        if self.M < 1:
            raise ConfigurationError("need at least one realization")
        if self.workers < 1:
            raise ConfigurationError("need at least one worker")


@dataclass(frozen=True)
class McAggregate:
    mean: np.ndarray
    stderr: np.ndarray
    M: int


class McKernelError(RuntimeError):
    """Kernel failed on one realization; carries index and derived seed."""

    def __init__(self, index: int, seed: int, cause: BaseException):
        super().__init__(f"kernel failed on realization {index} (seed {seed}): {cause}")
        self.index = index
        self.seed = seed


def run_realizations(model: ModelSpec, plan: McPlan, kernel) -> McAggregate:
    """Mean and stderr of a per-realization kernel over M iid samples.

    The kernel must be a pure function of the sample returning a fixed-length
    real vector. Rows are aggregated in realization-index order.
    """
    rows = collect_realizations(model, plan, kernel)
    return aggregate_rows(rows)


def collect_realizations(model: ModelSpec, plan: McPlan, kernel) -> np.ndarray:
    from .models import realization_seed

    def work(i: int) -> np.ndarray:
        sample = sample_disorder(model.distribution, model.geometry, plan.master_seed, i)
        try:
            return np.atleast_1d(np.asarray(kernel(sample), dtype=float))
        except Exception as exc:
            raise McKernelError(i, realization_seed(plan.master_seed, i), exc) from exc

    if plan.workers == 1:
        rows = [work(i) for i in range(plan.M)]
    else:
        with ThreadPoolExecutor(max_workers=plan.workers) as pool:
            rows = list(pool.map(work, range(plan.M)))
    return np.vstack(rows)


def aggregate_rows(rows: np.ndarray) -> McAggregate:
    M = rows.shape[0]
    mean = rows.mean(axis=0)
    if M > 1:
        stderr = rows.std(axis=0, ddof=1) / math.sqrt(M)
    else:
        stderr = np.zeros_like(mean)
    return McAggregate(mean=mean, stderr=stderr, M=M)


@dataclass(frozen=True)
class MeasureEstimate:
    """Per-bin Monte Carlo mean and standard error."""

    bins: BinGrid
    mean: np.ndarray
    stderr: np.ndarray
    M: int
    normalization: str  # "per-site" | "raw"


@dataclass(frozen=True)
class WegnerReport:
    E0: float
    eps: tuple[float, ...]
    count_mean: np.ndarray  # E{count in [E0-eps, E0+eps)} per eps
    count_stderr: np.ndarray
    density_estimate: np.ndarray  # count_mean / (2 eps n)
    prob_mean: np.ndarray  # P{dist(spectrum, E0) < eps}
    prob_stderr: np.ndarray
    c_w: float  # through-origin slope of count_mean/n vs eps
    fit_rel_residual: np.ndarray  # per-point relative fit residual
    site_count: int
    M: int


def _require_bins(plan: McPlan) -> BinGrid:
    if plan.bins is None:
        raise ConfigurationError("this scan needs an energy bin grid in the plan")
    return plan.bins


def eigenvalues_for(model: ModelSpec, sample, cache=None) -> np.ndarray:
    """Eigenvalues of the assembled Hamiltonian, optionally via the spectrum cache."""
    if cache is None:
        return eigen_decompose(assemble_hamiltonian(model, sample)).values
    return cache.get_or_compute(
        model,
        sample,
        lambda: eigen_decompose(assemble_hamiltonian(model, sample)).values,
    )


def wegner_scan(
    model: ModelSpec, E0: float, eps_list, plan: McPlan, cache=None
) -> WegnerReport:
    """Monte Carlo scan of E{Tr E_Lambda([E0-eps, E0+eps))} against eps."""
    eps = tuple(float(e) for e in eps_list)
    if any(e <= 0 or e > 1 for e in eps):
        raise ConfigurationError("eps values must lie in (0, 1]")
    n = model.geometry.n

    def kernel(sample):
        vals = eigenvalues_for(model, sample, cache)
        out = np.empty(2 * len(eps))
        dist = np.min(np.abs(vals - E0))
        for k, e in enumerate(eps):
            lo = np.searchsorted(vals, E0 - e, side="left")
            hi = np.searchsorted(vals, E0 + e, side="left")
            out[k] = hi - lo
            out[len(eps) + k] = 1.0 if dist < e else 0.0
        return out

    agg = run_realizations(model, plan, kernel)
    k = len(eps)
    count_mean = agg.mean[:k]
    eps_arr = np.asarray(eps)
    y = count_mean / n
    c_w = float((eps_arr @ y) / (eps_arr @ eps_arr))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(y - c_w * eps_arr) / np.where(c_w * eps_arr > 0, c_w * eps_arr, np.inf)
    return WegnerReport(
        E0=E0,
        eps=eps,
        count_mean=count_mean,
        count_stderr=agg.stderr[:k],
        density_estimate=count_mean / (2 * eps_arr * n),
        prob_mean=agg.mean[k:],
        prob_stderr=agg.stderr[k:],
        c_w=c_w,
        fit_rel_residual=rel,
        site_count=n,
        M=agg.M,
    )


def _single_site_pair(model: ModelSpec, sample) -> tuple[Spectrum, Spectrum]:
    """Spectra of (H_{j-perp}, H_{j-perp} + lam*u_j) with j the box center."""
    j = model.geometry.center
    base = assemble_hamiltonian(model, with_site_coupling(sample, j, 0.0))
    bump = np.zeros(model.geometry.n)
    bump[model.geometry.site_index(j)] = 1.0
    pert = profile_potential(model.geometry, model.profile, bump, model.lam)
    return eigen_decompose(base), eigen_decompose(base.add_diagonal(pert))


def _ssf_bin_integrals(model: ModelSpec, sample, grid: BinGrid) -> np.ndarray:
    spec0, spec1 = _single_site_pair(model, sample)
    curve = ssf_from_spectra(spec0, spec1)
    return np.array([integrate(curve, iv) for iv in grid.intervals()]) / grid.h


def expected_ssf_bins(model: ModelSpec, plan: McPlan) -> MeasureEstimate:
    """E{ int_bin xi(E; H_{j-perp}+u_j, H_{j-perp}) dE } / h per bin."""
    grid = _require_bins(plan)
    agg = run_realizations(model, plan, lambda s: _ssf_bin_integrals(model, s, grid))
    return MeasureEstimate(
        bins=grid, mean=agg.mean, stderr=agg.stderr, M=agg.M, normalization="raw"
    )


def dos_bins(model: ModelSpec, plan: McPlan, cache=None) -> MeasureEstimate:
    """Finite-volume DOS: E{count per bin} / (n h)."""
    grid = _require_bins(plan)
    n = model.geometry.n
    edges = grid.edges

    def kernel(sample):
        vals = eigenvalues_for(model, sample, cache)
        counts, _ = np.histogram(vals, bins=edges)
        return counts / (n * grid.h)

    agg = run_realizations(model, plan, kernel)
    return MeasureEstimate(
        bins=grid, mean=agg.mean, stderr=agg.stderr, M=agg.M, normalization="per-site"
    )


@dataclass(frozen=True)
class KappaEstimate:
    estimate: MeasureEstimate
    c0: float
    inequality_ok: bool  # sum_j Tr u_j^{1/2} E(bin) u_j^{1/2} <= C0 Tr E(bin), all bins


def _kappa_row(model: ModelSpec, sample, grid: BinGrid, weight: np.ndarray):
    """Per-bin weighted projector traces plus the C0 inequality slack."""
    spec = eigen_decompose(assemble_hamiltonian(model, sample), need_vectors=True)
    per_eig = weight @ (spec.vectors * spec.vectors)  # <v_i, W v_i>
    edges = grid.edges
    weighted, _ = np.histogram(spec.values, bins=edges, weights=per_eig)
    counts, _ = np.histogram(spec.values, bins=edges)
    return weighted, counts


def kappa_bins(model: ModelSpec, plan: McPlan) -> KappaEstimate:
    """kappa_Lambda(bin)/h with the per-realization upper bound check."""
    grid = _require_bins(plan)
    n = model.geometry.n
    weight = sum_profile_potential(model.geometry, model.profile, model.lam)
    c0 = float(weight.max())
    slack = 1e-10 * n

    def kernel(sample):
        weighted, counts = _kappa_row(model, sample, grid, weight)
        ok = np.all(weighted <= c0 * counts + slack)
        return np.concatenate([weighted / (n * grid.h), [1.0 if ok else 0.0]])

    agg = run_realizations(model, plan, kernel)
    est = MeasureEstimate(
        bins=grid,
        mean=agg.mean[:-1],
        stderr=agg.stderr[:-1],
        M=agg.M,
        normalization="per-site",
    )
    return KappaEstimate(estimate=est, c0=c0, inequality_ok=bool(agg.mean[-1] == 1.0))


@dataclass(frozen=True)
class IdentityReport:
    """Cross-estimator comparison of int_bin E{xi} against kappa_Lambda(bin).

    Both columns estimate the same Birman-Solomyak quantity on shared
    realizations; under uniform couplings the omega-average coincides with the
    coupling-constant average. Values are per unit energy (divided by h).
    """

    bins: BinGrid
    ssf: MeasureEstimate
    kappa: MeasureEstimate
    dos: MeasureEstimate
    diff_mean: np.ndarray
    diff_stderr: np.ndarray
    within3_fraction: float
    krein_max_err: float  # max over realizations of |int xi - Tr(lam u_j)|
    kappa_dos_max_gap: float  # max over realizations/bins of |weighted - count|
    c0: float
    inequality_ok: bool


def dos_ssf_identity_report(model: ModelSpec, plan: McPlan) -> IdentityReport:
    grid = _require_bins(plan)
    n = model.geometry.n
    weight = sum_profile_potential(model.geometry, model.profile, model.lam)
    c0 = float(weight.max())
    slack = 1e-10 * n
    nb = grid.nbins
    trace_uj = model.lam * float(np.sum(model.profile.values))

    def kernel(sample):
        spec0, spec1 = _single_site_pair(model, sample)
        curve = ssf_from_spectra(spec0, spec1)
        ssf_row = np.array([integrate(curve, iv) for iv in grid.intervals()]) / grid.h
        krein_err = abs(total_integral(curve) - trace_uj)
        weighted, counts = _kappa_row(model, sample, grid, weight)
        ok = np.all(weighted <= c0 * counts + slack)
        kappa_row = weighted / (n * grid.h)
        dos_row = counts / (n * grid.h)
        kd_gap = float(np.abs(weighted - counts).max())
        return np.concatenate(
            [ssf_row, kappa_row, dos_row, ssf_row - kappa_row,
             [krein_err, kd_gap, 1.0 if ok else 0.0]]
        )

    rows = collect_realizations(model, plan, kernel)
    agg = aggregate_rows(rows)

    def slice_est(k, norm):
        return MeasureEstimate(
            bins=grid,
            mean=agg.mean[k * nb : (k + 1) * nb],
            stderr=agg.stderr[k * nb : (k + 1) * nb],
            M=agg.M,
            normalization=norm,
        )

    diff_mean = agg.mean[3 * nb : 4 * nb]
    diff_stderr = agg.stderr[3 * nb : 4 * nb]
    within = np.abs(diff_mean) <= 3 * diff_stderr + 1e-12
    return IdentityReport(
        bins=grid,
        ssf=slice_est(0, "raw"),
        kappa=slice_est(1, "per-site"),
        dos=slice_est(2, "per-site"),
        diff_mean=diff_mean,
        diff_stderr=diff_stderr,
        within3_fraction=float(np.mean(within)),
        krein_max_err=float(rows[:, 4 * nb].max()),
        kappa_dos_max_gap=float(rows[:, 4 * nb + 1].max()),
        c0=c0,
        inequality_ok=bool(np.all(rows[:, 4 * nb + 2] == 1.0)),
    )


@dataclass(frozen=True)
class ThermoReport:
    inner_L: tuple[int, ...]
    outer_factor: int
    interval: EnergyInterval
    err_mean: np.ndarray  # per inner L
    err_stderr: np.ndarray
    t_list: tuple[float, ...]
    laplace_mean: np.ndarray  # (len(inner_L), len(t_list))
    laplace_stderr: np.ndarray
    M: int


def thermo_error_scan(
    model: ModelSpec,
    L_list,
    outer_factor: int,
    interval: EnergyInterval,
    plan: McPlan,
    t_list=(1.0,),
) -> ThermoReport:
    """Finite-volume error term against an outer-box proxy for infinite volume.

    Per inner L, estimates (1/n) E{ sum_j [Tr u_j^{1/2} E_inner(Delta) u_j^{1/2}
    - Tr u_j^{1/2} E_outer(Delta) u_j^{1/2}] } with j over the inner box, plus
    the Laplace-transform proxy (1/n) E{ Tr V~ (e^{-t H_outer} - e^{-t H_inner}) }.
    """
    if outer_factor < 2:
        raise ConfigurationError("outer_factor must be at least 2")
    t_list = tuple(float(t) for t in t_list)
    err_means, err_ses, lap_means, lap_ses = [], [], [], []
    for L in L_list:
        inner_geom = BoxGeometry(model.geometry.d, int(L))
        outer_geom = BoxGeometry(model.geometry.d, int(L) * outer_factor)
        inner_model = model.with_geometry(inner_geom)
        outer_model = model.with_geometry(outer_geom)
        n_in = inner_geom.n
        w_in = sum_profile_potential(inner_geom, model.profile, model.lam)
        mask = np.zeros(outer_geom.n)
        from .models import inner_region_indices

        mask[inner_region_indices(inner_geom, outer_geom)] = 1.0
        w_out = profile_potential(outer_geom, model.profile, mask, model.lam)

        def kernel(sample, inner_model=inner_model, outer_model=outer_model,
                   w_in=w_in, w_out=w_out, n_in=n_in, outer_geom=outer_geom):
            spec_in = eigen_decompose(
                assemble_hamiltonian(inner_model, sample), need_vectors=True
            )
            outer_sample = embed_sample(
                sample, outer_geom, fill="fresh-iid", dist=model.distribution
            )
            spec_out = eigen_decompose(
                assemble_hamiltonian(outer_model, outer_sample), need_vectors=True
            )
            err = (
                weighted_projector_trace(spec_in, w_in, interval)
                - weighted_projector_trace(spec_out, w_out, interval)
            ) / n_in
            lap = [
                (
                    weighted_heat_trace(spec_out, w_out, t)
                    - weighted_heat_trace(spec_in, w_in, t)
                )
                / n_in
                for t in t_list
            ]
            return np.concatenate([[err], lap])

        agg = run_realizations(inner_model, plan, kernel)
        err_means.append(agg.mean[0])
        err_ses.append(agg.stderr[0])
        lap_means.append(agg.mean[1:])
        lap_ses.append(agg.stderr[1:])

    return ThermoReport(
        inner_L=tuple(int(L) for L in L_list),
        outer_factor=outer_factor,
        interval=interval,
        err_mean=np.asarray(err_means),
        err_stderr=np.asarray(err_ses),
        t_list=t_list,
        laplace_mean=np.asarray(lap_means),
        laplace_stderr=np.asarray(lap_ses),
        M=plan.M,
    )


@dataclass(frozen=True)
class SsdReport:
    energy_grid: np.ndarray
    inner_L: tuple[int, ...]
    outer_L: int
    xi_mean: np.ndarray  # (len(inner_L), G): E{xi}/|inner|
    xi_stderr: np.ndarray
    ids_free: np.ndarray  # N0(E)/|outer|
    ids_mean: np.ndarray  # E{N(E)}/|outer| for the fully disordered outer box
    ids_stderr: np.ndarray
    sup_gap: np.ndarray  # per inner L
    sup_gap_stderr: np.ndarray  # combined stderr at the maximizing energy
    M: int


def ssd_scan(
    model: ModelSpec, inner_L_list, outer_L: int, plan: McPlan, energy_grid
) -> SsdReport:
    """Spectral shift density: xi(E; H0 + chi_inner V_omega, H0)/|inner| against
    the IDS difference N0 - N of the outer box."""
    grid = np.asarray(energy_grid, dtype=float)
    outer_geom = BoxGeometry(model.geometry.d, int(outer_L))
    outer_model = model.with_geometry(outer_geom)
    n_out = outer_geom.n
    for L in inner_L_list:
        if int(L) >= outer_L:
            raise ConfigurationError("inner boxes must be strictly smaller than the outer box")

    h_free = outer_model.free_hamiltonian()
    free_vals = eigen_decompose(h_free).values
    n0_grid = np.searchsorted(free_vals, grid, side="right") / n_out

    def ids_kernel(sample):
        vals = eigen_decompose(assemble_hamiltonian(outer_model, sample)).values
        return np.searchsorted(vals, grid, side="right") / n_out

    ids_agg = run_realizations(outer_model, plan, ids_kernel)
    ref_diff = n0_grid - ids_agg.mean

    xi_means, xi_ses, gaps, gap_ses = [], [], [], []
    for L in inner_L_list:
        inner_geom = BoxGeometry(model.geometry.d, int(L))
        inner_model = model.with_geometry(inner_geom)
        n_in = inner_geom.n

        def kernel(sample, inner_geom=inner_geom, n_in=n_in):
            outer_sample = embed_sample(sample, outer_geom, fill="zeros")
            pot = profile_potential(
                outer_geom, model.profile, outer_sample.couplings, model.lam
            )
            vals = eigen_decompose(h_free.add_diagonal(pot)).values
            n_pert = np.searchsorted(vals, grid, side="right")
            n0 = np.searchsorted(free_vals, grid, side="right")
            return (n0 - n_pert) / n_in

        agg = run_realizations(inner_model, plan, kernel)
        gap_curve = np.abs(agg.mean - ref_diff)
        kmax = int(np.argmax(gap_curve))
        xi_means.append(agg.mean)
        xi_ses.append(agg.stderr)
        gaps.append(float(gap_curve[kmax]))
        gap_ses.append(float(math.hypot(agg.stderr[kmax], ids_agg.stderr[kmax])))

    return SsdReport(
        energy_grid=grid,
        inner_L=tuple(int(L) for L in inner_L_list),
        outer_L=int(outer_L),
        xi_mean=np.asarray(xi_means),
        xi_stderr=np.asarray(xi_ses),
        ids_free=n0_grid,
        ids_mean=ids_agg.mean,
        ids_stderr=ids_agg.stderr,
        sup_gap=np.asarray(gaps),
        sup_gap_stderr=np.asarray(gap_ses),
        M=plan.M,
    )
