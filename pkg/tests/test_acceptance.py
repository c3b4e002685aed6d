"""Quantitative acceptance suite.

Each test checks one headline property of the laboratory at a fixed tolerance
and prints a single pass line; seeds are fixed so the whole suite is
reproducible run to run.
"""

import numpy as np

from ssflab.eig import EnergyInterval, eigen_decompose
from ssflab.mc import (
    BinGrid,
    McPlan,
    _single_site_pair,
    dos_ssf_identity_report,
    expected_ssf_bins,
    kappa_bins,
    ssd_scan,
    thermo_error_scan,
    wegner_scan,
)
from ssflab.models import (
    BoxGeometry,
    ModelSpec,
    SiteProfile,
    SymmetricOperator,
    assemble_hamiltonian,
    profile_potential,
    sample_disorder,
    translate_sample,
    with_site_coupling,
)
from ssflab.ssf import (
    GaussianTestFunction,
    RankNPerturbation,
    birman_solomyak_residual,
    rank_bound_report,
    spectral_averaging_value,
    ssf_between,
    ssf_from_spectra,
    total_integral,
    trace_formula_residual,
)


def _passed(line: str) -> None:
    print(f"[PASS] {line}", flush=True)


def _random_symmetric(rng, n, scale=1.0):
    g = rng.normal(size=(n, n))
    return SymmetricOperator.from_dense(scale * (g + g.T) / 2.0)


def _random_rank_n(rng, n, rank, weight_high=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, rank)))
    return RankNPerturbation(directions=q, weights=rng.uniform(0.0, weight_high, size=rank))


def test_01_rank_one_ssf_bound():
    """0 <= xi <= 1 for 500 single-site instances across d=1 and d=2."""
    cases = [
        (ModelSpec(geometry=BoxGeometry(1, 64), profile=SiteProfile.delta(1)), 250, 101),
        (ModelSpec(geometry=BoxGeometry(2, 12), profile=SiteProfile.delta(2)), 250, 102),
    ]
    for model, count, master in cases:
        for index in range(count):
            sample = sample_disorder(model.distribution, model.geometry, master, index)
            curve = ssf_from_spectra(*_single_site_pair(model, sample))
            assert curve.values.min() >= 0
            assert curve.values.max() <= 1
    _passed("01 rank-one SSF bound: 0 <= xi <= 1 on 500 instances (exact)")


def test_02_finite_rank_bound():
    """0 <= xi <= N for 500 random rank-N perturbations, N in 1..5."""
    rng = np.random.default_rng(2)
    for _ in range(500):
        n = int(rng.integers(8, 40))
        rank = int(rng.integers(1, 6))
        h0 = _random_symmetric(rng, n, scale=float(rng.uniform(0.5, 4.0)))
        report = rank_bound_report(h0, _random_rank_n(rng, n, rank))
        assert report.passed, (report.sup_xi, report.rank)
    _passed("02 finite-rank bound: all 500 rank_bound_report pass (exact)")


def test_03_trace_formula_and_normalization():
    """Trace formula residual and exact integral-equals-trace, 200 pairs."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        scale = float(rng.uniform(0.5, 5.0))
        h0 = _random_symmetric(rng, n, scale)
        b = scale * rng.normal(size=(n, n))
        b = (b + b.T) / 2.0
        h1 = SymmetricOperator.from_dense(h0.to_dense() + b)
        spec0, spec1 = eigen_decompose(h0), eigen_decompose(h1)
        f = GaussianTestFunction(
            center=float(rng.uniform(-scale, scale)), sigma=float(rng.uniform(0.5, 2.0))
        )
        assert trace_formula_residual(spec0, spec1, f) <= 1e-10 * n * scale
        curve = ssf_from_spectra(spec0, spec1)
        assert abs(total_integral(curve) - np.trace(b)) <= 1e-9 * n * scale
    _passed("03 Krein trace formula: residual <= 1e-10*n*scale and "
            "int xi = trace(B) <= 1e-9*n*scale on 200 pairs")


def test_04_birman_solomyak_identity():
    """Coupling-averaged trace equals the SSF integral, 50 Anderson instances."""
    model = ModelSpec(geometry=BoxGeometry(1, 40), profile=SiteProfile.delta(1))
    h0 = model.free_hamiltonian()
    rng = np.random.default_rng(4)
    tol = 1e-4
    for index in range(50):
        sample = sample_disorder(model.distribution, model.geometry, 400, index)
        a = float(rng.uniform(0.25, 3.5))
        result = birman_solomyak_residual(
            h0, sample.couplings, EnergyInterval(a, a + 0.5), tol=tol
        )
        assert result.residual <= max(1e-6, tol), (index, result.residual)
    _passed("04 Birman-Solomyak identity: residual <= 1e-4 on 50 Anderson instances")


def test_05_wegner_linearity():
    """Through-origin linear fit of E{count}/n vs eps, two volumes."""
    eps = [0.02, 0.05, 0.1, 0.2]
    plan = McPlan(M=500, master_seed=500)
    reports = {}
    for L in (200, 400):
        model = ModelSpec(geometry=BoxGeometry(1, L), profile=SiteProfile.delta(1))
        reports[L] = wegner_scan(model, 2.0, eps, plan)
        assert np.all(reports[L].fit_rel_residual <= 0.10), reports[L].fit_rel_residual
    ratio = reports[200].c_w / reports[400].c_w
    assert 0.5 <= ratio <= 2.0, ratio
    _passed(f"05 Wegner linearity: fit residual <= 10% per point, "
            f"C_W ratio {ratio:.3f} in [0.5, 2]")


def test_06_averaged_ssf_bound_and_stability():
    """Binned E{xi} in [0, 1] and volume-stable between L=128 and L=256."""
    grid = BinGrid(0.0, 5.0, 10)
    estimates = {}
    for L, master in ((128, 601), (256, 602)):
        model = ModelSpec(geometry=BoxGeometry(1, L), profile=SiteProfile.delta(1))
        est = expected_ssf_bins(model, McPlan(M=300, master_seed=master, bins=grid))
        assert np.all(est.mean >= 0.0) and np.all(est.mean <= 1.0 + 1e-12)
        estimates[L] = est
    gap = np.abs(estimates[128].mean - estimates[256].mean)
    tol = 3.0 * np.hypot(estimates[128].stderr, estimates[256].stderr)
    assert np.all(gap <= tol), (gap, tol)
    _passed("06 averaged-SSF bound: bin means in [0, 1], L=128 vs L=256 within 3*stderr")


def test_07_dos_ssf_identity():
    """Cross-estimator agreement and exact kappa = dos for the delta profile."""
    model = ModelSpec(geometry=BoxGeometry(1, 256), profile=SiteProfile.delta(1))
    plan = McPlan(M=200, master_seed=700, bins=BinGrid(0.0, 5.0, 20))
    report = dos_ssf_identity_report(model, plan)
    assert report.within3_fraction >= 0.9, report.within3_fraction
    assert report.kappa_dos_max_gap <= 1e-10 * 256, report.kappa_dos_max_gap
    _passed(f"07 DOS-SSF identity: {report.within3_fraction:.0%} of bins within "
            f"3*stderr, kappa = dos per realization within 1e-10*n")


def test_08_deterministic_measure_comparison():
    """Plateau profile: weighted trace <= C0 * count on every realization/bin."""
    profile = SiteProfile(offsets=((0,), (1,)), values=(1.0, 0.5))
    model = ModelSpec(geometry=BoxGeometry(1, 64), profile=profile)
    plan = McPlan(M=100, master_seed=800, bins=BinGrid(0.0, 6.0, 12))
    report = kappa_bins(model, plan)
    assert report.c0 == 1.5
    assert report.inequality_ok
    _passed("08 deterministic measure comparison: weighted trace <= 1.5 * count, "
            "all realizations and bins")


def test_09_thermo_error_decay():
    """|E_Lambda| and the Laplace proxy nonincreasing in L within 2*stderr."""
    model = ModelSpec(geometry=BoxGeometry(1, 16), profile=SiteProfile.delta(1))
    report = thermo_error_scan(
        model, [16, 32, 64], 4, EnergyInterval(1.5, 2.5),
        McPlan(M=300, master_seed=900), t_list=(1.0,),
    )
    err = np.abs(report.err_mean)
    for i in range(len(err) - 1):
        slack = 2.0 * np.hypot(report.err_stderr[i], report.err_stderr[i + 1])
        assert err[i + 1] <= err[i] + slack, (err, report.err_stderr)
    lap = report.laplace_mean[:, 0]
    for i in range(len(lap) - 1):
        slack = 2.0 * np.hypot(report.laplace_stderr[i, 0], report.laplace_stderr[i + 1, 0])
        assert lap[i + 1] <= lap[i] + slack, (lap, report.laplace_stderr)
    _passed("09 thermodynamic error decay: |E_Lambda| and Laplace proxy "
            "nonincreasing over L in {16, 32, 64} within 2*stderr")


def test_10_ssd_limit():
    """Sup-gap between E{xi}/|Lambda| and N0 - N nonincreasing in inner L."""
    model = ModelSpec(geometry=BoxGeometry(1, 32), profile=SiteProfile.delta(1))
    grid = np.linspace(-0.25, 5.25, 221)
    report = ssd_scan(model, [32, 64, 128], 512, McPlan(M=100, master_seed=1000), grid)
    for i in range(len(report.sup_gap) - 1):
        slack = 2.0 * np.hypot(report.sup_gap_stderr[i], report.sup_gap_stderr[i + 1])
        assert report.sup_gap[i + 1] <= report.sup_gap[i] + slack, report.sup_gap
    _passed("10 SSD limit: sup-gap nonincreasing over inner L in {32, 64, 128} "
            "within 2*stderr")


def test_11_translation_covariance():
    """Single-site xi curves commute with cyclic shifts, 100 instances."""
    model = ModelSpec(geometry=BoxGeometry(1, 20), profile=SiteProfile.delta(1))
    rng = np.random.default_rng(11)

    def site_curve(sample, j):
        full = assemble_hamiltonian(model, sample)
        base = assemble_hamiltonian(model, with_site_coupling(sample, j, 0.0))
        return ssf_between(base, full)

    for index in range(100):
        sample = sample_disorder(model.distribution, model.geometry, 1100, index)
        j = int(rng.integers(0, 20))
        s = int(rng.integers(1, 20))
        a = site_curve(sample, j)
        b = site_curve(translate_sample(sample, s), (j + s) % 20)
        assert np.array_equal(a.values, b.values)
        assert np.allclose(a.breakpoints, b.breakpoints, atol=1e-9, rtol=0.0)
    _passed("11 translation covariance: shifted curves match on 100 instances "
            "(breakpoints within 1e-9)")


def test_12_spectral_averaging_bound():
    """Averaged projection <= min(||psi||^2, |Delta|) + 1e-4, 100 instances."""
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(6, 25))
        rank = int(rng.integers(1, 4))
        h0 = _random_symmetric(rng, n, scale=float(rng.uniform(0.5, 3.0)))
        b = _random_rank_n(rng, n, rank, weight_high=1.0)
        phi = rng.normal(size=n)
        phi /= np.linalg.norm(phi)
        a = float(rng.uniform(-2.0, 2.0))
        interval = EnergyInterval(a, a + float(rng.uniform(0.05, 0.5)))
        psi = b.sqrt_apply(phi)
        bound = min(float(psi @ psi), interval.width)
        result = spectral_averaging_value(h0, b, phi, interval, tol=1e-5)
        assert result.value <= bound + 1e-4, (result.value, bound)
    _passed("12 spectral averaging: value <= min(||psi||^2, |Delta|) + 1e-4 "
            "on 100 instances")
