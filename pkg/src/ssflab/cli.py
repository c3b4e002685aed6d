"""Command-line front end: `ssf-lab run|cache|selftest`."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cache import SpectrumCache
from .config import ConfigError, ExperimentConfig, load_config
from .eig import EnergyInterval, eigen_decompose
from .mc import (
    dos_bins,
    dos_ssf_identity_report,
    expected_ssf_bins,
    kappa_bins,
    ssd_scan,
    thermo_error_scan,
    wegner_scan,
)
from .models import ConfigurationError, SymmetricOperator
from .ssf import (
    RankNPerturbation,
    birman_solomyak_residual,
    rank_bound_report,
    spectral_averaging_value,
)


def _fmt(x) -> str:
    if isinstance(x, bool) or isinstance(x, np.bool_):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _random_symmetric(rng, n: int, scale: float = 1.0) -> SymmetricOperator:
    g = rng.normal(size=(n, n))
    return SymmetricOperator.from_dense(scale * (g + g.T) / 2.0, tag="random")


def _random_rank_n(rng, n: int, rank: int, max_weight: float) -> RankNPerturbation:
    q, _ = np.linalg.qr(rng.normal(size=(n, rank)))
    weights = max_weight * rng.uniform(0.1, 1.0, size=rank)
    return RankNPerturbation(directions=q, weights=weights)


def _single_site_bs_instance(cfg: ExperimentConfig, index: int):
    """H0 with the center coupling zeroed plus the single-site diagonal V."""
    from .mc import _single_site_pair  # noqa: F401  (kept for parity with mc)
    from .models import (
        assemble_hamiltonian,
        profile_potential,
        sample_disorder,
        with_site_coupling,
    )

    model = cfg.model
    sample = sample_disorder(
        model.distribution, model.geometry, cfg.plan.master_seed, index
    )
    j = model.geometry.center
    h0 = assemble_hamiltonian(model, with_site_coupling(sample, j, 0.0))
    bump = np.zeros(model.geometry.n)
    bump[model.geometry.site_index(j)] = 1.0
    v = profile_potential(model.geometry, model.profile, bump, model.lam)
    return h0, v


def _run_wegner(cfg: ExperimentConfig, cache):
    p = cfg.params
    report = wegner_scan(cfg.model, float(p["E0"]), p["eps"], cfg.plan, cache=cache)
    columns = [
        "eps", "count_mean", "count_stderr", "density_estimate",
        "prob_mean", "prob_stderr", "fit_rel_residual",
    ]
    rows = [
        [e, report.count_mean[k], report.count_stderr[k], report.density_estimate[k],
         report.prob_mean[k], report.prob_stderr[k], report.fit_rel_residual[k]]
        for k, e in enumerate(report.eps)
    ]
    checks = []
    if "max_fit_residual" in p:
        thr = float(p["max_fit_residual"])
        checks.append({
            "name": "wegner_linearity",
            "passed": bool(np.all(report.fit_rel_residual <= thr)),
            "detail": f"max relative fit residual {float(report.fit_rel_residual.max())!r} vs {thr!r}",
        })
    return columns, rows, checks, {"c_w": report.c_w, "site_count": report.site_count}


def _run_ssf_bound(cfg: ExperimentConfig, cache):
    est = expected_ssf_bins(cfg.model, cfg.plan)
    rank = cfg.model.profile.rank
    columns = ["bin_center", "mean", "stderr"]
    rows = [[c, est.mean[k], est.stderr[k]] for k, c in enumerate(est.bins.centers)]
    bound = float(cfg.params.get("max_bin_mean", rank))
    checks = [{
        "name": "ssf_bin_means_bounded",
        "passed": bool(np.all(est.mean >= 0) and np.all(est.mean <= bound + 1e-12)),
        "detail": f"bin means in [{float(est.mean.min())!r}, {float(est.mean.max())!r}], bound {bound!r}",
    }]
    return columns, rows, checks, {"rank": rank}


def _run_dos_vs_ssf(cfg: ExperimentConfig, cache):
    report = dos_ssf_identity_report(cfg.model, cfg.plan)
    columns = [
        "bin_center", "ssf_mean", "ssf_stderr", "kappa_mean", "kappa_stderr",
        "dos_mean", "dos_stderr", "diff_mean", "diff_stderr", "within_3_stderr",
    ]
    rows = []
    for k, c in enumerate(report.bins.centers):
        rows.append([
            c, report.ssf.mean[k], report.ssf.stderr[k],
            report.kappa.mean[k], report.kappa.stderr[k],
            report.dos.mean[k], report.dos.stderr[k],
            report.diff_mean[k], report.diff_stderr[k],
            bool(abs(report.diff_mean[k]) <= 3 * report.diff_stderr[k] + 1e-12),
        ])
    frac_min = float(cfg.params.get("min_within3_fraction", 0.9))
    checks = [
        {
            "name": "cross_estimator_agreement",
            "passed": report.within3_fraction >= frac_min,
            "detail": f"within-3-stderr fraction {report.within3_fraction!r} vs {frac_min!r}",
        },
        {
            "name": "weighted_trace_upper_bound",
            "passed": report.inequality_ok,
            "detail": f"C0 = {report.c0!r}",
        },
    ]
    return columns, rows, checks, {
        "within3_fraction": report.within3_fraction,
        "krein_max_err": report.krein_max_err,
        "c0": report.c0,
    }


def _run_birman_solomyak(cfg: ExperimentConfig, cache):
    p = cfg.params
    a, b = (float(x) for x in p["delta"])
    interval = EnergyInterval(a, b)
    tol = float(p.get("tol", 1e-4))
    columns = ["realization", "lhs", "rhs", "residual", "nodes", "converged"]
    rows = []
    worst = 0.0
    for i in range(cfg.plan.M):
        h0, v = _single_site_bs_instance(cfg, i)
        res = birman_solomyak_residual(h0, v, interval, tol)
        rows.append([i, res.lhs, res.rhs, res.residual, res.nodes, res.converged])
        worst = max(worst, res.residual)
    thr = max(tol, 1e-6)
    checks = [{
        "name": "birman_solomyak_residual",
        "passed": worst <= thr,
        "detail": f"max residual {worst!r} vs {thr!r}",
    }]
    return columns, rows, checks, {"max_residual": worst, "tol": tol}


def _run_rank_bound(cfg: ExperimentConfig, cache):
    p = cfg.params
    n = int(p.get("n", 60))
    max_rank = int(p.get("max_rank", 5))
    instances = int(p.get("instances", 100))
    scale = float(p.get("scale", 10.0))
    rng = np.random.Generator(np.random.PCG64(int(p.get("seed", cfg.plan.master_seed))))
    columns = ["instance", "sup_xi", "rank", "passed"]
    rows = []
    all_ok = True
    for i in range(instances):
        h0 = _random_symmetric(rng, n)
        b = _random_rank_n(rng, n, int(rng.integers(1, max_rank + 1)), scale)
        rep = rank_bound_report(h0, b)
        rows.append([i, rep.sup_xi, rep.rank, rep.passed])
        all_ok = all_ok and rep.passed
    checks = [{"name": "finite_rank_bound", "passed": all_ok, "detail": f"{instances} instances"}]
    return columns, rows, checks, {}


def _run_spectral_averaging(cfg: ExperimentConfig, cache):
    p = cfg.params
    n = int(p.get("n", 30))
    max_rank = int(p.get("max_rank", 3))
    instances = int(p.get("instances", 50))
    width = float(p.get("width", 0.3))
    tol = float(p.get("tol", 1e-5))
    rng = np.random.Generator(np.random.PCG64(int(p.get("seed", cfg.plan.master_seed))))
    columns = ["instance", "value", "psi_norm_sq", "interval_width", "bound", "passed", "nodes"]
    rows = []
    all_ok = True
    for i in range(instances):
        h0 = _random_symmetric(rng, n)
        b = _random_rank_n(rng, n, int(rng.integers(1, max_rank + 1)), 1.0)
        phi = rng.normal(size=n)
        phi /= np.linalg.norm(phi)
        vals = eigen_decompose(h0).values
        center = rng.uniform(vals[0], vals[-1])
        interval = EnergyInterval(center, center + width)
        res = spectral_averaging_value(h0, b, phi, interval, tol)
        psi = b.sqrt_apply(phi)
        norm_sq = float(psi @ psi)
        bound = min(norm_sq, interval.width)
        ok = res.value <= bound + 1e-4
        rows.append([i, res.value, norm_sq, interval.width, bound, ok, res.nodes])
        all_ok = all_ok and ok
    checks = [{"name": "spectral_averaging_bound", "passed": all_ok, "detail": f"{instances} instances"}]
    return columns, rows, checks, {}


def _run_thermo(cfg: ExperimentConfig, cache):
    p = cfg.params
    a, b = (float(x) for x in p["delta"])
    t_list = tuple(float(t) for t in p.get("t", [1.0]))
    report = thermo_error_scan(
        cfg.model, p["L_list"], int(p["outer_factor"]), EnergyInterval(a, b),
        cfg.plan, t_list,
    )
    columns = ["inner_L", "err_mean", "err_stderr"]
    columns += [f"laplace_t{t}" for t in t_list]
    columns += [f"laplace_t{t}_stderr" for t in t_list]
    rows = []
    for k, L in enumerate(report.inner_L):
        rows.append(
            [L, report.err_mean[k], report.err_stderr[k]]
            + list(report.laplace_mean[k])
            + list(report.laplace_stderr[k])
        )
    abs_err = np.abs(report.err_mean)
    tol_band = 2 * (report.err_stderr[1:] + report.err_stderr[:-1])
    err_trend = bool(np.all(abs_err[1:] <= abs_err[:-1] + tol_band))
    lap = report.laplace_mean[:, 0]
    lap_band = 2 * (report.laplace_stderr[1:, 0] + report.laplace_stderr[:-1, 0])
    lap_trend = bool(np.all(lap[1:] <= lap[:-1] + lap_band))
    checks = [
        {"name": "error_term_nonincreasing", "passed": err_trend,
         "detail": f"|err| = {list(map(float, abs_err))!r}"},
        {"name": "laplace_proxy_nonincreasing", "passed": lap_trend,
         "detail": f"laplace(t={t_list[0]}) = {list(map(float, lap))!r}"},
    ]
    return columns, rows, checks, {}


def _run_ssd(cfg: ExperimentConfig, cache):
    p = cfg.params
    bins = cfg.plan.bins
    if bins is None:
        raise ConfigError("ssd experiment needs [plan.bins] for the energy grid")
    points = int(p.get("grid_points", 129))
    grid = np.linspace(bins.emin, bins.emax, points)
    report = ssd_scan(cfg.model, p["inner_L"], int(p["outer_L"]), cfg.plan, grid)
    columns = ["inner_L", "sup_gap", "sup_gap_stderr"]
    rows = [
        [L, report.sup_gap[k], report.sup_gap_stderr[k]]
        for k, L in enumerate(report.inner_L)
    ]
    band = 2 * (report.sup_gap_stderr[1:] + report.sup_gap_stderr[:-1])
    trend = bool(np.all(report.sup_gap[1:] <= report.sup_gap[:-1] + band))
    checks = [{
        "name": "ssd_gap_nonincreasing",
        "passed": trend,
        "detail": f"sup gaps {list(map(float, report.sup_gap))!r}",
    }]
    return columns, rows, checks, {"outer_L": report.outer_L}


_RUNNERS = {
    "wegner": _run_wegner,
    "ssf-bound": _run_ssf_bound,
    "dos-vs-ssf": _run_dos_vs_ssf,
    "birman-solomyak": _run_birman_solomyak,
    "rank-bound": _run_rank_bound,
    "spectral-averaging": _run_spectral_averaging,
    "thermo-limit": _run_thermo,
    "ssd": _run_ssd,
}


def run_experiment(config_path, overrides=()) -> int:
    start = time.time()
    cfg = load_config(config_path, overrides)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cache = SpectrumCache() if cfg.cache_enabled else None

    columns, rows, checks, extras = _RUNNERS[cfg.kind](cfg, cache)

    report_csv = cfg.output_dir / "report.csv"
    write_csv(report_csv, columns, rows)
    summary = {
        "experiment": cfg.kind,
        "model_hash": cfg.model.model_hash() if cfg.model else None,
        "plan": {
            "M": cfg.plan.M,
            "master_seed": cfg.plan.master_seed,
            "workers": cfg.plan.workers,
        },
        "columns": columns,
        "rows": [[_fmt(x) for x in row] for row in rows],
        "checks": checks,
        **extras,
    }
    (cfg.output_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    manifest = {
        "config_path": str(config_path),
        "overrides": list(overrides),
        "config": cfg.raw,
        "ssflab_version": __version__,
        "python_version": sys.version,
        "numpy_version": np.__version__,
        "wall_time_seconds": time.time() - start,
        "outputs": ["report.csv", "summary.json"],
    }
    (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))

    for check in checks:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {check['name']}: {check['detail']}")
    if cfg.checks_enabled and any(not c["passed"] for c in checks):
        return 2
    return 0


def _selftest() -> int:
    """Tiny example suite exercising the exactly-known values."""
    from .eig import count_in, counting
    from .models import (
        BoxGeometry,
        DisorderDistribution,
        SiteProfile,
        build_free_hamiltonian,
        sample_disorder,
    )
    from .ssf import GaussianTestFunction, integrate as ssf_integrate
    from .ssf import ssf_from_spectra, trace_formula_residual
    from .eig import Spectrum

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1

    vals = eigen_decompose(build_free_hamiltonian(BoxGeometry(1, 3))).values
    check("free d=1 L=3 spectrum {0,3,3}", np.allclose(vals, [0, 3, 3], atol=1e-9))
    vals4 = eigen_decompose(build_free_hamiltonian(BoxGeometry(1, 4))).values
    check("free d=1 L=4 spectrum {0,2,2,4}", np.allclose(vals4, [0, 2, 2, 4], atol=1e-9))

    geom = BoxGeometry(1, 5)
    s1 = sample_disorder(DisorderDistribution(), geom, 7, 3)
    s2 = sample_disorder(DisorderDistribution(), geom, 7, 3)
    check("disorder determinism", np.array_equal(s1.couplings, s2.couplings))
    check("couplings in [0,1]", bool(np.all((s1.couplings >= 0) & (s1.couplings <= 1))))

    spec = Spectrum(values=np.array([0.0, 3.0, 3.0]))
    check("counting at E=3 is 3", counting(spec, 3.0) == 3)
    check("count_in [2.5,3.5) is 2", count_in(spec, EnergyInterval(2.5, 3.5)) == 2)

    spec0 = Spectrum(values=np.array([0.0, 3.0, 3.0]))
    spec1 = Spectrum(values=np.array([0.5, 3.0, 3.5]))
    curve = ssf_from_spectra(spec0, spec1)
    check("hand SSF integral over [0,4) is 1.0",
          abs(ssf_integrate(curve, EnergyInterval(0.0, 4.0)) - 1.0) < 1e-12)
    f = GaussianTestFunction(center=1.0, sigma=2.0)
    check("trace formula on hand pair",
          trace_formula_residual(spec0, spec1, f) < 1e-12)

    profile = SiteProfile(offsets=((0,), (1,)), values=(1.0, 0.5))
    from .models import sum_profile_potential
    w = sum_profile_potential(BoxGeometry(1, 5), profile, 1.0)
    check("plateau summed profile is constant 1.5", np.allclose(w, 1.5))

    print(f"selftest: {failures} failure(s)")
    return 0 if failures == 0 else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ssf-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a TOML config")
    run_p.add_argument("config")
    run_p.add_argument(
        "overrides",
        nargs=argparse.REMAINDER,
        help="key=value overrides, e.g. --plan.M=10",
    )

    cache_p = sub.add_parser("cache", help="spectrum cache maintenance")
    cache_p.add_argument("action", choices=["stats", "clear"])

    sub.add_parser("selftest", help="run the built-in example suite")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_experiment(args.config, args.overrides)
        if args.command == "cache":
            cache = SpectrumCache()
            if args.action == "stats":
                print(json.dumps(cache.stats(), indent=2))
            else:
                print(f"removed {cache.clear()} cache entries")
            return 0
        if args.command == "selftest":
            return _selftest()
    except (ConfigError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
