"""Experiment configuration: strict TOML parsing into model/plan/params."""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mc import BinGrid, McPlan
from .models import (
    BoxGeometry,
    ConfigurationError,
    DisorderDistribution,
    ModelSpec,
    SiteProfile,
)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "apply_overrides"]

EXPERIMENT_KINDS = (
    "wegner",
    "ssf-bound",
    "dos-vs-ssf",
    "birman-solomyak",
    "rank-bound",
    "thermo-limit",
    "ssd",
    "spectral-averaging",
)

# experiment kinds that operate on the lattice model (rank-bound and
# spectral-averaging run on synthetic dense instances instead)
_MODEL_KINDS = {
    "wegner",
    "ssf-bound",
    "dos-vs-ssf",
    "birman-solomyak",
    "thermo-limit",
    "ssd",
}

_SCHEMA = {
    "experiment": {"kind", "output_dir", "cache", "checks"},
    "model": {"d", "L", "lam", "profile", "distribution", "background"},
    "model.profile": {"offsets", "values"},
    "model.distribution": {"kind", "support", "weights"},
    "plan": {"M", "master_seed", "workers", "bins"},
    "plan.bins": {"emin", "emax", "nbins"},
    "wegner": {"E0", "eps", "max_fit_residual"},
    "ssf_bound": {"max_bin_mean"},
    "dos_vs_ssf": {"min_within3_fraction"},
    "birman_solomyak": {"delta", "tol", "site"},
    "rank_bound": {"n", "max_rank", "instances", "seed", "scale"},
    "spectral_averaging": {"n", "max_rank", "instances", "seed", "width", "tol"},
    "thermo_limit": {"L_list", "outer_factor", "delta", "t"},
    "ssd": {"outer_L", "inner_L", "grid_points"},
}


class ConfigError(ValueError):
    """Unparsable or invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    output_dir: Path
    cache_enabled: bool
    checks_enabled: bool
    model: ModelSpec | None
    plan: McPlan
    params: dict
    raw: dict  # resolved config echo for the manifest


def _reject_unknown(section: str, table: dict) -> None:
    allowed = _SCHEMA.get(section)
    if allowed is None:
        raise ConfigError(f"unknown section [{section}]")
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        if isinstance(table[key], dict):
            _reject_unknown(f"{section}.{key}", table[key])


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"missing required key {key!r} in section [{section}]")
    return table[key]


def _parse_model(table: dict) -> ModelSpec:
    d = int(_require(table, "model", "d"))
    L = int(_require(table, "model", "L"))
    geom = BoxGeometry(d, L)
    profile_spec = table.get("profile", "delta")
    if profile_spec == "delta":
        profile = SiteProfile.delta(d)
    elif isinstance(profile_spec, dict):
        profile = SiteProfile(
            offsets=tuple(tuple(int(c) for c in o) for o in profile_spec["offsets"]),
            values=tuple(float(v) for v in profile_spec["values"]),
        )
    else:
        raise ConfigError(f"profile must be 'delta' or a table, got {profile_spec!r}")
    dist_spec = table.get("distribution", "uniform01")
    if dist_spec == "uniform01":
        dist = DisorderDistribution()
    elif isinstance(dist_spec, dict):
        dist = DisorderDistribution(
            kind=dist_spec.get("kind", "uniform01"),
            support=tuple(float(x) for x in dist_spec.get("support", (0.0, 1.0))),
            weights=tuple(float(w) for w in dist_spec["weights"])
            if "weights" in dist_spec
            else None,
        )
    else:
        raise ConfigError("distribution must be 'uniform01' or a table")
    return ModelSpec(
        geometry=geom,
        profile=profile,
        lam=float(table.get("lam", 1.0)),
        distribution=dist,
        background=table.get("background"),
    )


def _parse_plan(table: dict) -> McPlan:
    bins = None
    if "bins" in table:
        b = table["bins"]
        bins = BinGrid(
            emin=float(_require(b, "plan.bins", "emin")),
            emax=float(_require(b, "plan.bins", "emax")),
            nbins=int(_require(b, "plan.bins", "nbins")),
        )
    return McPlan(
        M=int(_require(table, "plan", "M")),
        master_seed=int(table.get("master_seed", 0)),
        workers=int(table.get("workers", 1)),
        bins=bins,
    )


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    raw = apply_overrides(raw, overrides)

    exp = raw.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError("missing [experiment] section")
    kind = _require(exp, "experiment", "kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {EXPERIMENT_KINDS}")
    section = kind.replace("-", "_")

    for name, table in raw.items():
        if name in ("experiment", "model", "plan"):
            _reject_unknown(name, table)
        elif name == section:
            _reject_unknown(section, table)
        else:
            raise ConfigError(f"unknown section [{name}] for experiment {kind!r}")

    try:
        model = _parse_model(_require(raw, "", "model")) if kind in _MODEL_KINDS else None
        plan = _parse_plan(_require(raw, "", "plan"))
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        kind=kind,
        output_dir=Path(exp.get("output_dir", "ssflab-out")),
        cache_enabled=bool(exp.get("cache", False)),
        checks_enabled=bool(exp.get("checks", True)),
        model=model,
        plan=plan,
        params=raw.get(section, {}),
        raw=raw,
    )


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply key=value overrides with dotted paths, e.g. plan.M=10."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        path, value = item.split("=", 1)
        keys = path.strip().lstrip("-").split(".")
        if not all(keys):
            raise ConfigError(f"bad override path {path!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {path!r} crosses a non-table value")
        node[keys[-1]] = parsed
    return raw
