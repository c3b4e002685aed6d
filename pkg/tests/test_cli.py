import json

import numpy as np
import pytest

from ssflab.cache import SpectrumCache, read_eigenvalues, write_eigenvalues
from ssflab.cli import main
from ssflab.config import ConfigError, load_config
from ssflab.models import BoxGeometry, ModelSpec, SiteProfile, sample_disorder


WEGNER_TOML = """
[experiment]
kind = "wegner"
output_dir = "{out}"

[model]
d = 1
L = 16

[plan]
M = 5
master_seed = 42

[wegner]
E0 = 2.0
eps = [0.1, 0.2]
"""


@pytest.fixture
def wegner_config(tmp_path):
    out = tmp_path / "out"
    cfg = tmp_path / "wegner.toml"
    cfg.write_text(WEGNER_TOML.format(out=out))
    return cfg, out


class TestRun:
    def test_smoke_writes_reports(self, wegner_config):
        cfg, out = wegner_config
        assert main(["run", str(cfg)]) == 0
        rows = (out / "report.csv").read_text().strip().splitlines()
        assert rows[0].startswith("eps,")
        assert len(rows) == 3  # header + one row per eps
        assert (out / "manifest.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["experiment"] == "wegner"
        assert "c_w" in summary

    def test_rerun_is_byte_identical(self, wegner_config):
        cfg, out = wegner_config
        main(["run", str(cfg)])
        first = (out / "report.csv").read_bytes()
        main(["run", str(cfg)])
        assert (out / "report.csv").read_bytes() == first

    def test_override_plan_m(self, wegner_config):
        cfg, out = wegner_config
        assert main(["run", str(cfg), "--plan.M=3"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["plan"]["M"] == 3

    def test_small_box_rejected_naming_constraint(self, wegner_config, capsys):
        cfg, _ = wegner_config
        assert main(["run", str(cfg), "--model.L=2"]) == 1
        assert "L >= 3" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(WEGNER_TOML.format(out=tmp_path / "o") + "\ntypo_key = 1\n")
        assert main(["run", str(cfg)]) == 1
        assert "typo_key" in capsys.readouterr().err

    def test_unparsable_config(self, tmp_path, capsys):
        cfg = tmp_path / "broken.toml"
        cfg.write_text("[experiment\nkind=")
        assert main(["run", str(cfg)]) == 1
        assert "parse" in capsys.readouterr().err

    def test_failed_check_exits_2(self, wegner_config):
        cfg, _ = wegner_config
        # an impossible linearity tolerance must trip the check path
        assert main(["run", str(cfg), "--wegner.max_fit_residual=1e-12"]) == 2

    def test_rank_bound_experiment(self, tmp_path):
        out = tmp_path / "rb"
        cfg = tmp_path / "rank.toml"
        cfg.write_text(
            f"""
[experiment]
kind = "rank-bound"
output_dir = "{out}"

[plan]
M = 1
master_seed = 5

[rank_bound]
n = 20
max_rank = 3
instances = 10
"""
        )
        assert main(["run", str(cfg)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert all(c["passed"] for c in summary["checks"])


class TestConfig:
    def test_profile_and_distribution_tables(self, tmp_path):
        cfg = tmp_path / "full.toml"
        cfg.write_text(
            """
[experiment]
kind = "ssf-bound"

[model]
d = 1
L = 8
lam = 0.5

[model.profile]
offsets = [[0], [1]]
values = [1.0, 0.5]

[model.distribution]
kind = "piecewise"
support = [0.0, 2.0]
weights = [0.75, 0.25]

[plan]
M = 2
master_seed = 0

[plan.bins]
emin = 0.0
emax = 6.0
nbins = 6
"""
        )
        parsed = load_config(cfg)
        assert parsed.model.profile.rank == 2
        assert parsed.model.distribution.kind == "piecewise"
        assert parsed.plan.bins.nbins == 6

    def test_unknown_experiment_kind(self, tmp_path):
        cfg = tmp_path / "k.toml"
        cfg.write_text("[experiment]\nkind = 'nope'\n[plan]\nM = 1\n")
        with pytest.raises(ConfigError, match="unknown experiment kind"):
            load_config(cfg)

    def test_section_for_other_experiment_rejected(self, tmp_path):
        cfg = tmp_path / "k.toml"
        cfg.write_text(
            WEGNER_TOML.format(out=tmp_path / "o") + "\n[ssd]\nouter_L = 8\ninner_L = [4]\n"
        )
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(cfg)


class TestCache:
    def test_roundtrip_bitwise(self, tmp_path):
        values = np.sort(np.random.default_rng(0).normal(size=50))
        path = tmp_path / "x.eig"
        write_eigenvalues(path, values)
        assert np.array_equal(read_eigenvalues(path), values)

    def test_miss_then_hit(self, tmp_path):
        cache = SpectrumCache(tmp_path)
        model = ModelSpec(geometry=BoxGeometry(1, 6), profile=SiteProfile.delta(1))
        sample = sample_disorder(model.distribution, model.geometry, 1, 0)
        calls = []

        def producer():
            calls.append(1)
            return np.arange(6, dtype=float)

        a = cache.get_or_compute(model, sample, producer)
        b = cache.get_or_compute(model, sample, producer)
        assert len(calls) == 1
        assert np.array_equal(a, b)

    def test_truncated_file_recomputed(self, tmp_path):
        cache = SpectrumCache(tmp_path)
        model = ModelSpec(geometry=BoxGeometry(1, 6), profile=SiteProfile.delta(1))
        sample = sample_disorder(model.distribution, model.geometry, 1, 0)
        cache.get_or_compute(model, sample, lambda: np.arange(6, dtype=float))
        victim = next(tmp_path.glob("*.eig"))
        victim.write_bytes(victim.read_bytes()[:-4])
        out = cache.get_or_compute(model, sample, lambda: np.arange(6, dtype=float))
        assert np.array_equal(out, np.arange(6, dtype=float))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.eig"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_eigenvalues(path)

    def test_env_var_sets_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SSF_LAB_CACHE_DIR", str(tmp_path / "envcache"))
        cache = SpectrumCache()
        assert str(cache.directory).endswith("envcache")

    def test_stats_and_clear(self, tmp_path):
        cache = SpectrumCache(tmp_path)
        write_eigenvalues(tmp_path / "a.eig", np.arange(3, dtype=float))
        stats = cache.stats()
        assert stats["entries"] == 1 and stats["bytes"] > 0
        assert cache.clear() == 1
        assert cache.stats()["entries"] == 0

    def test_disabled_cache_invokes_producer(self, wegner_config=None):
        # run_realizations path: cache=None means no files are consulted
        from ssflab.mc import eigenvalues_for

        model = ModelSpec(geometry=BoxGeometry(1, 6), profile=SiteProfile.delta(1))
        sample = sample_disorder(model.distribution, model.geometry, 1, 0)
        a = eigenvalues_for(model, sample, cache=None)
        b = eigenvalues_for(model, sample, cache=None)
        assert np.array_equal(a, b)


class TestSelftest:
    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out


class TestCacheCli:
    def test_stats_and_clear_commands(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("SSF_LAB_CACHE_DIR", str(tmp_path))
        write_eigenvalues(tmp_path / "a.eig", np.arange(3, dtype=float))
        assert main(["cache", "stats"]) == 0
        assert '"entries": 1' in capsys.readouterr().out
        assert main(["cache", "clear"]) == 0
        assert "removed 1" in capsys.readouterr().out
