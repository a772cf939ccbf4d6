import json
import textwrap

import numpy as np
import pytest

from mflab.cli import main, oracle_check_suite, parse_config, ConfigError


def write_config(tmp_path, body):
    path = tmp_path / "run.ini"
    path.write_text(textwrap.dedent(body))
    return path


BASE = """
    [model]
    dynamics = overdamped
    geometry = torus
    kappa = 0.2
    potential.family = cosine_sum
    potential.params = 1.0

    [plan]
    n = 16
    r = 300
    dt = 0.01
    t = 0.2
    record_times = 0.0, 0.2
    master_seed = 5
    initial_law = wrapped_gaussian
    initial_law.params = 3.141592653589793, 0.25

    [pde]
    g = 64
    dt_pde = 0.002

    [experiment]
    observables = cos, sin
"""


class TestConfigParsing:
    def test_roundtrip(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, BASE), "simulate")
        assert cfg.model.kappa == 0.2
        assert cfg.plan.N == 16
        assert cfg.grid.G == 64

    def test_unknown_key_rejected(self, tmp_path):
        bad = BASE.replace("kappa = 0.2", "kappa = 0.2\n    kapa = 0.3")
        with pytest.raises(ConfigError):
            parse_config(write_config(tmp_path, bad), "simulate")

    def test_unknown_section_rejected(self, tmp_path):
        bad = BASE + "\n    [mystery]\n    x = 1\n"
        with pytest.raises(ConfigError):
            parse_config(write_config(tmp_path, bad), "simulate")

    def test_seed_override(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, BASE), "simulate",
                           seed_override=99)
        assert cfg.plan.master_seed == 99


class TestSimulate:
    def test_artifacts_and_determinism(self, tmp_path):
        path = write_config(tmp_path, BASE)
        for threads, name in ((1, "t1"), (2, "t4"), (4, "t16")):
            code = main(["simulate", "--config", str(path), "--threads",
                         str(threads), "--out", str(tmp_path / "out"),
                         "--name", name])
            assert code == 0
        base = (tmp_path / "out" / "simulate" / "t1" / "raw.csv").read_bytes()
        for name in ("t4", "t16"):
            other = (tmp_path / "out" / "simulate" / name / "raw.csv").read_bytes()
            assert other == base
        run = tmp_path / "out" / "simulate" / "t1"
        assert (run / "resolved-config.ini").exists()
        summary = json.loads((run / "summary.json").read_text())
        assert summary["diverged_replicas"] == 0
        entry = summary["per_time"][0]["cos"]
        assert "stderr" in entry["mean"]

    def test_budget_guard(self, tmp_path):
        body = BASE + "\n    [budget]\n    max_particle_steps = 10\n"
        path = write_config(tmp_path, body)
        code = main(["simulate", "--config", str(path), "--out",
                     str(tmp_path / "out"), "--name", "guarded"])
        assert code == 1


class TestEnumerateLgraphs:
    def test_variance_leading_graph(self, capsys):
        code = main(["enumerate-lgraphs", "--k", "2", "--m", "1",
                     "--connected"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert len(payload) == 1
        assert payload[0]["gamma"] == 2
        assert payload[0]["SE"] == 1

    def test_guard(self, capsys):
        code = main(["enumerate-lgraphs", "--k", "6", "--m", "6"])
        assert code == 1


class TestOracleCheck:
    def test_suite_passes(self, capsys):
        code = main(["oracle-check", "--seed", "3"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["all_pass"]
        names = {c["name"] for c in payload["checks"]}
        assert "empirical-cumulant pairing identity" in names

    def test_function_api(self):
        payload = oracle_check_suite(seed=1)
        assert payload["all_pass"]


class TestErgodicDecay:
    def test_torus_rate(self, tmp_path):
        body = """
        [model]
        dynamics = overdamped
        geometry = torus
        kappa = 0.0
        potential.family = cosine_sum
        potential.params = 1.0

        [pde]
        g = 128
        dt_pde = 0.002

        [experiment]
        perturbation_mode = 1
        t_horizon = 6.0
        sobolev_k = 2
        rate_expected = 0.5
        rate_rel_tol = 0.05
        """
        path = write_config(tmp_path, body)
        code = main(["ergodic-decay", "--config", str(path), "--out",
                     str(tmp_path / "out"), "--name", "rate"])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "ergodic-decay" / "rate" /
                              "summary.json").read_text())
        assert summary["rate"]["value"] == pytest.approx(0.5, rel=0.05)
        csv = (tmp_path / "out" / "ergodic-decay" / "rate" / "raw.csv")
        assert csv.read_text().startswith("time,norm")


class TestGlauberCheck:
    def test_passes(self, tmp_path):
        body = """
        [model]
        dynamics = overdamped
        geometry = line
        kappa = 0.0
        a = 1.0
        potential.family = gaussian_bump
        potential.params = 1.0, 1.0

        [plan]
        n = 8
        r = 1
        dt = 0.01
        t = 0.0
        record_times = 0.0
        master_seed = 4
        initial_law = gaussian_line
        initial_law.params = 0.0, 1.0

        [experiment]
        observable = cos
        n = 10
        outer = 150
        resamples = 100
        """
        path = write_config(tmp_path, body)
        code = main(["glauber-check", "--config", str(path), "--out",
                     str(tmp_path / "out"), "--name", "g"])
        assert code == 0
        summary = json.loads((tmp_path / "out" / "glauber-check" / "g" /
                              "summary.json").read_text())
        assert summary["verdict"] == "pass"
        assert summary["efron_stein"]["holds_within_ci"]


class TestScalingCommand:
    def test_small_run_writes_artifacts(self, tmp_path):
        body = """
        [model]
        dynamics = overdamped
        geometry = torus
        kappa = 0.2
        potential.family = cosine_sum
        potential.params = 1.0

        [plan]
        n = 32
        r = 2000
        dt = 0.01
        t = 2.0
        record_times = 2.0
        master_seed = 3
        initial_law = wrapped_gaussian
        initial_law.params = 3.141592653589793, 0.25

        [experiment]
        observable = cos
        m = 2
        n_values = 32, 64, 128
        r_per_n = 2000
        t_values = 1.0, 2.0
        slope_min = -1.6
        slope_max = -0.4
        uniformity_max = 6.0
        """
        path = write_config(tmp_path, body)
        code = main(["scaling", "--config", str(path), "--out",
                     str(tmp_path / "out"), "--name", "s", "--threads", "2",
                     "--plot-data"])
        run = tmp_path / "out" / "scaling" / "s"
        summary = json.loads((run / "summary.json").read_text())
        assert code in (0, 2)
        assert (run / "raw.csv").exists()
        assert (run / "plot.tsv").exists()
        assert summary["verdict"] in ("pass", "inconclusive")
