"""CLI contract: exit codes, formats, config layering, determinism."""

import json
import math

import pytest

from slowmanifold.cli import run

EPS = 0.01

PROJECT = ["project", "--system", "linear", "--a", "1.0", "--c", "1.0",
           "--eps", "0.01", "--x0", "1.0"]


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


class TestProject:
    def test_converged_run(self, capsys):
        code = run(PROJECT + ["--m", "1"])
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["command"] == "project"
        assert payload["converged"] is True
        assert payload["diverged"] is False
        assert round(payload["output"][0], 2) == pytest.approx(0.99)
        assert payload["error_bound"] >= 0.0

    def test_csv_residual_history(self, capsys):
        code = run(PROJECT + ["--m", "1", "--format", "csv"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "iteration,residual"
        assert len(lines) >= 2
        assert lines[1].startswith("0,")

    def test_divergence_exit_code(self, capsys):
        code = run(PROJECT + ["--m", "1", "--H-over-eps", "2.2"])
        assert code == 3
        assert _stdout_json(capsys)["diverged"] is True

    def test_budget_exit_code(self, capsys):
        code = run(PROJECT + ["--m", "1", "--H-over-eps", "0.01",
                              "--tol", "1e-13", "--max-iters", "4"])
        assert code == 4
        payload = _stdout_json(capsys)
        assert payload["converged"] is False and payload["diverged"] is False

    def test_output_file_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run(PROJECT + ["--m", "2", "--output", str(a)]) == 0
        assert run(PROJECT + ["--m", "2", "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seventeen_digit_floats(self, tmp_path):
        out = tmp_path / "t.json"
        run(PROJECT + ["--m", "0", "--output", str(out)])
        payload = json.loads(out.read_text())
        expected = format(payload["output"][0], ".17g")
        assert expected in out.read_text()


class TestValidation:
    def test_missing_system(self, capsys):
        assert run(["project", "--eps", "0.01", "--x0", "1.0"]) == 2
        assert "--system" in capsys.readouterr().err

    def test_missing_x0(self, capsys):
        argv = ["project", "--system", "linear", "--a", "1.0", "--c", "1.0",
                "--eps", "0.01"]
        assert run(argv) == 2
        assert "--x0" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert run(PROJECT + ["--bogus", "1"]) == 2

    def test_bad_tolerance(self, capsys):
        assert run(PROJECT + ["--tol", "0.0"]) == 2

    def test_parameter_system_mismatch(self, capsys):
        assert run(PROJECT + ["--kappa", "1.0"]) == 2
        assert "does not apply" in capsys.readouterr().err

    def test_differenced_needs_spacing(self, capsys):
        assert run(PROJECT + ["--mode", "differenced"]) == 2
        assert "H-hat-over-eps" in capsys.readouterr().err


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "system": "linear", "a": 1.0, "c": 1.0, "eps": 0.01,
            "x0": [1.0], "m": 1}))
        code = run(["project", "--config", str(cfg)])
        assert code == 0
        assert _stdout_json(capsys)["m"] == 1

    def test_flags_override_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "system": "linear", "a": 1.0, "c": 1.0, "eps": 0.01,
            "x0": [1.0], "m": 1}))
        code = run(["project", "--config", str(cfg), "--m", "3"])
        assert code == 0
        assert _stdout_json(capsys)["m"] == 3

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"stepsize": 0.5}))
        assert run(["project", "--config", str(cfg)]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run(["project", "--config", str(cfg)]) == 2

    def test_verbose_echoes_resolved_options(self, capsys):
        code = run(PROJECT + ["--m", "1", "--verbose"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count('"command"') == 2
        assert '"m": 1' in out


class TestCascadeAndRpm:
    def test_cascade_stages(self, capsys):
        code = run(["cascade", "--system", "linear", "--a", "1.0",
                    "--c", "1.0", "--eps", "0.01", "--x0", "1.0",
                    "--m", "2", "--H-over-eps", "0.5"])
        assert code == 0
        payload = _stdout_json(capsys)
        assert [s["m"] for s in payload["stages"]] == [0, 1, 2]
        assert all(s["converged"] for s in payload["stages"])

    def test_rpm_reports_subspace(self, capsys):
        argv = ["rpm", "--system", "pair", "--modulus", "1.0",
                "--theta", str(0.7 * math.pi), "--drift", "0.5",
                "--eps", "0.01", "--x0", "1.0", "--m", "1",
                "--tol", "1e-10"]
        with pytest.warns(UserWarning, match="pure Newton"):
            code = run(argv)
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["subspace_dimension"] == 2
        assert payload["converged"] is True
        assert len(payload["basis"]) == 2 and len(payload["p"]) == 2
        assert payload["q"] == [0.0, 0.0] or len(payload["q"]) == 2


class TestStabilityAndRegion:
    def test_stability_report(self, capsys):
        code = run(["stability", "--system", "pair", "--modulus", "1.0",
                    "--theta", str(math.pi), "--eps", "0.01",
                    "--x0", "1.0", "--m", "1", "--H-over-eps", "0.5"])
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["stable"] is True
        assert len(payload["modes"]) == 2
        h_max = payload["modes"][0]["h_max"]
        assert h_max == pytest.approx(EPS * math.sqrt(2.0), rel=1e-12)

    def test_region_csv_shape(self, capsys):
        code = run(["region", "--m", "1", "--resolution", "8"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "theta,step,abs_mu,stable"
        assert len(lines) == 1 + 8 * 8
        flags = {line.rsplit(",", 1)[1] for line in lines[1:]}
        assert flags == {"0", "1"}

    def test_region_analytic_json(self, capsys):
        code = run(["region", "--m", "0", "--mode", "analytic",
                    "--resolution", "4", "--format", "json"])
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["eta"] is None
        assert len(payload["abs_mu"]) == 4

    def test_region_rejects_bad_window(self, capsys):
        code = run(["region", "--m", "1", "--theta-min", "2.0",
                    "--theta-max", "1.0"])
        assert code == 2


class TestSweep:
    def test_order_task(self, capsys):
        code = run(["sweep", "--task", "order", "--system", "linear",
                    "--a", "1.0", "--c", "1.0", "--m", "1",
                    "--epsilons", "1e-2", "5e-3", "2e-3", "1e-3",
                    "--H-over-eps", "0.5", "--x0", "1.0"])
        assert code == 0
        payload = _stdout_json(capsys)
        assert payload["task"] == "order"
        assert payload["slope"] == pytest.approx(2.0, abs=0.3)
        assert payload["r_squared"] > 0.99

    def test_threshold_task(self, capsys):
        code = run(["sweep", "--task", "threshold", "--system", "linear",
                    "--a", "1.0", "--c", "1.0", "--eps", "0.01",
                    "--m", "1", "--x0", "1.0", "--y-seed", "2.0",
                    "--step-min", "1.0", "--step-max", "2.0"])
        assert code == 0
        payload = _stdout_json(capsys)
        expected = 2.0 ** 0.5 * EPS
        assert payload["threshold"] == pytest.approx(expected, rel=5e-3)

    def test_regions_task(self, capsys):
        code = run(["sweep", "--task", "regions", "--eps", "0.01",
                    "--m", "1", "--resolution", "16", "--format", "csv"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "theta,step,abs_mu,predicted,observed,excluded"
        assert len(lines) == 1 + 16 * 16

    def test_threshold_requires_bracket(self, capsys):
        code = run(["sweep", "--task", "threshold", "--system", "linear",
                    "--a", "1.0", "--c", "1.0", "--eps", "0.01",
                    "--m", "1", "--x0", "1.0", "--y-seed", "2.0"])
        assert code == 2
        assert "step-min" in capsys.readouterr().err
