import json

import pytest

from dyadiclab import cli, config, suites
from dyadiclab.config import ConfigError


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


class TestConfig:
    def test_defaults(self):
        cfg = config.load("identities")
        assert cfg["model"] == {"n": 1, "D": 4} and cfg["draws"] == 50 and cfg["mode"] == "rational"

    @pytest.mark.parametrize("obj,path", [
        ({"model": {"n": 1, "D": 0}}, "model.D"),
        ({"model": {"n": 1}}, "model"),
        ({"mode": "decimal"}, "mode"),
        ({"weights": {"w": {"kind": "power", "alpha": 2}}}, "weights.w.alpha"),
        ({"operation": {"p": 1}}, "operation.p"),
        ({"colour": 1}, "<root>"),
    ])
    def test_schema_errors_name_field(self, tmp_path, obj, path):
        with pytest.raises(ConfigError) as err:
            config.load("bounds", write(tmp_path, obj))
        assert err.value.path == path

    def test_guardrail(self, tmp_path):
        path = write(tmp_path, {"model": {"n": 2, "D": 13}})
        with pytest.raises(ConfigError):
            config.load("bounds", path)
        assert config.load("bounds", path, force_large=True)["model"]["D"] == 13

    def test_bad_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{")
        with pytest.raises(ConfigError):
            config.load("bounds", str(p))

    def test_overrides(self):
        assert config.load("bounds", overrides={"seed": 9, "mode": None})["seed"] == 9


class TestSuites:
    def test_identities_rational(self):
        cfg = config.load("identities")
        cfg["draws"] = 5
        rep = suites.run_identities(cfg)
        assert rep.ok and rep.meta["max_residual"] == 0

    def test_identities_two_dimensions(self):
        cfg = config.load("identities")
        cfg.update(model={"n": 2, "D": 3}, draws=2)
        rep = suites.run_identities(cfg)
        assert rep.ok
        assert any("Gamma" in c.name for c in rep.checks)

    def test_identities_float(self):
        cfg = config.load("identities")
        cfg.update(mode="float", draws=5)
        rep = suites.run_identities(cfg)
        assert rep.ok and 0 < rep.meta["max_residual"] <= 1e-10

    def test_bounds_with_chain(self):
        cfg = config.load("bounds")
        cfg["draws"] = 20
        rep = suites.run_bounds(cfg)
        assert rep.ok
        slack = rep.meta["slack"]
        assert slack["tau_J <= Lambda"]["count"] == 20
        assert all(v["violations"] == 0 for v in slack.values())

    def test_dominate_constant_symbol(self):
        cfg = config.load("dominate")
        cfg["functions"]["b"] = {"kind": "constant", "value": 2}
        out = suites.run_dominate(cfg)
        assert out.report.ok and len(out.results[0].collection) == 1

    def test_dominate_bilinear(self):
        cfg = config.load("dominate")
        cfg["operation"].update(algorithm="bilinear", runs=2)
        out = suites.run_dominate(cfg)
        assert out.report.ok and len(out.results) == 2

    def test_sharpness_single_row(self):
        cfg = config.load("sharpness")
        cfg["model"]["D"] = 6
        cfg["operation"]["alphas"] = [0.0]
        rep, sweep = suites.run_sharpness(cfg)
        assert rep.ok and len(sweep.rows) == 1 and sweep.rows[0].ap_char == pytest.approx(1.0)

    @pytest.mark.parametrize("operator", ["identity", "Pi", "PiStar", "composition", "sparse", "square"])
    def test_norm(self, operator):
        cfg = config.load("norm")
        cfg["operation"]["operator"] = operator
        cfg["sparse"] = {"kind": "chain"}
        rep, est = suites.run_norm(cfg)
        assert rep.ok and est.value >= 0

    def test_norm_svd_matches(self):
        cfg = config.load("norm")
        cfg["operation"]["method"] = "svd"
        svd = suites.run_norm(cfg)[1].value
        cfg["operation"]["method"] = "power"
        assert suites.run_norm(cfg)[1].value == pytest.approx(svd, rel=1e-8)


class TestCommandLine:
    def test_identities_reproducible(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["identities", "--out", str(a)]) == 0
        assert cli.main(["identities", "--out", str(b)]) == 0
        assert (a / "identities_report.json").read_bytes() == (b / "identities_report.json").read_bytes()
        data = json.loads((a / "identities_report.json").read_text())
        assert data["ok"] and data["meta"]["seed"] == 0
        assert set(data["meta"]["environment"]) == {"python", "numpy", "scipy", "dyadiclab"}
        assert not list(a.glob(".*tmp"))

    def test_config_error_exit(self, tmp_path, capsys):
        path = write(tmp_path, {"model": {"n": 1, "D": -1}})
        assert cli.main(["bounds", "--config", path]) == 2
        assert "model.D" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert cli.main(["bounds", "--config", str(tmp_path / "none.json")]) == 2

    def test_guardrail_exit(self, tmp_path):
        path = write(tmp_path, {"model": {"n": 2, "D": 13}})
        assert cli.main(["bounds", "--config", path]) == 2

    def test_violation_exit(self, monkeypatch, tmp_path):
        from dyadiclab.report import VerificationReport

        def failing(cfg):
            rep = VerificationReport("bounds")
            rep.add("forced", False, lhs=2.0, rhs=1.0)
            return rep

        monkeypatch.setattr(suites, "run_bounds", failing)
        assert cli.main(["bounds", "--out", str(tmp_path)]) == 1
        data = json.loads((tmp_path / "bounds_report.json").read_text())
        assert data["checks"][0]["kind"] == "bound" and data["checks"][0]["slack"] == 0.5

    def test_dominate_outputs(self, tmp_path):
        path = write(tmp_path, {"model": {"n": 1, "D": 6}, "output": {"csv": True}})
        assert cli.main(["dominate", "--config", path, "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
        coll = json.loads((tmp_path / "o" / "collection.json").read_text())
        assert coll["measured_carleson"] <= 2
        lines = (tmp_path / "o" / "pointwise.csv").read_text().splitlines()
        assert lines[0] == "cell_index,lhs,rhs" and len(lines) == 65

    def test_sharpness_outputs(self, tmp_path):
        path = write(tmp_path, {"model": {"n": 1, "D": 6}, "operation": {"alphas": [0.3, -0.5]}})
        assert cli.main(["sharpness", "--config", path, "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "sweep.csv").read_text().splitlines()
        assert rows[0] == "alpha,ap_char,norm_pi,norm_square,bmo_w,bounds_ok" and len(rows) == 3
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["report_only"] is True and "residual" in summary["fit"]

    def test_mode_flag(self, tmp_path):
        path = write(tmp_path, {"draws": 2})
        assert cli.main(["identities", "--config", path, "--mode", "float", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "identities_report.json").read_text())["meta"]["mode"] == "float"
