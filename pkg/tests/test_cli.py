import csv
import json
from importlib import resources

import numpy as np
import pytest

from kcones.cli import main
from kcones.config import apply_overrides, parse_config, parse_config_text, parse_overrides
from kcones.errors import ConfigParseError, ConfigValidationError
from kcones.report import emit_report, report_json, run_scenario

MINIMAL = {
    "base": {"kind": "bernoulli_shift", "probabilities": [0.5, 0.5]},
    "generators": [[[3, 0], [0, 1 / 3]], [[2, 0], [0, 0.5]]],
    "analyses": ["spectrum"],
}


def scenario(name):
    return str(resources.files("kcones") / "scenarios" / f"{name}.json")


def _config(**changes):
    d = json.loads(json.dumps(MINIMAL))
    d.update(changes)
    return json.dumps(d)


def _fields(exc):
    return [path for path, _ in exc.value.problems]


class TestConfig:
    def test_minimal_defaults(self):
        c = parse_config_text(json.dumps(MINIMAL))
        assert c.dim == 2 and c.k == 1 and c.seed == 0
        assert c.orbit_length == 1000 and c.past == c.orbit_length
        assert c.format == "json"
        assert c.tolerances["push"] == 1e-10 and c.tolerances["roundtrip_gap"] == 1e-5
        assert c.spec.generators.shape == (2, 2, 2)

    def test_negative_orbit_length(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text(_config(orbit_length=-5))
        assert "orbit_length" in _fields(exc)

    def test_non_square_generator(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text(_config(generators=[[[1, 2, 3], [4, 5, 6]]] * 2))
        assert any(p.startswith("generators") for p in _fields(exc))

    def test_unknown_format(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text(_config(output={"format": "xml"}))
        assert "output.format" in _fields(exc)

    def test_unknown_field(self):
        with pytest.raises(ConfigValidationError):
            parse_config_text(_config(colour="blue"))

    def test_all_problems_collected(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config_text(_config(orbit_length=-5, output={"format": "xml"}))
        assert {"orbit_length", "output.format"} <= set(_fields(exc))

    def test_malformed_text(self):
        with pytest.raises(ConfigParseError):
            parse_config_text("{not json")

    def test_overrides(self):
        c = apply_overrides(parse_config_text(json.dumps(MINIMAL)), seed=7, orbit_length=500,
                            fmt="csv", tolerances=parse_overrides("push=1e-8,temper=0.05"))
        assert (c.seed, c.orbit_length, c.format) == (7, 500, "csv")
        assert c.tolerances["push"] == 1e-8 and c.tolerances["temper"] == 0.05


class TestReports:
    def test_spectrum_values(self):
        rep = run_scenario(parse_config(scenario("diag_spectrum")))
        d = json.loads(report_json(rep))
        assert d["schema_version"] == 1
        np.testing.assert_allclose(d["analyses"]["spectrum"]["result"]["spectrum"],
                                   [np.log(2), -np.log(2)], atol=1e-12)

    def test_roundtrip_verdicts_pass(self):
        rep = run_scenario(parse_config(scenario("diag_roundtrip")))
        assert rep.exit_code == 0
        verdicts = [v for a in rep.analyses for v in a.verdicts]
        assert verdicts and all(v.passed for v in verdicts)

    def test_equal_exponents_error_is_isolated(self):
        rep = run_scenario(parse_config(scenario("equal_exponents")))
        by_name = {a.name: a for a in rep.analyses}
        assert by_name["spectrum"].error is None
        assert by_name["extract_splitting"].error[0] == "NoConvergence"
        assert rep.exit_code == 3

    def test_csv_tables(self, tmp_path):
        rep = run_scenario(parse_config(scenario("diag_roundtrip")))
        paths = emit_report(rep, "csv", tmp_path)
        names = sorted(p.split("/")[-1] for p in paths)
        assert names == ["exponents.csv", "margins.csv", "verdicts.csv"]
        with open(tmp_path / "verdicts.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["analysis", "condition_id", "passed", "min_margin", "witness_step",
                           "notes"]
        assert len(rows) > 1

    def test_json_file(self, tmp_path):
        rep = run_scenario(parse_config(scenario("diag_spectrum")))
        (p,) = emit_report(rep, "json", tmp_path)
        assert json.load(open(p))["schema_version"] == 1

    def test_emit_rejects_unknown_format(self, tmp_path):
        rep = run_scenario(parse_config(scenario("diag_spectrum")))
        with pytest.raises(ConfigValidationError):
            emit_report(rep, "xml", tmp_path)


class TestCommandLine:
    @pytest.mark.parametrize("name,command,code", [
        ("diag_spectrum", "spectrum", 0),
        ("diag_roundtrip", "roundtrip", 0),
        ("equal_exponents", "run", 3),
        ("periodic_eventual", "run", 0),
        ("bernoulli_diagonal", "run", 0),
    ])
    def test_exit_codes(self, tmp_path, name, command, code):
        assert main([command, "--config", scenario(name), "--output", str(tmp_path)]) == code

    def test_bad_config_is_usage_error(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(_config(orbit_length=-1))
        assert main(["spectrum", "--config", str(p), "--output", str(tmp_path)]) == 2
        assert "orbit_length" in capsys.readouterr().err

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["spectrum", "--config", str(tmp_path / "nope.json")]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_verify_fails_with_small_chi(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({
            "base": {"kind": "constant"}, "generators": [[[2, 0], [0, 0.5]]],
            "orbit_length": 200, "cone": {"opening": 1.0, "chi": 1.5},
            "analyses": ["check:C1,C3"]}))
        assert main(["verify", "--config", str(p), "--output", str(tmp_path)]) == 1

    def test_seed_override_changes_report(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["spectrum", "--config", scenario("bernoulli_diagonal"), "--output", str(a),
              "--orbit-length", "500"])
        main(["spectrum", "--config", scenario("bernoulli_diagonal"), "--output", str(b),
              "--orbit-length", "500", "--seed", "99"])
        ra = json.load(open(a / "report.json"))
        rb = json.load(open(b / "report.json"))
        assert rb["seed"] == 99 and ra["analyses"] != rb["analyses"]
