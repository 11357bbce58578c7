import csv
import math

import pytest

from slowfast_pm import ConfigurationError
from slowfast_pm import cases
from slowfast_pm.cli import main
from slowfast_pm.model import ModelParams, r_det

CUSTOM = ["--case", "custom", "--lam", "1", "--f", "1", "--gamma", "2", "--epsilon", "0.1", "--sigma", "0.2"]


def test_builtin_cases_match_tables():
    assert cases.builtin_case("I").params == ModelParams(1e-3, 1e2, 5.6e-2, 1e-2, 0.55)
    assert cases.builtin_case("II").params == ModelParams(1e-3, 10.0, 1.0, 1e-2, 0.2)
    assert cases.builtin_case("IV").params == ModelParams(1e-3, 10.0, 1.0, 10.0, 0.3)
    for e in cases.CASE_III_EPS:
        assert cases.builtin_case("III", e).params == ModelParams(10.0, 1.0, 50.0, e, 0.1)
    with pytest.raises(ConfigurationError):
        cases.builtin_case("V")


def test_config_round_trip(tmp_path):
    text = "# comment\ncase_id = III\nepsilon = 0.1\nmaster_seed = 7  # trailing\nthin = 50\n"
    d1 = cases.parse_config_text(text)
    cfg = cases.config_from_dict(d1)
    s1 = cases.serialize_config(cfg)
    cfg2 = cases.config_from_dict(cases.parse_config_text(s1))
    assert cfg2 == cfg and cases.serialize_config(cfg2) == s1
    assert cfg.params.epsilon == 0.1 and cfg.master_seed == 7 and cfg.thin == 50
    (tmp_path / "c.cfg").write_text(s1)
    assert cases.load_config(tmp_path / "c.cfg") == cfg
    for bad in ("nokey\n", "colour = red\n", "thin = many\n"):
        with pytest.raises(ConfigurationError):
            cases.parse_config_text(bad)
    custom = cases.config_from_dict(dict(lam=1, f=1, gamma=1, epsilon=1, sigma=0.1))
    assert cases.config_from_dict(cases.parse_config_text(cases.serialize_config(custom))) == custom


def test_sub_seeds():
    a = cases.sub_seed(7, "original_polar")
    assert a == cases.sub_seed(7, "original_polar") and a != cases.sub_seed(7, "reduced_polar")
    assert a != cases.sub_seed(8, "original_polar") and 0 <= a < 2 ** 63


def _body(path):
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# slowfast-pm")
    return lines[1:]


def test_simulate_sigma_zero_reaches_r_det(tmp_path, capsys):
    args = ["simulate", *CUSTOM[:-1], "0", "--system", "reduced_polar", "--T", "30", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = list(csv.reader(_body(tmp_path / "path_reduced_polar.csv")))
    assert rows[0] == ["t", "r", "theta"]
    assert abs(float(rows[-1][1]) - r_det(ModelParams(1, 1, 2, 0.1, 0))) < 1e-6
    args[args.index("reduced_polar")] = "original_polar"
    assert main(args) == 0
    last = list(csv.reader(_body(tmp_path / "path_original_polar.csv")))[-1]
    rd = math.sqrt(0.5)
    assert abs(float(last[1]) - rd) < 1e-6 and abs(float(last[3]) - rd * rd) < 1e-6


def test_outputs_are_deterministic(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    base = ["defect", *CUSTOM, "--T-total", "120", "--burn-in", "20", "--seed", "3"]
    assert main(base + ["--out", str(a)]) == 0
    monkeypatch.setenv("SLOWFAST_PM_OUT", str(b))
    assert main(base) == 0
    assert _body(a / "defect_casecustom.csv") == _body(b / "defect_casecustom.csv")
    g = ["girsanov", *CUSTOM, "--T", "0.05", "--n-paths", "200", "--check", "both"]
    assert main(g + ["--out", str(a), "--threads", "1"]) == 0
    assert main(g + ["--out", str(b), "--threads", "4"]) == 0
    for f in ("girsanov_casecustom.csv", "envelope_casecustom.csv"):
        assert _body(a / f) == _body(b / f)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lam = 1\nf = 1\ngamma = 2\nepsilon = 0.1\nsigma = 0.5\noutputs = /nonexistent\n")
    args = ["simulate", "--config", str(cfg), "--sigma", "0", "--system", "reduced_polar", "--T", "20"]
    assert main(args) == 2          # configured output directory is missing
    assert main(args + ["--out", str(tmp_path)]) == 0
    last = list(csv.reader(_body(tmp_path / "path_reduced_polar.csv")))[-1]
    assert abs(float(last[1]) - math.sqrt(0.5)) < 1e-6


def test_exit_codes(tmp_path):
    assert main(["simulate", "--case", "custom", "--lam", "1", "--out", str(tmp_path)]) == 2
    assert main(["simulate", *CUSTOM, "--out", str(tmp_path / "missing")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("this is not a config\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["table", *CUSTOM, "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--case", "V"])
    assert e.value.code == 2
    # importance weights collapse over a long horizon in a stiff regime
    stiff = ["girsanov", "--case", "III", "--epsilon", "0.1", "--T", "1", "--n-paths", "100", "--out", str(tmp_path)]
    assert main(stiff) == 3
    assert (tmp_path / "girsanov_caseIII.csv").exists()


def test_measure_tau_bounds_commands(tmp_path, capsys):
    base = [*CUSTOM, "--T-total", "120", "--burn-in", "20", "--out", str(tmp_path)]
    assert main(["measure", *base, "--bins", "20"]) == 0
    assert _body(tmp_path / "hist_r_original_polar.csv")[0] == "bin_left,bin_right,density"
    assert _body(tmp_path / "samples_original_polar.csv")[0] == "r,theta,z"
    assert main(["tau", *base]) == 0
    assert len(_body(tmp_path / "tau_curve_casecustom.csv")) == 201
    assert main(["bounds", *base, "--theorem", "T2.2", "--theorem", "T3.3"]) == 0
    rows = _body(tmp_path / "bounds_casecustom.csv")
    assert rows[0].startswith("theorem,case,epsilon,lhs") and len(rows) == 3
    out = capsys.readouterr().out
    assert "T3.3" in out and "prefactor" in out
