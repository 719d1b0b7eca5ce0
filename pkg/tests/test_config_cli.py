import json

import pytest

from hemsim import cli
from hemsim.config import ConfigError, build_specs, expand, load_config, validate
from hemsim.metrics import read_ledger, replay


def write(path, text):
    path.write_text(text)
    return str(path)


# --- configuration ---------------------------------------------------------------


def test_defaults():
    (s,) = expand({})
    assert (s.case, s.seed, s.days, s.start_day, s.controllers) == (1, 0, 7, 189, ("baseline", "hem"))


def test_cases_times_seeds():
    specs = expand({"cases": [1, 2, 3], "seeds": [0, 4]})
    assert [(s.case, s.seed) for s in specs] == [(c, k) for c in (1, 2, 3) for k in (0, 4)]


def test_cli_values_override_file():
    specs = expand({"cases": [1, 2], "days": 3}, case=5, days=1)
    assert [(s.case, s.days) for s in specs] == [(5, 1)]


def test_bundled_campaign():
    specs = build_specs("cases_1_12.cfg")
    assert [s.case for s in specs] == list(range(1, 13))


def test_schema_diagnostics():
    errs = validate({"case": 13, "controllers": ["mpc"], "colour": 1})
    assert any(e.startswith("case") for e in errs)
    assert any("controllers" in e for e in errs)
    assert any("colour" in e for e in errs)


def test_bad_yaml(tmp_path):
    with pytest.raises(ConfigError, match="YAML"):
        load_config(write(tmp_path / "c.yaml", "case: [1, 2"))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.yaml")


def test_run_overrides_are_validated(tmp_path):
    cfg = {"runs": [{"case": 1, "overrides": {"scenario": {"panel_area": -3}}}]}
    with pytest.raises(ConfigError):
        expand(cfg)


def test_optimizer_settings_reach_controller():
    (s,) = expand({"optimizer": {"p_cap": 12000.0, "ga": {"hvac_summer": {"max_generations": 40}}}})
    h = s.hem_config()
    assert h.p_cap == 12000.0 and h.ga["hvac_summer"].max_generations == 40


# --- command line ------------------------------------------------------------------


def test_validate_ok(capsys):
    assert cli.main(["run", "--campaign", "cases_1_12.cfg", "--validate"]) == 0
    assert "config ok: 12 run(s)" in capsys.readouterr().out


def test_validate_bad_config(tmp_path, capsys):
    p = write(tmp_path / "c.yaml", "case: 0\ndays: -1\n")
    assert cli.main(["validate", "--config", p]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "case" in err and "days" in err


@pytest.mark.parametrize("argv", [["--case", "42"], ["--controllers", "baseline,fuzzy"], ["--days", "0"]])
def test_run_config_errors(argv, tmp_path):
    assert cli.main(["run", "--out-dir", str(tmp_path), "--validate"] + argv) == cli.EXIT_CONFIG


def test_quarantined_failure(tmp_path, capsys):
    p = write(tmp_path / "c.yaml", "days: 1\ncontrollers: [baseline]\nscenario:\n  weather_path: /nonexistent.csv\n")
    assert cli.main(["run", "--config", p, "--out-dir", str(tmp_path / "out"), "--no-figures"]) == 1
    run_dir = tmp_path / "out" / "case01_seed0"
    assert (run_dir / "error.txt").exists()
    summary = (tmp_path / "out" / "campaign_summary.csv").read_text()
    assert "failed" in summary


def test_baseline_run_and_replay(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["run", "--case", "2", "--seed", "1", "--days", "1", "--controllers", "baseline",
                   "--out-dir", str(out), "--no-figures"])
    assert rc == 0
    run_dir = out / "case02_seed1"
    for name in ("baseline.steps.csv", "baseline.events.csv", "baseline.meta.json", "baseline.report.json"):
        assert (run_dir / name).exists(), name
    capsys.readouterr()
    assert cli.main(["replay", str(run_dir / "baseline.steps.csv")]) == 0
    printed = json.loads(capsys.readouterr().out)
    stored = json.loads((run_dir / "baseline.report.json").read_text())
    assert printed == stored
    assert replay(run_dir / "baseline.steps.csv").grid_cost == pytest.approx(stored["grid_cost"])
    assert read_ledger(run_dir / "baseline.steps.csv").n_steps == 144


def test_replay_missing(tmp_path):
    assert cli.main(["replay", str(tmp_path / "x.steps.csv")]) == 1


def test_data_dir_override(tmp_path, monkeypatch):
    from hemsim.data import BUNDLED, data_path

    (tmp_path / "house.json").write_text("{}")
    monkeypatch.setenv("HEMSIM_DATA_DIR", str(tmp_path))
    assert data_path("house.json") == tmp_path / "house.json"
    assert data_path("hvac.json") == BUNDLED / "hvac.json"
