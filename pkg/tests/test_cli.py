import json
import math
import os

from mcdesign import cli


def test_catalog_has_the_fourteen_scenarios():
    expected = {"fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "transparency",
                "bsec_tails", "resonance_widths", "resonance_tunneling",
                "leftright_asymmetry", "susy_flip", "gap_creation",
                "level_splitting"}
    assert set(cli.BUNDLED) == expected
    assert len(cli.BUNDLED) == 14


def test_every_bundled_config_validates():
    for name in cli.BUNDLED:
        cfg = cli.load_config(name)
        assert cfg["name"] == name
        assert cfg["scenario"] in cli.scenarios.SCENARIOS


def test_fig4_config_carries_the_degenerate_weights():
    cfg = cli.load_config("fig4")
    assert cfg["params"]["second_weights"][0] == 1.01


def test_list_command_prints_names(capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 14


def test_validate_rejects_bad_schema(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 2, "name": "x", "scenario": "fig1"}))
    assert cli.main(["validate", str(bad)]) == 2
    bad.write_text(json.dumps({"schema": 1, "name": "x", "scenario": "nope"}))
    assert cli.main(["validate", str(bad)]) == 2
    bad.write_text("{not json")
    assert cli.main(["validate", str(bad)]) == 2
    bad.write_text(json.dumps({"schema": 1, "name": "x", "scenario": "fig6",
                               "assertions": [{"name": "a", "metric": "m",
                                               "op": "~", "value": 1}]}))
    assert cli.main(["validate", str(bad)]) == 2


def test_unknown_reference_is_a_config_error(capsys):
    assert cli.main(["validate", "no_such_scenario"]) == 2


def test_identity_transform_emits_zero_change(tmp_path):
    config = {
        "schema": 1,
        "name": "identity",
        "scenario": "fig1",
        "params": {"width": math.pi, "wall_height": 1.0e6, "swv_ratio": 1.0,
                   "energy_lift": 0.8, "levels": 2},
        "assertions": [
            {"name": "no potential change", "metric": "rake_dv_abs_max",
             "op": "<=", "value": 1e-12},
            {"name": "levels untouched", "metric": "rake_level_shift_max",
             "op": "<=", "value": 1e-9},
        ],
    }
    path = tmp_path / "identity.json"
    path.write_text(json.dumps(config))
    code, manifest = cli.run_scenario(cli.load_config(str(path)),
                                      str(tmp_path / "out"))
    assert code == 0
    csv_path = tmp_path / "out" / "identity_profiles.csv"
    lines = csv_path.read_text().strip().splitlines()
    header = lines[0].split(",")
    i_dv = header.index("dV_rake")
    assert all(float(row.split(",")[i_dv]) == 0.0 for row in lines[1:])


def test_run_reports_assertion_failure_with_exit_4(tmp_path):
    cfg = cli.load_config("fig6")
    cfg["assertions"] = [{"name": "impossible", "metric": "monodromy_agreement",
                          "op": "<=", "value": 0.0}]
    code, manifest = cli.run_scenario(cfg, str(tmp_path / "out"))
    assert code == 4
    assert manifest["assertions"][0]["passed"] is False
    assert manifest["passed"] is False


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = {
        "schema": 1,
        "name": "degenerate",
        "scenario": "fig4",
        "params": {"energy": -0.5, "second_weights": [1.0]},   # dependent pair
        "assertions": [],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["run", str(path), str(tmp_path / "out")]) == 3


def test_manifest_covers_every_assertion(tmp_path):
    cfg = cli.load_config("fig6")
    code, manifest = cli.run_scenario(cfg, str(tmp_path / "out"))
    assert code == 0
    assert len(manifest["assertions"]) == len(cfg["assertions"])
    for entry in manifest["assertions"]:
        assert {"name", "metric", "op", "value", "measured", "passed"} <= set(entry)
    files = os.listdir(tmp_path / "out")
    assert "fig6_manifest.json" in files
    assert any(f.endswith(".csv") for f in files)


def test_runs_are_byte_identical(tmp_path):
    cfg = cli.load_config("fig6")
    cli.run_scenario(cfg, str(tmp_path / "a"))
    cli.run_scenario(cfg, str(tmp_path / "b"))
    fa = (tmp_path / "a" / "fig6_bands.csv").read_bytes()
    fb = (tmp_path / "b" / "fig6_bands.csv").read_bytes()
    assert fa == fb


def test_grid_step_override_reaches_the_solver(tmp_path):
    cfg = cli.load_config("level_splitting")
    code, manifest = cli.run_scenario(cfg, str(tmp_path / "out"),
                                      {"grid_step": 2e-3})
    assert code == 0
    assert manifest["overrides"]["grid_step"] == 2e-3


def test_exported_configs_match_the_bundled_catalog():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name, cfg in cli.BUNDLED.items():
        path = os.path.join(root, f"{name}.json")
        assert os.path.exists(path), f"configs/{name}.json missing"
        with open(path) as fh:
            assert json.load(fh) == json.loads(json.dumps(cfg))
