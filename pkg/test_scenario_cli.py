"""Command-line runs, presets and sweeps"""

import json
from dataclasses import replace

import pandas as pd
import pytest

from errors import ConfigError, NoConvergence, NonFiniteState, SchemaError
from scenario import SCENARIO_DIR, SCHEMA_ID, load_bundled, parse_scenario
from scenario_cli import (
    EXIT_CERTIFICATE,
    EXIT_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    exit_code_for,
    main,
    run_scenario,
    run_sweep,
    subdivide_step,
)

T1 = str(SCENARIO_DIR / "t1.json")


def t1_variant(tmp_path, edit, name="variant.json"):
    doc = json.loads((SCENARIO_DIR / "t1.json").read_text(encoding="utf-8"))
    edit(doc)
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def test_subdivide_step():
    assert subdivide_step(1e-3, 1e-2) == 1
    assert subdivide_step(1e-3, float("inf")) == 1
    assert subdivide_step(0.1, 0.03) == 4


@pytest.mark.parametrize("error,code", [
    (SchemaError("sim.dt_s", "must be > 0"), EXIT_INPUT),
    (ConfigError("bad gain"), EXIT_INPUT),
    (NonFiniteState(2.5), EXIT_NUMERICAL),
    (NoConvergence(None, 1.0, 100), EXIT_NUMERICAL),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code


class TestRun:
    def test_primary_t1(self, capsys):
        assert main(["run", T1, "--mode", "primary", "--t-end", "20"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "[OK] Certificate passed" in out
        assert "omega:a1" in out

    def test_artifacts(self, tmp_path):
        out = tmp_path / "runs"
        assert main(["run", T1, "--t-end", "20", "--out", str(out)]) == EXIT_OK
        traj = pd.read_csv(out / "t1_primary_trajectory.csv")
        assert traj.columns[0] == "t"
        assert traj["t"].iloc[-1] == pytest.approx(20.0)
        cert = pd.read_csv(out / "t1_primary_certificate.csv")
        assert len(cert) == len(traj)
        eq = pd.read_csv(out / "t1_primary_equilibrium.csv")
        assert list(eq["segment"]) == [0, 1]
        text = (out / "t1_primary_summary.txt").read_text(encoding="utf-8")
        assert text.startswith("Scenario: t1 (primary)")
        assert "sharing_error" in text

    def test_unconverged_run(self):
        assert main(["run", T1, "--t-end", "1.5"]) == EXIT_CERTIFICATE

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == EXIT_INPUT
        assert "[ERROR]" in capsys.readouterr().err

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{ not json", encoding="utf-8")
        assert main(["run", str(path)]) == EXIT_INPUT

    def test_schema_violation(self, tmp_path, capsys):
        def edit(doc):
            doc["network"]["buses"][2]["c_pu_s"] = -0.5
        assert main(["run", t1_variant(tmp_path, edit)]) == EXIT_INPUT
        assert "network.buses[2].c_pu_s" in capsys.readouterr().err

    def test_infeasible_load(self, tmp_path):
        # half of the load has to cross a line rated for 10
        def edit(doc):
            doc["network"]["buses"][1]["load_pu"] = 40.0
        assert main(["run", t1_variant(tmp_path, edit), "--mode", "secondary"]) == EXIT_NUMERICAL

    @pytest.mark.slow
    def test_secondary_t1(self, capsys):
        assert main(["run", T1, "--mode", "secondary"]) == EXIT_OK
        assert "[OK] Certificate passed" in capsys.readouterr().out


class TestPreset:
    def test_to_file(self, tmp_path):
        path = tmp_path / "case.json"
        assert main(["preset", "case-study", "--mode", "secondary", "--delay",
                     "--out", str(path)]) == EXIT_OK
        scenario = parse_scenario(path)
        assert scenario.controllers.mode == "secondary"
        assert scenario.controllers.comm_delay == pytest.approx(0.2)

    def test_to_stdout(self, capsys):
        assert main(["preset", "case-study"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["schema"] == SCHEMA_ID
        assert len(doc["network"]["buses"]) == 9


class TestSweep:
    def test_resistance_sweep(self, tmp_path):
        assert main(["sweep", T1, "--param", "dc_resistance_scale", "--values", "1,0.1",
                     "--t-end", "20", "--out", str(tmp_path)]) == EXIT_OK
        table = pd.read_csv(tmp_path / "sweep_dc_resistance_scale.csv")
        assert list(table["value"]) == [1.0, 0.1]
        assert list(table["certificate"]) == ["PASS", "PASS"]
        assert table["sharing_error"].iloc[1] < table["sharing_error"].iloc[0]
        assert (tmp_path / "dc_resistance_scale=0.1" / "t1_primary_summary.txt").exists()

    def test_bad_values(self):
        assert main(["sweep", T1, "--param", "m", "--values", "1,abc"]) == EXIT_INPUT

    def test_unknown_parameter(self):
        with pytest.raises(ConfigError):
            run_sweep(load_bundled("t1"), "inertia", [1.0])

    def test_failed_point_does_not_stop_sweep(self):
        # m = 0 fails network validation
        table = run_sweep(load_bundled("t1"), "m", [0.0, 1.0])
        assert table["exit_code"].iloc[0] == EXIT_INPUT
        assert table["error"].iloc[0]

    @pytest.mark.slow
    def test_virtual_capacitance_keeps_steady_state(self):
        scenario = load_bundled("t1")
        scenario = replace(scenario, controllers=scenario.controllers.with_mode("secondary"))
        table = run_sweep(scenario, "virtual_capacitance", [0.0, 0.5], jobs=2, tol_conv=1e-4)
        assert list(table["exit_code"]) == [EXIT_OK, EXIT_OK]
        assert table["omega:a1"].abs().max() < 1e-4
        assert table["sharing_error"].max() < 1e-3


def test_run_scenario_in_process():
    scenario = load_bundled("t1")
    scenario = replace(scenario, sim=replace(scenario.sim, t_end=20.0))
    result = run_scenario(scenario, echo=False)
    assert result.exit_code == EXIT_OK
    assert result.report.passed
    assert len(result.equilibria) == 2
    assert result.summary["omega:a1"] == pytest.approx(-0.2 / (2 + 100 / 101), abs=1e-6)
    assert result.summary["sharing_error"] == pytest.approx(4.975e-3, rel=1e-2)
    assert result.artifacts == []
