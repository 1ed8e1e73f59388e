import numpy as np
import pytest
import yaml

from ptcor.cli import main
from ptcor.scenario import (
    ScenarioError,
    load_scenario,
    resolve_path,
    scenario_from_dict,
    scenario_to_dict,
    write_scenario,
)


@pytest.fixture()
def example1_doc():
    with resolve_path("example1_rlc").open() as fh:
        return yaml.safe_load(fh)


class TestLoadScenario:
    def test_bundled_example1(self):
        s = load_scenario("example1_rlc")
        assert s.name == "example1_rlc"
        assert s.network.n_followers == 6
        assert all(a.n == 2 and a.q == 2 for a in s.agents)
        assert s.gain_spec.psi == 8.0
        assert s.mu_schedule.T == 2.0
        assert s.sim_config.duration == 5.0
        assert np.allclose(s.x_init[0], [2.0, 2.0])
        assert np.allclose(s.x_init[5], [-6.0, 4.0])
        assert np.allclose(s.v_init, 0.0)
        assert np.allclose(s.exo.v0_init, [1.0, 1.0])

    def test_bundled_example2(self):
        with pytest.warns(UserWarning, match="neutrally stable"):
            s = load_scenario("example2_ccvsi")
        assert s.network.n_followers == 6
        b1 = 0.1 / 0.00135
        assert s.agents[0].A[0, 0] == pytest.approx(-b1, rel=1e-12)
        assert s.agents[0].B[0, 0] == pytest.approx(1.0 / 0.00135, rel=1e-12)
        assert s.mu_schedule.T == 1.0
        assert s.gain_spec.psi == 4.0
        assert s.exo.q == 4
        assert np.allclose(s.x_init, 3.0)

    def test_unknown_scenario(self):
        with pytest.raises(FileNotFoundError):
            load_scenario("does_not_exist")

    def test_wrong_shape_names_field(self, example1_doc):
        example1_doc["agents"][0]["B"] = {"shape": [2, 3], "data": [1, 2, 3, 4, 5, 6]}
        with pytest.raises(ScenarioError, match=r"agents\[0\]"):
            scenario_from_dict(example1_doc)

    def test_shape_data_mismatch(self, example1_doc):
        example1_doc["agents"][0]["A"] = {"shape": [2, 2], "data": [1, 2, 3]}
        with pytest.raises(ScenarioError, match=r"agents\[0\]\.A"):
            scenario_from_dict(example1_doc)

    def test_non_numeric_data_rejected(self, example1_doc):
        example1_doc["agents"][0]["A"]["data"] = ["x", 1, 2, 3]
        with pytest.raises(ScenarioError, match=r"agents\[0\]\.A\.data"):
            scenario_from_dict(example1_doc)

    def test_non_finite_rejected(self, example1_doc):
        example1_doc["exosystem"]["S0"]["data"][0] = float("nan")
        with pytest.raises(ScenarioError, match=r"exosystem\.S0"):
            scenario_from_dict(example1_doc)

    def test_missing_section(self, example1_doc):
        del example1_doc["mu"]
        with pytest.raises(ScenarioError, match="mu"):
            scenario_from_dict(example1_doc)

    def test_initial_condition_count(self, example1_doc):
        example1_doc["initial"]["x"] = [[1.0, 1.0]]
        with pytest.raises(ScenarioError, match=r"initial\.x"):
            scenario_from_dict(example1_doc)

    def test_errors_are_collected(self, example1_doc):
        example1_doc["agents"][0]["A"] = {"shape": [2, 2], "data": [1, 2, 3]}
        del example1_doc["mu"]
        with pytest.raises(ScenarioError) as err:
            scenario_from_dict(example1_doc)
        assert len(err.value.issues) >= 2


class TestRoundTrip:
    def test_write_then_load_is_identical(self, tmp_path):
        s = load_scenario("example1_rlc")
        path = tmp_path / "echo.yaml"
        write_scenario(s, path)
        s2 = load_scenario(path)
        assert s.equals(s2)

    def test_round_trip_example2(self, tmp_path):
        with pytest.warns(UserWarning):
            s = load_scenario("example2_ccvsi")
        path = tmp_path / "echo.yaml"
        write_scenario(s, path)
        with pytest.warns(UserWarning):
            s2 = load_scenario(path)
        assert s.equals(s2)

    def test_dict_round_trip_preserves_gain_spec(self):
        s = load_scenario("example1_rlc")
        doc = scenario_to_dict(s)
        s2 = scenario_from_dict(doc)
        assert s.equals(s2)


class TestCli:
    def test_check_example1(self, capsys):
        rc = main(["check", "example1_rlc"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "leader-rooted spanning tree" in out
        assert "[pass]" in out
        # the bundled gains violate the observer-rate margin: warning shown
        assert "cascade: vartheta_i >= theta_i + 3/2" in out
        assert "FAIL" in out

    def test_check_example2_assumptions_pass(self, capsys):
        with pytest.warns(UserWarning, match="neutrally stable"):
            rc = main(["check", "example2_ccvsi"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "[FAIL]" not in out.split("gain conditions")[0]
        # the chosen observer rate satisfies the cascade gap exactly
        assert "cascade: vartheta_i >= theta_i + 3/2" in out

    def test_simulate_writes_csv(self, tmp_path, capsys):
        rc = main(["simulate", "example1_rlc", "--mode", "output_fb",
                   "--dt", "1e-3", "--out", str(tmp_path)])
        assert rc == 0
        csv = tmp_path / "example1_rlc_output_fb_trajectory.csv"
        assert csv.exists()
        header = csv.read_text().splitlines()[0]
        assert header.startswith("t, mu, ||e||")

    def test_certify_exit_code_tracks_settledness(self, tmp_path):
        rc = main(["certify", "example1_rlc", "--dt", "1e-3", "--out", str(tmp_path)])
        assert rc == 0
        report = (tmp_path / "example1_rlc_output_fb_report.txt").read_text()
        assert "settled: True" in report
        # an impossible tolerance cannot settle
        rc = main(["certify", "example1_rlc", "--dt", "1e-3", "--out", str(tmp_path),
                   "--tol-abs", "1e-30", "--tol-rel", "0"])
        assert rc == 3

    def test_synth_writes_explicit_gains(self, tmp_path, capsys):
        rc = main(["synth", "example1_rlc", "--out", str(tmp_path)])
        assert rc == 0
        echoed = tmp_path / "example1_rlc_synth.yaml"
        assert echoed.exists()
        s = load_scenario(echoed)
        assert s.gain_spec.K is not None
        assert np.allclose(np.asarray(s.gain_spec.K[0]), [[-9.0, -3.0], [-3.0, 3.0]])
        assert np.allclose(np.asarray(s.gain_spec.Ltil[0]),
                           [[-4.0, 4.0], [-4.0, -4.0 / 3.0]])

    def test_compare_writes_table(self, tmp_path, capsys):
        rc = main(["compare", "example1_rlc", "--dt", "2e-3",
                   "--baselines", "asymptotic", "--out", str(tmp_path)])
        assert rc == 0
        table = (tmp_path / "example1_rlc_comparison.csv").read_text().splitlines()
        assert table[0].startswith("controller")
        assert len(table) == 3  # header + ptcor + asymptotic

    def test_schema_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("name: broken\n")
        rc = main(["check", str(bad)])
        assert rc == 2
        assert "schema:" in capsys.readouterr().err

    def test_unknown_baseline_rejected(self, tmp_path, capsys):
        rc = main(["compare", "example1_rlc", "--baselines", "nope", "--out", str(tmp_path)])
        assert rc == 2
