import numpy as np
import pytest

from ptcor.analysis import (
    CertifyTolerances,
    EnvelopeParams,
    certify,
    compare_runs,
)
from ptcor.graph import observer_rate, partition_laplacian
from ptcor.scenario import Scenario, load_scenario
from ptcor.sim import SimConfig, Trajectory, compile_model, integrate


@pytest.fixture(scope="module")
def rlc_run():
    scenario = load_scenario("example1_rlc")
    model = compile_model(scenario)
    cfg = SimConfig(mode="output_fb", dt=1e-3, duration=2.5, stride=10)
    traj = integrate(scenario, cfg, model=model)
    return scenario, model, traj


def manifold_trajectory(scenario, model):
    v0 = scenario.exo.v0_init
    s = Scenario(
        name="manifold", network=scenario.network, agents=scenario.agents,
        exo=scenario.exo, gain_spec=scenario.gain_spec,
        mu_schedule=scenario.mu_schedule,
        sim_config=SimConfig(mode="output_fb", dt=1e-3, duration=2.5, stride=20),
        x_init=[model.regs[i].X @ v0 for i in range(6)],
        v_init=np.tile(v0, (6, 1)),
        xhat_init=[model.regs[i].X @ v0 for i in range(6)],
    )
    return integrate(s, model=model)


class TestCertify:
    def test_manifold_run_settles_at_zero(self, rlc_run):
        scenario, model, _ = rlc_run
        traj = manifold_trajectory(scenario, model)
        report = certify(traj, scenario.mu_schedule)
        assert report.settled
        assert report.e_at_T == 0.0
        assert report.e_post_max == 0.0

    def test_rlc_run_settles(self, rlc_run):
        scenario, model, traj = rlc_run
        rates = observer_rate(partition_laplacian(scenario.network))
        env = EnvelopeParams.from_rates(rates, model.gains.psi, scenario.exo.S0,
                                        theta=model.gains.theta_min())
        report = certify(traj, scenario.mu_schedule, envelope=env)
        assert report.settled
        assert report.envelope_violations == 0
        assert report.e_at_T <= report.threshold_at_T
        assert len(report.per_agent_e_at_T) == 6
        assert report.x_bar_envelope_constant is not None

    def test_truncated_trajectory_rejected(self, rlc_run):
        scenario, model, traj = rlc_run
        keep = traj.t <= 1.5
        short = Trajectory(
            mode=traj.mode, t=traj.t[keep], mu=traj.mu[keep], e=traj.e[keep],
            e_norm=traj.e_norm[keep], v_tilde_norm=traj.v_tilde_norm[keep],
            x_bar_norm=traj.x_bar_norm[keep], x_tilde_norm=traj.x_tilde_norm[keep],
            u_tilde_norm=traj.u_tilde_norm[keep],
            phi={k: (None if v is None else v[keep]) for k, v in traj.phi.items()},
            output_dims=traj.output_dims,
        )
        with pytest.raises(ValueError, match="horizon"):
            certify(short, scenario.mu_schedule)

    def test_report_is_pure_function_of_csv(self, tmp_path, rlc_run):
        scenario, model, traj = rlc_run
        path = tmp_path / "run.csv"
        traj.to_csv(path)
        a = certify(Trajectory.from_csv(path), scenario.mu_schedule)
        b = certify(Trajectory.from_csv(path), scenario.mu_schedule)
        assert a == b
        direct = certify(traj, scenario.mu_schedule)
        assert a.settled == direct.settled
        assert a.e_at_T == pytest.approx(direct.e_at_T, rel=1e-12, abs=1e-250)

    def test_report_text_fields(self, rlc_run):
        scenario, model, traj = rlc_run
        report = certify(traj, scenario.mu_schedule)
        text = report.to_text()
        assert "settled: True" in text
        assert "e_at_T:" in text
        assert "phi1_max:" in text

    def test_custom_tolerances(self, rlc_run):
        scenario, model, traj = rlc_run
        strict = certify(traj, scenario.mu_schedule,
                         CertifyTolerances(tol_abs=1e-30, tol_rel=0.0, post_tol=1e-30))
        assert not strict.settled


class TestCompareRuns:
    def test_single_run(self, rlc_run):
        scenario, model, traj = rlc_run
        table = compare_runs([traj], at=2.0, labels=["only"])
        assert table == [("only", pytest.approx(traj.e_norm[np.argmin(np.abs(traj.t - 2.0))]))]

    def test_identical_runs_preserve_input_order(self, rlc_run):
        scenario, model, traj = rlc_run
        table = compare_runs([traj, traj, traj], at=2.0, labels=["a", "b", "c"])
        assert [label for label, _ in table] == ["a", "b", "c"]

    def test_time_out_of_range(self, rlc_run):
        scenario, model, traj = rlc_run
        with pytest.raises(ValueError, match="no sample"):
            compare_runs([traj], at=99.0)

    def test_orders_by_error_norm(self, rlc_run):
        scenario, model, traj = rlc_run
        worse = Trajectory(
            mode="fake", t=traj.t, mu=traj.mu, e=traj.e, e_norm=traj.e_norm + 1.0,
            v_tilde_norm=traj.v_tilde_norm, x_bar_norm=traj.x_bar_norm,
            x_tilde_norm=traj.x_tilde_norm, u_tilde_norm=traj.u_tilde_norm,
            phi=traj.phi, output_dims=traj.output_dims,
        )
        table = compare_runs([worse, traj], at=2.0, labels=["worse", "good"])
        assert [label for label, _ in table] == ["good", "worse"]
