"""Lyapunov certificates and invariant checks"""

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import assume, given, settings, strategies as st

from certification import (
    CONVERGENCE,
    ILC_LOSSLESS,
    MONOTONE,
    certify_trajectory,
    check_security,
    conservation_residuals,
    lyapunov_primary,
    lyapunov_secondary,
    potential_by_quadrature,
    potential_energy,
    transient_metrics,
)
from conftest import t1_spec
from controllers import ControllerConfig, ControllerGains
from dynamics import integrate, zero_state
from errors import DimensionMismatch, ModeMismatch
from network_model import validate_network
from steady_state import find_equilibrium, segment_equilibria

angle = st.floats(min_value=-1.5, max_value=1.5)


def run(net, gains, sched, t_end, record_every=10):
    traj = integrate(zero_state(net, gains.mode), net, gains, sched, t_end,
                     record_every=record_every)
    eqs = segment_equilibria(net, gains, sched, 0.0, traj.dt)
    return traj, eqs


class TestPotential:
    def test_zero_at_equilibrium(self):
        assert potential_energy([0.3], [0.3], [5.0]) == 0.0

    def test_single_edge(self):
        value = potential_energy([math.pi / 6], [0.0], [1.0])
        assert value == pytest.approx(1.0 - math.cos(math.pi / 6))
        assert value == pytest.approx(0.133975, abs=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(angle, angle, st.floats(min_value=0.1, max_value=50.0))
    def test_matches_quadrature(self, eta, eta_star, b):
        closed = potential_energy([eta], [eta_star], [b])
        assert closed == pytest.approx(potential_by_quadrature([eta], [eta_star], [b]), abs=1e-10)


class TestLyapunov:
    def test_primary_zero_at_equilibrium(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded)
        eq = find_equilibrium(t1_loaded, gains)
        assert lyapunov_primary(eq.state, eq, t1_loaded, gains) == 0.0

    def test_primary_kinetic_term(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded)
        eq = find_equilibrium(t1_loaded, gains)
        state = eq.state.copy()
        state.omega_g = state.omega_g + 0.05
        assert lyapunov_primary(state, eq, t1_loaded, gains) == pytest.approx(0.5 * 0.05 ** 2)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5),
           st.floats(-0.5, 0.5))
    def test_primary_positive_definite(self, d_eta, d_omega, d_v1, d_v2):
        assume(max(abs(d_eta), abs(d_omega), abs(d_v1), abs(d_v2)) > 1e-3)
        net = validate_network(t1_spec(load_a2=0.2))
        gains = ControllerGains(ControllerConfig(), net)
        eq = find_equilibrium(net, gains)
        state = eq.state.copy()
        state.eta = state.eta + d_eta
        state.omega_g = state.omega_g + d_omega
        state.v = state.v + np.array([d_v1, d_v2])
        assume(np.all(np.abs(state.eta) < math.pi / 2))
        assert lyapunov_primary(state, eq, net, gains) > 0

    def test_secondary_consensus_term(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded, "secondary")
        eq = find_equilibrium(t1_loaded, gains)
        state = eq.state.copy()
        state.xi = state.xi + np.array([0.1, -0.2])
        w = lyapunov_secondary(state, eq, t1_loaded, gains)
        assert w == pytest.approx(0.5 * (0.1 ** 2 + 0.2 ** 2), rel=1e-9, abs=1e-15)

    def test_secondary_ignores_balanced_voltage_shift(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded, "secondary")
        eq = find_equilibrium(t1_loaded, gains)
        state = eq.state.copy()
        state.v = state.v + np.array([0.01, -0.01])
        assert lyapunov_secondary(state, eq, t1_loaded, gains) == pytest.approx(0.0, abs=1e-15)

    def test_mode_mismatch(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded, "secondary")
        eq = find_equilibrium(t1_loaded, gains)
        with pytest.raises(ModeMismatch):
            lyapunov_primary(eq.state, eq, t1_loaded, gains)


class TestCertificate:
    def test_primary_step_response(self, t1, gains_for, step_schedule):
        traj, eqs = run(t1, gains_for(t1), step_schedule, 20.0)
        report = certify_trajectory(traj, eqs, t1, gains_for(t1))
        assert report.passed, report.summary()
        assert report.max_increase <= 1e-9 * (1 + np.max(report.w_series))
        assert np.all(report.security_margin > 0)
        assert report.terminal_error < 1e-6

    def test_secondary_step_response(self, t1, gains_for, step_schedule):
        gains = gains_for(t1, "secondary")
        traj, eqs = run(t1, gains, step_schedule, 30.0)
        report = certify_trajectory(traj, eqs, t1, gains, tol_conv=1e-2)
        assert report.passed, report.summary()
        assert report.worst_dissipation <= 1e-6

    def test_constant_equilibrium(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded)
        eq = find_equilibrium(t1_loaded, gains)
        traj = integrate(eq.state, t1_loaded, gains, None, 2.0, record_every=20)
        report = certify_trajectory(traj, eq, t1_loaded, gains)
        assert report.passed
        assert np.max(np.abs(report.w_series)) < 1e-16

    def test_far_from_equilibrium_is_reported_not_raised(self, t1_loaded, gains_for):
        gains = gains_for(t1_loaded)
        eq = find_equilibrium(t1_loaded, gains)
        start = eq.state.copy()
        start.eta = np.array([3.0])
        traj = integrate(start, t1_loaded, gains, None, 0.5, record_every=10)
        report = certify_trajectory(traj, eq, t1_loaded, gains)
        assert report.security_margin[0] < 0
        assert not report.passed
        assert "security-margin" in report.failed_checks()

    def test_delay_skips_lyapunov(self, t1, gains_for, step_schedule):
        gains = gains_for(t1, "secondary", comm_delay=0.01)
        traj, eqs = run(t1, gains, step_schedule, 2.0)
        report = certify_trajectory(traj, eqs, t1, gains, tol_conv=1.0)
        assert report.w_series.size == 0
        assert any("delay" in note for note in report.notes)
        assert report.passed

    def test_dual_droop_has_no_certificate(self, t1, gains_for, step_schedule):
        gains = gains_for(t1, "dual-droop")
        traj, eqs = run(t1, gains, step_schedule, 2.0)
        report = certify_trajectory(traj, eqs, t1, gains, tol_conv=1.0)
        assert report.w_series.size == 0
        assert report.notes

    def test_unconverged_run_fails_terminal_check(self, t1, gains_for, step_schedule):
        traj, eqs = run(t1, gains_for(t1), step_schedule, 1.5)
        report = certify_trajectory(traj, eqs, t1, gains_for(t1))
        assert report.failed_checks() == [CONVERGENCE]
        assert MONOTONE not in report.failed_checks()

    def test_needs_one_equilibrium_per_segment(self, t1, gains_for, step_schedule):
        traj, eqs = run(t1, gains_for(t1), step_schedule, 2.0)
        with pytest.raises(DimensionMismatch):
            certify_trajectory(traj, eqs[:1], t1, gains_for(t1))

    def test_report_export(self, t1, gains_for, step_schedule, tmp_path):
        traj, eqs = run(t1, gains_for(t1), step_schedule, 20.0)
        report = certify_trajectory(traj, eqs, t1, gains_for(t1))
        frame = pd.read_csv(report.to_csv(tmp_path / "cert.csv"))
        assert list(frame.columns) == ["t", "W", "security_margin", "flow_residual",
                                       "ilc_residual"]
        assert len(frame) == len(traj)
        text = open(report.write_summary(tmp_path / "cert.txt"), encoding="utf-8").read()
        assert text.rstrip().endswith("PASS")
        assert f"[PASS] {ILC_LOSSLESS}" in text


class TestInvariants:
    def test_margin_at_rest(self, t1, gains_for):
        traj = integrate(zero_state(t1, "primary"), t1, gains_for(t1), None, 0.01)
        np.testing.assert_allclose(check_security(traj), math.pi / 2)

    def test_margin_at_sixty_degrees(self, t1, gains_for):
        start = zero_state(t1, "primary")
        start.eta = np.array([math.pi / 3])
        traj = integrate(start, t1, gains_for(t1), None, 0.01)
        assert check_security(traj)[0] == pytest.approx(math.pi / 6)

    def test_conservation(self, t1, mode, step_schedule, gains_for):
        gains = gains_for(t1, mode)
        traj = integrate(zero_state(t1, mode), t1, gains, step_schedule, 3.0, record_every=10)
        residuals = conservation_residuals(traj)
        assert np.max(residuals[:, 0]) <= 1e-12
        assert np.max(residuals[:, 1]) <= 1e-9

    def test_lossless_with_virtual_capacitance(self, t1, step_schedule, gains_for):
        gains = gains_for(t1, "secondary", c_virtual={"d1": 0.5})
        traj = integrate(zero_state(t1, "secondary"), t1, gains, step_schedule, 3.0,
                         record_every=10)
        assert np.max(conservation_residuals(traj)[:, 1]) <= 1e-9

    def test_corrupted_transfer_fails_lossless_check(self, t1, step_schedule, gains_for):
        gains = gains_for(t1)
        traj, eqs = run(t1, gains, step_schedule, 3.0)
        traj.p_x[:] = 123.0
        assert np.min(conservation_residuals(traj)[:, 1]) > 100.0
        report = certify_trajectory(traj, eqs, t1, gains)
        assert ILC_LOSSLESS in report.failed_checks()
        assert not report.passed

    def test_lost_converter_power_fails_lossless_check(self, t1, step_schedule, gains_for):
        gains = gains_for(t1)
        traj, _ = run(t1, gains, step_schedule, 3.0)
        traj.p_x[:] *= 0.99
        assert np.max(conservation_residuals(traj)[:, 1]) > 1e-4


    def test_virtual_capacitance_softens_voltage_rate(self, t1, step_schedule, gains_for):
        peaks = []
        for c_v in (0.0, 0.5):
            gains = gains_for(t1, "secondary", c_virtual={"d1": c_v})
            traj = integrate(zero_state(t1, "secondary"), t1, gains, step_schedule, 5.0)
            peaks.append(transient_metrics(traj)["peak_v_dot"])
        assert peaks[1] < peaks[0]
