"""Controller laws"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import t1_spec
from controllers import (
    ControllerConfig,
    ControllerGains,
    comm_virtual_frequency,
    consensus_rhs,
    droop_generation,
    dual_droop_power,
    generation_by_bus,
    ilc_primary_frequency,
    nominal_dispatch,
    secondary_generation,
    virtual_frequency,
    weighted_average_voltage,
)
from errors import ConfigError, DimensionMismatch, ModeMismatch, UnknownSubsystem
from network_model import DC, DC_LINE, Bus, Line, NetworkSpec, validate_network
from units import PerUnitBases

finite = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


def dc_pair(c1, c2):
    spec = NetworkSpec(
        buses=[Bus("d1", DC, "dc", capacitance=c1), Bus("d2", DC, "dc", capacitance=c2)],
        lines=[Line("d1", "d2", DC_LINE, conductance=1.0)],
        converters=[],
    )
    return validate_network(spec)


class TestGains:
    def test_unknown_mode(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(mode="tertiary"), t1)

    def test_m_must_be_positive(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(m=0.0), t1)

    def test_converter_ratio_must_match_global_m(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(m=2.0), t1)

    def test_nominal_dispatch_must_follow_costs(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(p_g_nom={"a1": 0.1, "d1": 0.3}), t1)

    def test_nominal_dispatch_at_zero_cost_bus(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(p_g_nom={"d2": 0.1}), t1)

    def test_virtual_capacitance_only_at_sources(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(mode="secondary", c_virtual={"d2": 0.5}), t1)

    def test_t_xi_outside_comm_graph(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(mode="secondary", t_xi={"d2": 1.0}), t1)

    def test_negative_delay(self, t1):
        with pytest.raises(ConfigError):
            ControllerGains(ControllerConfig(comm_delay=-0.1), t1)

    def test_nominal_dispatch_helper(self, t1):
        p_nom = nominal_dispatch(t1, 0.4)
        assert p_nom == pytest.approx({"a1": 0.2, "d1": 0.2})
        ControllerGains(ControllerConfig(p_g_nom=p_nom), t1)


class TestDroop:
    def test_nominal_point(self, t1):
        gains = ControllerGains(ControllerConfig(p_g_nom={"a1": 0.1, "d1": 0.1}), t1)
        p_gen, p_dc = droop_generation(np.zeros(1), np.zeros(2), gains)
        np.testing.assert_allclose(p_gen, [0.1])
        np.testing.assert_allclose(p_dc, [0.1, 0.0])

    def test_dc_source_responds_to_voltage_dip(self, t1, gains_for):
        _, p_dc = droop_generation(np.zeros(1), np.array([-0.05, 0.0]), gains_for(t1))
        assert p_dc[0] == pytest.approx(0.05)
        assert p_dc[1] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(finite, finite, finite, st.floats(min_value=-0.1, max_value=0.1))
    def test_affine_gradient(self, omega, v1, v2, delta):
        gains = ControllerGains(ControllerConfig(mode="primary"), validate_network(t1_spec(q_dc=2.0)))
        base_g, base_d = droop_generation(np.array([omega]), np.array([v1, v2]), gains)
        step_g, step_d = droop_generation(np.array([omega + delta]), np.array([v1 + delta, v2]), gains)
        assert step_g[0] - base_g[0] == pytest.approx(-1.0 * delta, abs=1e-12)
        assert step_d[0] - base_d[0] == pytest.approx(-2.0 * gains.m * delta, abs=1e-12)
        assert step_d[1] == base_d[1] == 0.0

    def test_not_defined_in_secondary(self, t1, gains_for):
        with pytest.raises(ModeMismatch):
            droop_generation(np.zeros(1), np.zeros(2), gains_for(t1, "secondary"))


class TestInterlinkingConverter:
    def test_zero_voltage(self):
        assert ilc_primary_frequency(0.0, 1.0) == 0.0

    def test_unit_ratio(self):
        assert ilc_primary_frequency(-0.0667, 1.0) == pytest.approx(-0.0667)

    def test_rated_ratio(self):
        # 0.002 rad/s per volt at one volt of deviation
        assert ilc_primary_frequency(1.0, 0.002) == pytest.approx(0.002)
        pu = PerUnitBases(4e6, 6000.0)
        assert ilc_primary_frequency(pu.dc_voltage_to_pu(1.0), pu.ilc_ratio_to_pu(0.002)) \
            == pytest.approx(0.002)

    def test_dual_droop_zero(self):
        assert dual_droop_power(0.0, 0.0, 1.0, 1.0) == 0.0

    def test_dual_droop_cancellation(self):
        assert dual_droop_power(0.1, 0.05, 2.0, 4.0) == pytest.approx(0.0)

    def test_dual_droop_imports_on_low_frequency(self):
        pu = PerUnitBases(4e6, 6000.0)
        k_omega = pu.ac_droop_to_pu(2e6)
        k_v = pu.dc_droop_to_pu(4e3)
        assert dual_droop_power(-0.01, 0.0, k_omega, k_v) < 0


class TestAverageVoltage:
    def test_zero(self):
        assert weighted_average_voltage(np.zeros(2), dc_pair(0.1, 0.1), "dc") == 0.0

    def test_symmetric_cancellation(self):
        v = np.array([0.02, -0.02])
        assert weighted_average_voltage(v, dc_pair(0.1, 0.1), "dc") == pytest.approx(0.0)

    def test_weighted(self):
        v = np.array([0.01, 0.03])
        assert weighted_average_voltage(v, dc_pair(0.3, 0.1), "dc") == pytest.approx(0.006)

    def test_vector_over_subsystems(self, t1):
        np.testing.assert_allclose(weighted_average_voltage(np.array([0.02, 0.04]), t1), [0.03])

    def test_unknown_subsystem(self, t1):
        with pytest.raises(UnknownSubsystem):
            weighted_average_voltage(np.zeros(2), t1, "ac")


class TestVirtualFrequency:
    def test_nominal(self, t1):
        out = virtual_frequency(np.zeros(2), np.zeros(1), 1.0, t1)
        assert out == {"a1": 0.0, "a2": 0.0, "d1": 0.0, "d2": 0.0}

    def test_broadcast_over_dc_subsystem(self, t1):
        out = virtual_frequency(np.array([0.01, 0.02]), np.array([0.01]), 1.0, t1)
        assert out["a1"] == 0.01
        assert out["a2"] == 0.02
        assert out["d1"] == out["d2"] == pytest.approx(0.01)

    def test_restricted_to_comm_nodes(self, t1, gains_for):
        gains = gains_for(t1, "secondary")
        np.testing.assert_allclose(
            comm_virtual_frequency(np.array([0.01, 0.02]), np.array([0.5]), gains), [0.01, 0.5])


class TestConsensus:
    def test_fixed_point(self, t1, gains_for):
        gains = gains_for(t1, "secondary")
        np.testing.assert_allclose(consensus_rhs(np.full(2, 0.3), np.zeros(2), gains), 0.0)

    def test_single_edge(self, t1, gains_for):
        gains = gains_for(t1, "secondary")
        np.testing.assert_allclose(consensus_rhs(np.array([1.0, 0.0]), np.zeros(2), gains),
                                   [-1.0, 1.0])

    @settings(max_examples=40, deadline=None)
    @given(st.tuples(finite, finite), st.tuples(finite, finite),
           st.floats(min_value=0.1, max_value=5.0))
    def test_weighted_sum_is_conserved(self, xi, omega_hat, t_a1):
        net = validate_network(t1_spec(q_dc=3.0))
        gains = ControllerGains(ControllerConfig(mode="secondary", t_xi={"a1": t_a1}), net)
        xi_dot = consensus_rhs(np.array(xi), np.array(omega_hat), gains)
        lhs = float(gains.t_xi @ xi_dot)
        rhs = -float(gains.q_comm @ np.array(omega_hat))
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_delayed_neighbours(self, t1, gains_for):
        gains = gains_for(t1, "secondary")
        xi = np.array([1.0, 0.0])
        np.testing.assert_allclose(
            consensus_rhs(xi, np.zeros(2), gains, xi_remote=xi),
            consensus_rhs(xi, np.zeros(2), gains))
        # neighbour still seen at its old value
        np.testing.assert_allclose(
            consensus_rhs(xi, np.zeros(2), gains, xi_remote=np.array([1.0, 1.0])), [0.0, 1.0])

    def test_dimension_check(self, t1, gains_for):
        with pytest.raises(DimensionMismatch):
            consensus_rhs(np.zeros(3), np.zeros(3), gains_for(t1, "secondary"))

    def test_memoryless(self, t1, gains_for):
        gains = gains_for(t1, "secondary")
        xi, w = np.array([0.2, -0.1]), np.array([0.01, 0.03])
        np.testing.assert_array_equal(consensus_rhs(xi, w, gains), consensus_rhs(xi, w, gains))


class TestSecondaryGeneration:
    def test_zero(self, t1, gains_for):
        p_gen, p_dc = secondary_generation(np.zeros(2), np.zeros(2), gains_for(t1, "secondary"))
        np.testing.assert_array_equal(p_gen, [0.0])
        np.testing.assert_array_equal(p_dc, [0.0, 0.0])

    def test_inverse_cost_scaling(self):
        net = validate_network(t1_spec(q_ac=2.0, q_dc=3.0))
        gains = ControllerGains(ControllerConfig(mode="secondary"), net)
        p_gen, p_dc = secondary_generation(np.ones(2), np.zeros(2), gains)
        np.testing.assert_allclose(p_gen, [2.0])
        np.testing.assert_allclose(p_dc, [3.0, 0.0])

    def test_virtual_capacitance_opposes_voltage_rate(self, t1):
        gains = ControllerGains(ControllerConfig(mode="secondary", c_virtual={"d1": 0.5}), t1)
        _, p_dc = secondary_generation(np.zeros(2), np.array([0.2, 0.2]), gains)
        np.testing.assert_allclose(p_dc, [-0.1, 0.0])
        _, steady = secondary_generation(np.ones(2), np.zeros(2), gains)
        np.testing.assert_allclose(steady, [1.0, 0.0])

    def test_no_generation_at_converter_bus(self, t1):
        by_bus = generation_by_bus(t1, np.array([0.3]), np.array([0.1, 0.0]))
        assert by_bus == {"a1": 0.3, "a2": 0.0, "d1": 0.1, "d2": 0.0}
