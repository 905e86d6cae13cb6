"""SI <-> per-unit conversion"""

import math

import pytest
from hypothesis import given, strategies as st

from errors import ConfigError
from units import PerUnitBases

BASES = PerUnitBases(s_base_va=4e6, v_dc_base_v=6000.0, v_ac_base_v=13.8e3, f_base_hz=50.0)

positive = st.floats(min_value=1e-6, max_value=1e9, allow_nan=False, allow_infinity=False)


def test_bases_must_be_positive():
    with pytest.raises(ConfigError):
        PerUnitBases(s_base_va=0.0, v_dc_base_v=6000.0)
    with pytest.raises(ConfigError):
        PerUnitBases(s_base_va=4e6, v_dc_base_v=6000.0, f_base_hz=-50.0)


def test_derived_bases():
    assert BASES.omega_base == pytest.approx(100 * math.pi)
    assert BASES.z_dc_base == pytest.approx(9.0)
    assert BASES.z_ac_base == pytest.approx(13.8e3 ** 2 / 4e6)


@pytest.mark.parametrize("to_pu,from_pu,si,expected", [
    ("power_to_pu", "power_from_pu", 3.6e6, 0.9),
    ("dc_voltage_to_pu", "dc_voltage_from_pu", 6000.0, 1.0),
    ("capacitance_to_pu", "capacitance_from_pu", 10e-3, 0.09),
    ("conductance_to_pu", "conductance_from_pu", 100.0, 900.0),
    ("ilc_ratio_to_pu", "ilc_ratio_from_pu", 0.002, 12.0),
    ("dc_droop_to_pu", "dc_droop_from_pu", 10e3, 15.0),
    ("ac_droop_to_pu", "ac_droop_from_pu", 2e6, 0.5),
    ("inertia_to_m", "inertia_from_m", 1.0, 2.0 / (100 * math.pi)),
])
def test_rated_values(to_pu, from_pu, si, expected):
    pu = getattr(BASES, to_pu)(si)
    assert pu == pytest.approx(expected, rel=1e-12)
    assert getattr(BASES, from_pu)(pu) == pytest.approx(si, rel=1e-12)


@given(positive)
def test_roundtrip(value):
    for to_pu, from_pu in (("power_to_pu", "power_from_pu"),
                           ("capacitance_to_pu", "capacitance_from_pu"),
                           ("reactance_to_pu", "reactance_from_pu"),
                           ("ilc_ratio_to_pu", "ilc_ratio_from_pu"),
                           ("inertia_to_m", "inertia_from_m")):
        back = getattr(BASES, from_pu)(getattr(BASES, to_pu)(value))
        assert back == pytest.approx(value, rel=1e-12)


def test_resistive_loads():
    # 60 ohm at rated DC voltage draws 600 kW
    assert BASES.dc_load_to_pu(60.0) == pytest.approx(0.15)
    assert BASES.ac_load_to_pu(60.0) == pytest.approx(13.8e3 ** 2 / 60.0 / 4e6)


def test_line_parameters():
    assert BASES.resistance_to_conductance_pu(0.01) == pytest.approx(900.0)
    x = BASES.reactance_to_pu(BASES.omega_base * 0.1e-3)
    assert x == pytest.approx(6.5986e-4, rel=1e-4)
    assert BASES.susceptance_from_reactance_pu(0.04 + x) == pytest.approx(24.594282, rel=1e-6)


@pytest.mark.parametrize("method", ["resistance_to_conductance_pu",
                                    "susceptance_from_reactance_pu"])
def test_nonpositive_impedance(method):
    with pytest.raises(ConfigError):
        getattr(BASES, method)(0.0)
