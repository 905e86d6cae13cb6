"""Shared fixtures: the two-bus-per-domain network T1 and its variants"""

import pytest

from controllers import ControllerConfig, ControllerGains
from dynamics import Disturbance, DisturbanceSchedule
from network_model import (
    AC_CONVERTER,
    AC_GENERATOR,
    AC_LINE,
    DC,
    DC_LINE,
    Bus,
    Converter,
    Line,
    NetworkSpec,
    validate_network,
)


def t1_spec(g: float = 100.0, q_ac: float = 1.0, q_dc: float = 1.0,
            load_a2: float = 0.0) -> NetworkSpec:
    return NetworkSpec(
        buses=[
            Bus("a1", AC_GENERATOR, "ac", inertia=1.0, damping=1.0, q=q_ac),
            Bus("a2", AC_CONVERTER, "ac", load=load_a2),
            Bus("d1", DC, "dc", capacitance=0.5, q=q_dc),
            Bus("d2", DC, "dc", capacitance=0.5),
        ],
        lines=[
            Line("a1", "a2", AC_LINE, susceptance=10.0),
            Line("d1", "d2", DC_LINE, conductance=g),
        ],
        converters=[Converter("x1", ac_bus="a2", dc_bus="d2", ratio=1.0)],
        comm_edges=[("a1", "d1")],
    )


@pytest.fixture
def t1():
    return validate_network(t1_spec())


@pytest.fixture
def t1_loaded():
    """T1 after the 0.2 load step at the converter bus"""
    return validate_network(t1_spec(load_a2=0.2))


@pytest.fixture
def t1_asymmetric():
    """T1 with inverse costs q = (1, 3)"""
    return validate_network(t1_spec(q_ac=1.0, q_dc=3.0, load_a2=0.2))


@pytest.fixture
def step_schedule():
    return DisturbanceSchedule([Disturbance(1.0, "a2", 0.2)])


@pytest.fixture(params=["primary", "dual-droop", "secondary"])
def mode(request):
    return request.param


@pytest.fixture
def gains_for():
    def bind(net, mode="primary", **kwargs):
        return ControllerGains(ControllerConfig(mode=mode, **kwargs), net)
    return bind
