"""
Scenario documents: parsing, serialization, presets and sweep parameters

A scenario is a UTF-8 JSON document with schema id `hybridgrid-scenario/1`.
Every physical quantity carries its unit in the key name (b_pu, c_pu_s, t_s).
Unknown keys are rejected with the dotted path of the offending entry.

The optional `bases` block holds one set of bases for the whole study: a
single power base, DC voltage base and AC voltage base shared by every
subsystem. Per-subsystem bases are not supported, so networks mixing DC
voltage levels must be converted to per-unit before they are written.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from controllers import MODES, ControllerConfig, nominal_dispatch
from dynamics import DEFAULT_DT, Disturbance, DisturbanceSchedule
from errors import ParseError, SchemaError
from network_model import (
    AC_CONVERTER,
    AC_GENERATOR,
    AC_LINE,
    BUS_KINDS,
    DC,
    DC_LINE,
    Bus,
    Converter,
    Line,
    NetworkSpec,
    scale_dc_resistance,
    validate_network,
)
from units import PerUnitBases

logger = logging.getLogger(__name__)

SCHEMA_ID = "hybridgrid-scenario/1"
START_EQUILIBRIUM = "equilibrium"
START_ZERO = "zero"
OUTPUT_KINDS = ("trajectory", "certificate", "summary", "equilibrium")
SWEEP_PARAMETERS = ("dc_resistance_scale", "comm_delay", "m", "virtual_capacitance")

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


@dataclass(frozen=True)
class SimSettings:
    t_end: float
    dt: float = DEFAULT_DT
    record_every: int = 1
    start: str = START_EQUILIBRIUM


@dataclass
class Scenario:
    name: str
    network: NetworkSpec
    controllers: ControllerConfig
    disturbances: DisturbanceSchedule
    sim: SimSettings
    bases: Optional[PerUnitBases] = None
    outputs: Tuple[str, ...] = OUTPUT_KINDS


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------

def _object(value: Any, path: str) -> Dict[str, Any]:
    if not isinstance(value, dict):
        raise SchemaError(path, "expected an object")
    return value


def _array(value: Any, path: str) -> List[Any]:
    if not isinstance(value, list):
        raise SchemaError(path, "expected an array")
    return value


def _keys(obj: Dict[str, Any], path: str, required: Sequence[str], optional: Sequence[str] = ()):
    for key in obj:
        if key not in required and key not in optional:
            raise SchemaError(f"{path}.{key}", "unknown key")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{path}.{key}", "missing required key")


def _number(obj: Dict[str, Any], key: str, path: str, default: Any = None,
            positive: bool = False, nonnegative: bool = False) -> Optional[float]:
    if key not in obj:
        return default
    value = obj[key]
    where = f"{path}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(where, "expected a finite number")
    if positive and not value > 0:
        raise SchemaError(where, "must be > 0")
    if nonnegative and value < 0:
        raise SchemaError(where, "must be >= 0")
    return float(value)


def _integer(obj: Dict[str, Any], key: str, path: str, default: int, minimum: int) -> int:
    if key not in obj:
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SchemaError(f"{path}.{key}", f"expected an integer >= {minimum}")
    return value


def _string(obj: Dict[str, Any], key: str, path: str, choices: Sequence[str] = (),
            default: Optional[str] = None) -> Optional[str]:
    if key not in obj:
        return default
    value = obj[key]
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{path}.{key}", "expected a non-empty string")
    if choices and value not in choices:
        raise SchemaError(f"{path}.{key}", f"must be one of {', '.join(choices)}")
    return value


def _number_map(obj: Dict[str, Any], key: str, path: str, known: Sequence[str],
                nonnegative: bool = False, positive: bool = False) -> Dict[str, float]:
    if key not in obj:
        return {}
    mapping = _object(obj[key], f"{path}.{key}")
    out = {}
    for name in mapping:
        if name not in known:
            raise SchemaError(f"{path}.{key}.{name}", "unknown element id")
        out[name] = _number(mapping, name, f"{path}.{key}",
                            nonnegative=nonnegative, positive=positive)
    return out


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

def _parse_bus(obj: Any, path: str) -> Bus:
    obj = _object(obj, path)
    kind = _string(obj, "kind", path, BUS_KINDS)
    common = ["id", "kind", "subsystem"]
    optional = ["q_pu", "load_pu", "units"]
    if kind == AC_GENERATOR:
        _keys(obj, path, common + ["inertia_pu_s2", "damping_pu_s"], optional)
    elif kind == DC:
        _keys(obj, path, common + ["c_pu_s"], optional)
    else:
        _keys(obj, path, common, optional)
    return Bus(
        id=_string(obj, "id", path),
        kind=kind,
        subsystem=_string(obj, "subsystem", path),
        inertia=_number(obj, "inertia_pu_s2", path, positive=True),
        damping=_number(obj, "damping_pu_s", path, nonnegative=True),
        capacitance=_number(obj, "c_pu_s", path, positive=True),
        q=_number(obj, "q_pu", path, default=0.0, nonnegative=True),
        load=_number(obj, "load_pu", path, default=0.0),
        units=_integer(obj, "units", path, default=1, minimum=1),
    )


def _parse_line(obj: Any, path: str) -> Line:
    obj = _object(obj, path)
    kind = _string(obj, "kind", path, (AC_LINE, DC_LINE))
    value_key = "b_pu" if kind == AC_LINE else "g_pu"
    _keys(obj, path, ["from", "to", "kind", value_key], ["name"])
    value = _number(obj, value_key, path, positive=True)
    return Line(
        from_bus=_string(obj, "from", path),
        to_bus=_string(obj, "to", path),
        kind=kind,
        susceptance=value if kind == AC_LINE else None,
        conductance=value if kind == DC_LINE else None,
        name=_string(obj, "name", path),
    )


def _parse_converter(obj: Any, path: str) -> Converter:
    obj = _object(obj, path)
    _keys(obj, path, ["id", "ac_bus", "dc_bus"], ["m_rad_s_per_pu"])
    return Converter(
        id=_string(obj, "id", path),
        ac_bus=_string(obj, "ac_bus", path),
        dc_bus=_string(obj, "dc_bus", path),
        ratio=_number(obj, "m_rad_s_per_pu", path, positive=True),
    )


def _parse_network(obj: Any, path: str = "network") -> NetworkSpec:
    obj = _object(obj, path)
    _keys(obj, path, ["buses", "lines", "converters"], ["comm_edges"])
    buses = [_parse_bus(b, f"{path}.buses[{k}]")
             for k, b in enumerate(_array(obj["buses"], f"{path}.buses"))]
    lines = [_parse_line(l, f"{path}.lines[{k}]")
             for k, l in enumerate(_array(obj["lines"], f"{path}.lines"))]
    converters = [_parse_converter(c, f"{path}.converters[{k}]")
                  for k, c in enumerate(_array(obj["converters"], f"{path}.converters"))]
    edges = []
    for k, edge in enumerate(_array(obj.get("comm_edges", []), f"{path}.comm_edges")):
        if (not isinstance(edge, list) or len(edge) != 2
                or not all(isinstance(e, str) for e in edge)):
            raise SchemaError(f"{path}.comm_edges[{k}]", "expected a pair of bus ids")
        edges.append((edge[0], edge[1]))
    return NetworkSpec(buses=buses, lines=lines, converters=converters, comm_edges=edges)


def _parse_controllers(obj: Any, network: NetworkSpec, path: str = "controllers") -> ControllerConfig:
    obj = _object(obj, path)
    _keys(obj, path, ["mode"], [
        "m_rad_s_per_pu", "p_g_nom_pu", "k_omega_pu_s", "k_v_pu", "t_xi_s", "c_virtual_pu_s",
        "k_omega_default_pu_s", "k_v_default_pu", "t_xi_default_s", "m_eps_pu_s2",
        "comm_delay_s",
    ])
    bus_ids = [b.id for b in network.buses]
    conv_ids = [c.id for c in network.converters]
    defaults = ControllerConfig()
    return ControllerConfig(
        mode=_string(obj, "mode", path, MODES),
        m=_number(obj, "m_rad_s_per_pu", path, default=defaults.m, positive=True),
        p_g_nom=_number_map(obj, "p_g_nom_pu", path, bus_ids),
        k_omega=_number_map(obj, "k_omega_pu_s", path, conv_ids, nonnegative=True),
        k_v=_number_map(obj, "k_v_pu", path, conv_ids, nonnegative=True),
        t_xi=_number_map(obj, "t_xi_s", path, bus_ids, positive=True),
        c_virtual=_number_map(obj, "c_virtual_pu_s", path, bus_ids, nonnegative=True),
        k_omega_default=_number(obj, "k_omega_default_pu_s", path,
                                default=defaults.k_omega_default, nonnegative=True),
        k_v_default=_number(obj, "k_v_default_pu", path,
                            default=defaults.k_v_default, nonnegative=True),
        t_xi_default=_number(obj, "t_xi_default_s", path,
                             default=defaults.t_xi_default, positive=True),
        m_eps=_number(obj, "m_eps_pu_s2", path, default=defaults.m_eps, positive=True),
        comm_delay=_number(obj, "comm_delay_s", path, default=0.0, nonnegative=True),
    )


def _parse_disturbances(obj: Any, network: NetworkSpec,
                        path: str = "disturbances") -> DisturbanceSchedule:
    bus_ids = {b.id for b in network.buses}
    steps = []
    for k, item in enumerate(_array(obj, path)):
        where = f"{path}[{k}]"
        item = _object(item, where)
        _keys(item, where, ["t_s", "bus", "delta_pu"])
        bus = _string(item, "bus", where)
        if bus not in bus_ids:
            raise SchemaError(f"{where}.bus", f"unknown bus '{bus}'")
        steps.append(Disturbance(time=_number(item, "t_s", where, nonnegative=True),
                                 bus=bus, delta=_number(item, "delta_pu", where)))
    if any(b.time < a.time for a, b in zip(steps, steps[1:])):
        raise SchemaError(path, "disturbance times must be nondecreasing")
    return DisturbanceSchedule(steps)


def _parse_sim(obj: Any, path: str = "sim") -> SimSettings:
    obj = _object(obj, path)
    _keys(obj, path, ["t_end_s"], ["dt_s", "record_every", "start"])
    return SimSettings(
        t_end=_number(obj, "t_end_s", path, positive=True),
        dt=_number(obj, "dt_s", path, default=DEFAULT_DT, positive=True),
        record_every=_integer(obj, "record_every", path, default=1, minimum=1),
        start=_string(obj, "start", path, (START_EQUILIBRIUM, START_ZERO),
                      default=START_EQUILIBRIUM),
    )


def _parse_bases(obj: Any, path: str = "bases") -> PerUnitBases:
    """Study-wide bases, shared by every AC and DC subsystem"""
    obj = _object(obj, path)
    _keys(obj, path, ["s_base_va", "v_dc_base_v"], ["v_ac_base_v", "f_base_hz"])
    return PerUnitBases(
        s_base_va=_number(obj, "s_base_va", path, positive=True),
        v_dc_base_v=_number(obj, "v_dc_base_v", path, positive=True),
        v_ac_base_v=_number(obj, "v_ac_base_v", path, default=1.0, positive=True),
        f_base_hz=_number(obj, "f_base_hz", path, default=50.0, positive=True),
    )


def scenario_from_dict(doc: Any) -> Scenario:
    """Build a Scenario from an already decoded document"""
    doc = _object(doc, "$")
    _keys(doc, "$", ["schema", "network", "controllers", "sim"],
          ["name", "disturbances", "bases", "outputs"])
    if doc["schema"] != SCHEMA_ID:
        raise SchemaError("schema", f"expected '{SCHEMA_ID}'")
    network = _parse_network(doc["network"])
    outputs = tuple(_array(doc.get("outputs", list(OUTPUT_KINDS)), "outputs"))
    for k, target in enumerate(outputs):
        if target not in OUTPUT_KINDS:
            raise SchemaError(f"outputs[{k}]", f"must be one of {', '.join(OUTPUT_KINDS)}")
    return Scenario(
        name=_string(doc, "name", "$", default="scenario"),
        network=network,
        controllers=_parse_controllers(doc["controllers"], network),
        disturbances=_parse_disturbances(doc.get("disturbances", []), network),
        sim=_parse_sim(doc["sim"]),
        bases=_parse_bases(doc["bases"]) if "bases" in doc else None,
        outputs=outputs,
    )


def parse_scenario(path) -> Scenario:
    """
    Read and check a scenario document

    Raises:
        ParseError: malformed JSON (with line number)
        SchemaError: schema violation (with document path)
        NetworkError: the network fails validation
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.lineno, e.msg) from e
    scenario = scenario_from_dict(doc)
    validate_network(scenario.network)
    logger.debug("parsed scenario '%s' from %s", scenario.name, path)
    return scenario


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _drop_none(d: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in d.items() if v is not None}


def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    net, cfg, sim = scenario.network, scenario.controllers, scenario.sim
    buses = []
    for b in net.buses:
        buses.append(_drop_none({
            "id": b.id, "kind": b.kind, "subsystem": b.subsystem,
            "inertia_pu_s2": b.inertia, "damping_pu_s": b.damping, "c_pu_s": b.capacitance,
            "q_pu": b.q, "load_pu": b.load, "units": b.units,
        }))
    lines = []
    for l in net.lines:
        entry = {"from": l.from_bus, "to": l.to_bus, "kind": l.kind}
        if l.kind == AC_LINE:
            entry["b_pu"] = l.susceptance
        else:
            entry["g_pu"] = l.conductance
        if l.name is not None:
            entry["name"] = l.name
        lines.append(entry)
    converters = [_drop_none({"id": c.id, "ac_bus": c.ac_bus, "dc_bus": c.dc_bus,
                              "m_rad_s_per_pu": c.ratio}) for c in net.converters]
    doc = {
        "schema": SCHEMA_ID,
        "name": scenario.name,
        "network": {
            "buses": buses,
            "lines": lines,
            "converters": converters,
            "comm_edges": [list(e) for e in net.comm_edges],
        },
        "controllers": {
            "mode": cfg.mode,
            "m_rad_s_per_pu": cfg.m,
            "p_g_nom_pu": dict(cfg.p_g_nom),
            "k_omega_pu_s": dict(cfg.k_omega),
            "k_v_pu": dict(cfg.k_v),
            "t_xi_s": dict(cfg.t_xi),
            "c_virtual_pu_s": dict(cfg.c_virtual),
            "k_omega_default_pu_s": cfg.k_omega_default,
            "k_v_default_pu": cfg.k_v_default,
            "t_xi_default_s": cfg.t_xi_default,
            "m_eps_pu_s2": cfg.m_eps,
            "comm_delay_s": cfg.comm_delay,
        },
        "disturbances": [{"t_s": s.time, "bus": s.bus, "delta_pu": s.delta}
                         for s in scenario.disturbances.steps],
        "sim": {"t_end_s": sim.t_end, "dt_s": sim.dt, "record_every": sim.record_every,
                "start": sim.start},
        "outputs": list(scenario.outputs),
    }
    if scenario.bases is not None:
        bases = scenario.bases
        doc["bases"] = {"s_base_va": bases.s_base_va, "v_dc_base_v": bases.v_dc_base_v,
                        "v_ac_base_v": bases.v_ac_base_v, "f_base_hz": bases.f_base_hz}
    return doc


def dump_scenario(scenario: Scenario, path=None) -> str:
    """Serialize to JSON text; also write it to `path` when given"""
    text = json.dumps(scenario_to_dict(scenario), indent=2, ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_bundled(name: str) -> Scenario:
    """Load one of the scenario files shipped in scenarios/"""
    return parse_scenario(SCENARIO_DIR / f"{name}.json")


# ---------------------------------------------------------------------------
# Sweep parameters
# ---------------------------------------------------------------------------

def apply_parameter(scenario: Scenario, name: str, value: float) -> Scenario:
    """
    Copy of `scenario` with one sweep parameter set

    dc_resistance_scale  - every DC resistance scaled (G <- G / value)
    comm_delay           - communication delay in seconds
    m                    - ILC ratio, applied globally and to every converter
    virtual_capacitance  - C^V at every DC source bus
    """
    if name == "dc_resistance_scale":
        return replace(scenario, network=scale_dc_resistance(scenario.network, value))
    if name == "comm_delay":
        return replace(scenario, controllers=replace(scenario.controllers, comm_delay=value))
    if name == "m":
        converters = tuple(replace(c, ratio=None if c.ratio is None else value)
                           for c in scenario.network.converters)
        return replace(scenario,
                       network=replace(scenario.network, converters=converters),
                       controllers=replace(scenario.controllers, m=value))
    if name == "virtual_capacitance":
        sources = {b.id: value for b in scenario.network.buses if b.kind == DC and b.q > 0}
        return replace(scenario, controllers=replace(scenario.controllers, c_virtual=sources))
    raise SchemaError("param", f"unknown sweep parameter '{name}' "
                               f"(expected one of {', '.join(SWEEP_PARAMETERS)})")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

CASE_STUDY_BASES = PerUnitBases(s_base_va=4e6, v_dc_base_v=6000.0, v_ac_base_v=13.8e3,
                                f_base_hz=50.0)
# inside the RK4 stability bound of the DC lines (about 9e-5 s)
CASE_STUDY_DT = 8e-5
# consensus fast enough for the secondary run to settle between load steps
CASE_STUDY_T_XI = 0.2


def preset_case_study(delay: bool = False, mode: str = "primary") -> Scenario:
    """
    Two DC subsystems joined through one AC subsystem, in per-unit

    DC buses 1-3 and 7-9 (sources at 1, 3, 7, 9 with two units each), AC
    generator bus 5 between converter buses 4 and 6. Converter DC sides at 3
    and 7 carry the bus capacitance plus the converter capacitance. A 3.6 MW
    load switches on at bus 3 at t = 1 s and off at bus 7 at t = 13 s.
    """
    pu = CASE_STUDY_BASES
    c_bus = pu.capacitance_to_pu(10e-3)
    c_conv = pu.capacitance_to_pu(10e-3 + 300e-3)
    g_line = pu.resistance_to_conductance_pu(0.01)
    x_line = pu.reactance_to_pu(pu.omega_base * 0.1e-3)
    b_line = pu.susceptance_from_reactance_pu(0.04 + x_line)
    m = pu.ilc_ratio_to_pu(0.002)
    q_unit = pu.dc_droop_to_pu(10e3) / m
    dc_load = pu.dc_load_to_pu(60.0)
    ac_load = pu.ac_load_to_pu(60.0)
    switched = pu.power_to_pu(3.6e6)

    def dc_bus(k, sub, cap, units):
        return Bus(id=str(k), kind=DC, subsystem=sub, capacitance=cap,
                   q=q_unit * units, load=dc_load, units=max(units, 1))

    buses = [
        dc_bus(1, "dc-a", c_bus, 2),
        dc_bus(2, "dc-a", c_bus, 0),
        dc_bus(3, "dc-a", c_conv, 2),
        Bus(id="4", kind=AC_CONVERTER, subsystem="ac", load=ac_load),
        Bus(id="5", kind=AC_GENERATOR, subsystem="ac", inertia=pu.inertia_to_m(1.0),
            damping=1.0, q=q_unit, load=pu.power_to_pu(1e6)),
        Bus(id="6", kind=AC_CONVERTER, subsystem="ac", load=ac_load),
        dc_bus(7, "dc-b", c_conv, 2),
        dc_bus(8, "dc-b", c_bus, 0),
        dc_bus(9, "dc-b", c_bus, 2),
    ]
    buses[6] = replace(buses[6], load=dc_load + switched)
    lines = [
        Line("1", "2", DC_LINE, conductance=g_line),
        Line("2", "3", DC_LINE, conductance=g_line),
        Line("4", "5", AC_LINE, susceptance=b_line),
        Line("5", "6", AC_LINE, susceptance=b_line),
        Line("7", "8", DC_LINE, conductance=g_line),
        Line("8", "9", DC_LINE, conductance=g_line),
    ]
    converters = [Converter("x1", ac_bus="4", dc_bus="3", ratio=m),
                  Converter("x2", ac_bus="6", dc_bus="7", ratio=m)]
    comm_edges = [("1", "3"), ("3", "5"), ("5", "7"), ("7", "9"), ("9", "1")]
    network = NetworkSpec(buses=buses, lines=lines, converters=converters,
                          comm_edges=comm_edges)

    net = validate_network(network)
    total = sum(b.load for b in buses)
    cfg = ControllerConfig(mode=mode, m=m, p_g_nom=nominal_dispatch(net, total),
                           t_xi_default=CASE_STUDY_T_XI,
                           comm_delay=0.2 if delay else 0.0)
    sched = DisturbanceSchedule([Disturbance(1.0, "3", switched),
                                 Disturbance(13.0, "7", -switched)])
    return Scenario(name="case-study", network=network, controllers=cfg, disturbances=sched,
                    sim=SimSettings(t_end=25.0, dt=CASE_STUDY_DT, record_every=10),
                    bases=pu)
