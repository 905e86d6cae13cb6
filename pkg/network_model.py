"""
Hybrid AC/DC network description and validation
Builds the index maps and graph operators (incidence, conductance Laplacian,
communication Laplacian) that every other module works with.

All quantities are per-unit deviations from nominal.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from errors import (
    CrossSubsystemLine,
    DanglingConverter,
    DisconnectedCommGraph,
    DisconnectedSubsystem,
    InvalidParameter,
    MixedDomainLine,
    NonzeroCostAtConverterBus,
    UnknownBus,
    UnknownSubsystem,
)

logger = logging.getLogger(__name__)

AC_GENERATOR = "ac-generator"
AC_CONVERTER = "ac-converter"
DC = "dc"
BUS_KINDS = (AC_GENERATOR, AC_CONVERTER, DC)

AC_LINE = "ac"
DC_LINE = "dc"


@dataclass(frozen=True)
class Bus:
    """A network bus (AC generator, AC converter or DC)"""

    id: str
    kind: str
    subsystem: str
    inertia: Optional[float] = None
    damping: Optional[float] = None
    capacitance: Optional[float] = None
    q: float = 0.0
    load: float = 0.0
    units: int = 1

    @property
    def is_ac(self) -> bool:
        return self.kind in (AC_GENERATOR, AC_CONVERTER)


@dataclass(frozen=True)
class Line:
    """An AC (susceptance) or DC (conductance) line, oriented from_bus -> to_bus"""

    from_bus: str
    to_bus: str
    kind: str
    susceptance: Optional[float] = None
    conductance: Optional[float] = None
    name: Optional[str] = None

    @property
    def id(self) -> str:
        return self.name or f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Converter:
    """Interlinking converter joining an AC-converter bus to a DC bus"""

    id: str
    ac_bus: str
    dc_bus: str
    ratio: Optional[float] = None


@dataclass(frozen=True)
class NetworkSpec:
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    converters: Tuple[Converter, ...]
    comm_edges: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        # lists accepted, stored as tuples
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "converters", tuple(self.converters))
        object.__setattr__(self, "comm_edges", tuple(tuple(e) for e in self.comm_edges))


@dataclass
class ValidatedNetwork:
    """
    Validated, immutable view of a NetworkSpec with contiguous index maps

    Index spaces:
        ac_buses  - every AC bus (generators and converter buses)
        gen_buses - AC-generator buses, the omega^G slots
        dc_buses  - DC buses, the V slots
        ac_lines / dc_lines - the eta slots and DC branch slots
        comm_nodes - nodes of the communication graph, the xi slots
    """

    spec: NetworkSpec
    bus: Dict[str, Bus]
    ac_buses: List[str]
    gen_buses: List[str]
    conv_buses: List[str]
    dc_buses: List[str]
    ac_lines: List[Line]
    dc_lines: List[Line]
    converters: List[Converter]
    comm_nodes: List[str]
    ac_subsystems: Dict[str, List[str]]
    dc_subsystems: Dict[str, List[str]]
    eta_index: Dict[str, int] = field(default_factory=dict)
    omega_index: Dict[str, int] = field(default_factory=dict)
    v_index: Dict[str, int] = field(default_factory=dict)
    ac_index: Dict[str, int] = field(default_factory=dict)
    xi_index: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.eta_index = {line.id: k for k, line in enumerate(self.ac_lines)}
        self.omega_index = {b: k for k, b in enumerate(self.gen_buses)}
        self.v_index = {b: k for k, b in enumerate(self.dc_buses)}
        self.ac_index = {b: k for k, b in enumerate(self.ac_buses)}
        self.xi_index = {b: k for k, b in enumerate(self.comm_nodes)}
        self.dc_line_index = {line.id: k for k, line in enumerate(self.dc_lines)}
        self.dc_subsystem_names = list(self.dc_subsystems)
        self.ac_subsystem_names = list(self.ac_subsystems)
        self._build_operators()

    def _build_operators(self):
        self.A_ac = _oriented_incidence(self.ac_buses, self.ac_lines)
        self.A_dc = _oriented_incidence(self.dc_buses, self.dc_lines)
        self.b = np.array([line.susceptance for line in self.ac_lines], dtype=float)
        self.g = np.array([line.conductance for line in self.dc_lines], dtype=float)

        self.gen_pos = np.array([self.ac_index[b] for b in self.gen_buses], dtype=int)
        self.conv_pos = np.array([self.ac_index[c.ac_bus] for c in self.converters], dtype=int)
        self.conv_dc_pos = np.array([self.v_index[c.dc_bus] for c in self.converters], dtype=int)
        sub_of = {b: k for k, name in enumerate(self.dc_subsystem_names)
                  for b in self.dc_subsystems[name]}
        self.conv_dc_subsystem = np.array(
            [sub_of[c.dc_bus] for c in self.converters], dtype=int)
        self.dc_subsystem_of = np.array([sub_of[b] for b in self.dc_buses], dtype=int)

        self.M = np.array([self.bus[b].inertia for b in self.gen_buses], dtype=float)
        self.D = np.array([self.bus[b].damping for b in self.gen_buses], dtype=float)
        self.C = np.array([self.bus[b].capacitance for b in self.dc_buses], dtype=float)
        self.q_gen = np.array([self.bus[b].q for b in self.gen_buses], dtype=float)
        self.q_dc = np.array([self.bus[b].q for b in self.dc_buses], dtype=float)
        self.q_comm = np.array([self.bus[b].q for b in self.comm_nodes], dtype=float)

        # V_bar = S @ V with S[k, j] = C_j for j in subsystem k
        self.S = np.zeros((len(self.dc_subsystem_names), len(self.dc_buses)))
        self.S[self.dc_subsystem_of, np.arange(len(self.dc_buses))] = self.C

        self.L_comm = comm_laplacian(self)

    # Convenience -----------------------------------------------------------

    @property
    def n_ac_lines(self) -> int:
        return len(self.ac_lines)

    @property
    def n_gen(self) -> int:
        return len(self.gen_buses)

    @property
    def n_dc(self) -> int:
        return len(self.dc_buses)

    @property
    def n_conv(self) -> int:
        return len(self.converters)

    @property
    def n_comm(self) -> int:
        return len(self.comm_nodes)

    def nominal_loads(self) -> Dict[str, float]:
        return {b.id: b.load for b in self.spec.buses}

    def load_vectors(self, loads: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
        """Split a per-bus load dict into (AC-bus vector, DC-bus vector)"""
        p_ac = np.array([loads.get(b, 0.0) for b in self.ac_buses], dtype=float)
        p_dc = np.array([loads.get(b, 0.0) for b in self.dc_buses], dtype=float)
        return p_ac, p_dc


def _oriented_incidence(nodes: Sequence[str], lines: Sequence[Line]) -> np.ndarray:
    if not lines:
        return np.zeros((len(nodes), 0))
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(nodes)
    edgelist = []
    for k, line in enumerate(lines):
        graph.add_edge(line.from_bus, line.to_bus, key=k)
        edgelist.append((line.from_bus, line.to_bus, k))
    # networkx orients tail -1 / head +1; we want +1 at the sending bus
    inc = nx.incidence_matrix(graph, nodelist=list(nodes), edgelist=edgelist, oriented=True)
    return -inc.toarray()


def _check_bus(bus: Bus):
    if bus.kind not in BUS_KINDS:
        raise InvalidParameter(f"unknown bus kind '{bus.kind}'", bus.id)
    if bus.q < 0 or not np.isfinite(bus.q):
        raise InvalidParameter("inverse cost q must be >= 0", bus.id)
    if bus.units < 1:
        raise InvalidParameter("units must be >= 1", bus.id)
    if not np.isfinite(bus.load):
        raise InvalidParameter("load must be finite", bus.id)

    if bus.kind == AC_GENERATOR:
        if bus.inertia is None or not bus.inertia > 0:
            raise InvalidParameter("AC generator needs inertia M > 0", bus.id)
        if bus.damping is None or bus.damping < 0:
            raise InvalidParameter("AC generator needs damping D >= 0", bus.id)
    elif bus.inertia is not None or bus.damping is not None:
        raise InvalidParameter("inertia/damping only allowed on AC generators", bus.id)

    if bus.kind == DC:
        if bus.capacitance is None or not bus.capacitance > 0:
            raise InvalidParameter("DC bus needs capacitance C > 0", bus.id)
    elif bus.capacitance is not None:
        raise InvalidParameter("capacitance only allowed on DC buses", bus.id)

    if bus.kind == AC_CONVERTER and bus.q != 0:
        raise NonzeroCostAtConverterBus("q must be 0 at an AC converter bus", bus.id)


def _check_line(line: Line, buses: Dict[str, Bus]):
    for end in (line.from_bus, line.to_bus):
        if end not in buses:
            raise UnknownBus(f"line endpoint '{end}' does not exist", line.id)
    if line.from_bus == line.to_bus:
        raise InvalidParameter("line joins a bus to itself", line.id)

    a, b = buses[line.from_bus], buses[line.to_bus]
    if line.kind == AC_LINE:
        if not (a.is_ac and b.is_ac):
            raise MixedDomainLine("AC line must join two AC buses", line.id)
        if line.susceptance is None or not line.susceptance > 0:
            raise InvalidParameter("AC line needs susceptance B > 0", line.id)
    elif line.kind == DC_LINE:
        if a.kind != DC or b.kind != DC:
            raise MixedDomainLine("DC line must join two DC buses", line.id)
        if line.conductance is None or not line.conductance > 0:
            raise InvalidParameter("DC line needs conductance G > 0", line.id)
    else:
        raise InvalidParameter(f"unknown line kind '{line.kind}'", line.id)

    if a.subsystem != b.subsystem:
        raise CrossSubsystemLine("line endpoints lie in different subsystems", line.id)


def _first_unreachable(nodes: List[str], edges: List[Tuple[str, str]]) -> Optional[str]:
    graph = nx.Graph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(edges)
    if not nodes or nx.is_connected(graph):
        return None
    reached = nx.node_connected_component(graph, nodes[0])
    return next(n for n in nodes if n not in reached)


def validate_network(spec) -> ValidatedNetwork:
    """
    Validate a network description and build its index maps

    Args:
        spec: NetworkSpec (a ValidatedNetwork is returned unchanged)

    Returns:
        ValidatedNetwork

    Raises:
        NetworkError subclasses naming the offending element
    """
    if isinstance(spec, ValidatedNetwork):
        return spec

    buses: Dict[str, Bus] = {}
    for bus in spec.buses:
        if bus.id in buses:
            raise InvalidParameter("duplicate bus id", bus.id)
        _check_bus(bus)
        buses[bus.id] = bus

    line_ids = set()
    for line in spec.lines:
        _check_line(line, buses)
        if line.id in line_ids:
            raise InvalidParameter("duplicate line id (name parallel lines)", line.id)
        line_ids.add(line.id)

    # subsystems must be single-domain
    domains: Dict[str, bool] = {}
    subsystems: Dict[str, List[str]] = {}
    for bus in spec.buses:
        if domains.setdefault(bus.subsystem, bus.is_ac) != bus.is_ac:
            raise MixedDomainLine("subsystem mixes AC and DC buses", bus.id)
        subsystems.setdefault(bus.subsystem, []).append(bus.id)

    conv_ids = set()
    conv_count = {b.id: 0 for b in spec.buses if b.kind == AC_CONVERTER}
    for conv in spec.converters:
        if conv.id in conv_ids:
            raise DanglingConverter("duplicate converter id", conv.id)
        conv_ids.add(conv.id)
        ac, dc = buses.get(conv.ac_bus), buses.get(conv.dc_bus)
        if ac is None or ac.kind != AC_CONVERTER:
            raise DanglingConverter(f"AC side '{conv.ac_bus}' is not an AC converter bus", conv.id)
        if dc is None or dc.kind != DC:
            raise DanglingConverter(f"DC side '{conv.dc_bus}' is not a DC bus", conv.id)
        if conv.ratio is not None and not conv.ratio > 0:
            raise InvalidParameter("converter ratio m must be > 0", conv.id)
        conv_count[conv.ac_bus] += 1
    for bus_id, count in conv_count.items():
        if count != 1:
            raise DanglingConverter(
                f"AC converter bus referenced by {count} converters", bus_id)

    for name, members in subsystems.items():
        edges = [(l.from_bus, l.to_bus) for l in spec.lines
                 if buses[l.from_bus].subsystem == name]
        bad = _first_unreachable(members, edges)
        if bad is not None:
            raise DisconnectedSubsystem(f"subsystem '{name}' is not connected", bad)

    for u, v in spec.comm_edges:
        for end in (u, v):
            if end not in buses:
                raise UnknownBus(f"communication edge endpoint '{end}' does not exist", end)
    in_comm = {b.id for b in spec.buses if b.q > 0}
    in_comm.update(n for e in spec.comm_edges for n in e)
    comm_nodes = [b.id for b in spec.buses if b.id in in_comm]
    bad = _first_unreachable(comm_nodes, [tuple(e) for e in spec.comm_edges])
    if bad is not None:
        raise DisconnectedCommGraph("communication graph is not connected", bad)

    ac_subsystems = {n: m for n, m in subsystems.items() if domains[n]}
    dc_subsystems = {n: m for n, m in subsystems.items() if not domains[n]}

    net = ValidatedNetwork(
        spec=spec,
        bus=buses,
        ac_buses=[b.id for b in spec.buses if b.is_ac],
        gen_buses=[b.id for b in spec.buses if b.kind == AC_GENERATOR],
        conv_buses=[b.id for b in spec.buses if b.kind == AC_CONVERTER],
        dc_buses=[b.id for b in spec.buses if b.kind == DC],
        ac_lines=[l for l in spec.lines if l.kind == AC_LINE],
        dc_lines=[l for l in spec.lines if l.kind == DC_LINE],
        converters=list(spec.converters),
        comm_nodes=comm_nodes,
        ac_subsystems=ac_subsystems,
        dc_subsystems=dc_subsystems,
    )
    logger.debug("validated network: %d AC buses, %d DC buses, %d converters",
                 len(net.ac_buses), net.n_dc, net.n_conv)
    return net


def incidence_matrix(net: ValidatedNetwork, subsystem: str) -> np.ndarray:
    """
    Oriented incidence matrix of one AC subsystem

    Rows follow the subsystem's buses in spec order, columns its lines in
    spec order; the column of edge (i -> j) has +1 at i and -1 at j.
    """
    if subsystem not in net.ac_subsystems:
        raise UnknownSubsystem("not an AC subsystem", subsystem)
    members = net.ac_subsystems[subsystem]
    lines = [l for l in net.ac_lines if net.bus[l.from_bus].subsystem == subsystem]
    return _oriented_incidence(members, lines)


def dc_conductance_matrix(net: ValidatedNetwork, subsystem: str) -> np.ndarray:
    """Conductance-weighted Laplacian of one DC subsystem"""
    if subsystem not in net.dc_subsystems:
        raise UnknownSubsystem("not a DC subsystem", subsystem)
    members = net.dc_subsystems[subsystem]
    graph = nx.MultiGraph()
    graph.add_nodes_from(members)
    for line in net.dc_lines:
        if net.bus[line.from_bus].subsystem == subsystem:
            graph.add_edge(line.from_bus, line.to_bus, conductance=line.conductance)
    return nx.laplacian_matrix(graph, nodelist=members, weight="conductance").toarray().astype(float)


def full_conductance_matrix(net: ValidatedNetwork) -> np.ndarray:
    """Conductance Laplacian over all DC buses (block diagonal by subsystem)"""
    return net.A_dc @ np.diag(net.g) @ net.A_dc.T


def comm_laplacian(net: ValidatedNetwork) -> np.ndarray:
    """Unweighted Laplacian of the communication graph over net.comm_nodes"""
    if not net.comm_nodes:
        return np.zeros((0, 0))
    graph = nx.Graph()
    graph.add_nodes_from(net.comm_nodes)
    graph.add_edges_from(net.spec.comm_edges)
    return nx.laplacian_matrix(graph, nodelist=net.comm_nodes, weight=None).toarray().astype(float)


def scale_dc_resistance(spec: NetworkSpec, scale: float) -> NetworkSpec:
    """Scale every DC line resistance by `scale` (G <- G / scale)"""
    if not scale > 0:
        raise InvalidParameter("resistance scale must be > 0", str(scale))
    lines = tuple(
        replace(l, conductance=l.conductance / scale) if l.kind == DC_LINE else l
        for l in spec.lines
    )
    return replace(spec, lines=lines)
