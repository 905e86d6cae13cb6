"""
Controller laws for generation sources and interlinking converters

    primary     - droop generation with ILC frequency/voltage synchronization
    dual-droop  - droop generation with power-controlled ILCs (baseline)
    secondary   - consensus on a communicated variable xi, ILCs synchronize
                  to the capacitance-weighted average DC voltage

The laws themselves are pure functions of their inputs. ControllerGains binds
a ControllerConfig to a validated network and holds the per-index arrays.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from errors import ConfigError, DimensionMismatch, ModeMismatch, UnknownSubsystem
from network_model import DC, ValidatedNetwork

PRIMARY = "primary"
DUAL_DROOP = "dual-droop"
SECONDARY = "secondary"
MODES = (PRIMARY, DUAL_DROOP, SECONDARY)

DEFAULT_M_EPS = 1e-2
DEFAULT_T_XI = 1.0
DEFAULT_K_OMEGA = 1.0
DEFAULT_K_V = 1.0


@dataclass(frozen=True)
class ControllerConfig:
    """
    Controller family and gains

    The inverse-cost diagonal Q~ lives on the buses (Bus.q). Per-element gains
    are keyed by converter id (k_omega, k_v), communication node (t_xi) or DC
    bus (c_virtual); missing keys fall back to the scalar defaults.
    """

    mode: str = PRIMARY
    m: float = 1.0
    p_g_nom: Mapping[str, float] = field(default_factory=dict)
    k_omega: Mapping[str, float] = field(default_factory=dict)
    k_v: Mapping[str, float] = field(default_factory=dict)
    t_xi: Mapping[str, float] = field(default_factory=dict)
    c_virtual: Mapping[str, float] = field(default_factory=dict)
    k_omega_default: float = DEFAULT_K_OMEGA
    k_v_default: float = DEFAULT_K_V
    t_xi_default: float = DEFAULT_T_XI
    m_eps: float = DEFAULT_M_EPS
    comm_delay: float = 0.0

    def with_mode(self, mode: str) -> "ControllerConfig":
        return replace(self, mode=mode)


class ControllerGains:
    """ControllerConfig bound to a ValidatedNetwork"""

    def __init__(self, cfg: ControllerConfig, net: ValidatedNetwork):
        if cfg.mode not in MODES:
            raise ConfigError(f"unknown controller mode '{cfg.mode}'")
        if not cfg.m > 0:
            raise ConfigError("m must be > 0")
        if not cfg.m_eps > 0:
            raise ConfigError("m_eps must be > 0")
        if cfg.comm_delay < 0:
            raise ConfigError("comm_delay must be >= 0")
        for conv in net.converters:
            if conv.ratio is not None and not np.isclose(conv.ratio, cfg.m, rtol=1e-12, atol=0):
                raise ConfigError(
                    f"converter {conv.id} ratio {conv.ratio} differs from the global m={cfg.m}")

        self.cfg = cfg
        self.mode = cfg.mode
        self.m = float(cfg.m)

        self.q_gen = net.q_gen
        self.q_dc = net.q_dc
        self.q_comm = net.q_comm

        known = set(net.bus)
        for key in cfg.p_g_nom:
            if key not in known:
                raise ConfigError(f"p_g_nom refers to unknown bus '{key}'")
        self.p_nom_gen = np.array([cfg.p_g_nom.get(b, 0.0) for b in net.gen_buses], dtype=float)
        self.p_nom_dc = np.array([cfg.p_g_nom.get(b, 0.0) for b in net.dc_buses], dtype=float)
        _check_nominal_dispatch(net, cfg.p_g_nom)

        conv_ids = {c.id for c in net.converters}
        for name, gains in (("k_omega", cfg.k_omega), ("k_v", cfg.k_v)):
            for key, val in gains.items():
                if key not in conv_ids:
                    raise ConfigError(f"{name} refers to unknown converter '{key}'")
                if val < 0:
                    raise ConfigError(f"{name}[{key}] must be >= 0")
        self.k_omega = np.array(
            [cfg.k_omega.get(c.id, cfg.k_omega_default) for c in net.converters], dtype=float)
        self.k_v = np.array(
            [cfg.k_v.get(c.id, cfg.k_v_default) for c in net.converters], dtype=float)

        for key in cfg.t_xi:
            if key not in net.xi_index:
                raise ConfigError(f"t_xi refers to '{key}', which is not a communication node")
        self.t_xi = np.array(
            [cfg.t_xi.get(b, cfg.t_xi_default) for b in net.comm_nodes], dtype=float)
        if np.any(self.t_xi <= 0):
            raise ConfigError("t_xi must be positive")

        for key, val in cfg.c_virtual.items():
            bus = net.bus.get(key)
            if bus is None or bus.kind != DC or bus.q <= 0:
                raise ConfigError(f"virtual capacitance only allowed at DC source buses ('{key}')")
            if val < 0:
                raise ConfigError(f"c_virtual[{key}] must be >= 0")
        self.c_virtual = np.array([cfg.c_virtual.get(b, 0.0) for b in net.dc_buses], dtype=float)

        # xi slot feeding each generator / DC bus (-1: not a communication node)
        self.gen_xi = np.array([net.xi_index.get(b, -1) for b in net.gen_buses], dtype=int)
        self.dc_xi = np.array([net.xi_index.get(b, -1) for b in net.dc_buses], dtype=int)

        # virtual frequency sources for each communication node
        self.comm_ac_pos = np.array(
            [net.ac_index.get(b, -1) for b in net.comm_nodes], dtype=int)
        sub_of = dict(zip(net.dc_buses, net.dc_subsystem_of))
        self.comm_dc_sub = np.array([sub_of.get(b, -1) for b in net.comm_nodes], dtype=int)

        self.L = net.L_comm
        self.comm_delay = float(cfg.comm_delay)
        self.m_eps = float(cfg.m_eps)


def _check_nominal_dispatch(net: ValidatedNetwork, p_g_nom: Mapping[str, float]):
    # p_g_nom must be -Q~ 1 zeta for a single scalar zeta
    if not p_g_nom:
        return
    zeta = None
    for bus in net.spec.buses:
        p = p_g_nom.get(bus.id, 0.0)
        if bus.q == 0:
            if abs(p) > 1e-12:
                raise ConfigError(f"p_g_nom nonzero at bus '{bus.id}' with q = 0")
            continue
        ratio = -p / bus.q
        if zeta is None:
            zeta = ratio
        elif not np.isclose(ratio, zeta, rtol=1e-9, atol=1e-12):
            raise ConfigError("p_g_nom is not proportional to the inverse costs q")


def nominal_dispatch(net: ValidatedNetwork, total: float) -> Dict[str, float]:
    """p_g_nom = -Q~ 1 zeta with zeta chosen so the dispatch sums to `total`"""
    q_sum = sum(b.q for b in net.spec.buses)
    if q_sum <= 0:
        raise ConfigError("no bus has q > 0")
    zeta = -total / q_sum
    return {b.id: -b.q * zeta for b in net.spec.buses if b.q > 0}


def _require(gains: ControllerGains, *modes: str):
    if gains.mode not in modes:
        raise ModeMismatch(f"law not defined in mode '{gains.mode}' (needs {', '.join(modes)})")


def droop_generation(omega_g: np.ndarray, v: np.ndarray,
                     gains: ControllerGains) -> Tuple[np.ndarray, np.ndarray]:
    """
    Droop generation p^G = -Q~ [omega; m V] + p^G_nom

    Args:
        omega_g: Frequencies at the AC generator buses (rad/s)
        v: DC voltage deviations (per-unit)
        gains: Bound controller, primary or dual-droop mode

    Returns:
        (generation at AC generator buses, generation at DC buses)
    """
    _require(gains, PRIMARY, DUAL_DROOP)
    p_gen = -gains.q_gen * omega_g + gains.p_nom_gen
    p_dc = -gains.q_dc * gains.m * v + gains.p_nom_dc
    return p_gen, p_dc


def ilc_primary_frequency(v_dc, m: float):
    """AC-side frequency of a synchronizing ILC: omega_i = m V_j"""
    return m * v_dc


def dual_droop_power(omega_i, v_j, k_omega, k_v):
    """Dual-droop ILC transfer p^X_i = K^omega_i omega_i - K^V_j V_j (AC to DC positive)"""
    return k_omega * omega_i - k_v * v_j


def weighted_average_voltage(v: np.ndarray, net: ValidatedNetwork,
                             subsystem: Optional[str] = None):
    """
    Capacitance-weighted sum V_bar_k = sum_j C_j V_j

    Returns the vector over all DC subsystems when `subsystem` is None.
    """
    v_bar = net.S @ v
    if subsystem is None:
        return v_bar
    if subsystem not in net.dc_subsystems:
        raise UnknownSubsystem("not a DC subsystem", subsystem)
    return float(v_bar[net.dc_subsystem_names.index(subsystem)])


def virtual_frequency(omega_ac: np.ndarray, v_bar: np.ndarray, m: float,
                      net: ValidatedNetwork) -> Dict[str, float]:
    """
    Virtual frequency for every bus: omega_j on AC buses, m V_bar_k on the
    buses of DC subsystem k

    Args:
        omega_ac: Frequencies over net.ac_buses (generators and converter buses)
        v_bar: Weighted average voltage per DC subsystem
    """
    out = {}
    for bus in net.spec.buses:
        if bus.is_ac:
            out[bus.id] = float(omega_ac[net.ac_index[bus.id]])
        else:
            k = net.dc_subsystem_names.index(bus.subsystem)
            out[bus.id] = float(m * v_bar[k])
    return out


def comm_virtual_frequency(omega_ac: np.ndarray, v_bar: np.ndarray,
                           gains: ControllerGains) -> np.ndarray:
    """Virtual frequency restricted to the communication nodes"""
    is_ac = gains.comm_ac_pos >= 0
    return np.where(is_ac,
                    omega_ac[np.maximum(gains.comm_ac_pos, 0)] if omega_ac.size else 0.0,
                    gains.m * v_bar[np.maximum(gains.comm_dc_sub, 0)] if v_bar.size else 0.0)


def consensus_rhs(xi: np.ndarray, omega_hat: np.ndarray, gains: ControllerGains,
                  laplacian: Optional[np.ndarray] = None,
                  xi_remote: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Consensus dynamics T_xi xi_dot = -L xi - Q~ omega_hat

    Args:
        xi: Communicated variables over the communication nodes
        omega_hat: Virtual frequency over the communication nodes
        gains: Bound controller in secondary mode
        laplacian: Communication Laplacian (defaults to the network's)
        xi_remote: Delayed copy of xi used for the neighbour terms

    Returns:
        xi_dot
    """
    _require(gains, SECONDARY)
    if xi.shape != gains.t_xi.shape or omega_hat.shape != gains.t_xi.shape:
        raise DimensionMismatch("xi / omega_hat length does not match the communication graph")
    L = gains.L if laplacian is None else laplacian
    if xi_remote is None:
        coupling = L @ xi
    else:
        diag = np.diag(L)
        coupling = diag * xi + (L - np.diag(diag)) @ xi_remote
    return (-coupling - gains.q_comm * omega_hat) / gains.t_xi


def secondary_generation(xi: np.ndarray, v_dot: np.ndarray,
                         gains: ControllerGains) -> Tuple[np.ndarray, np.ndarray]:
    """
    Secondary generation p^G = Q~ xi - C^V V_dot

    Returns:
        (generation at AC generator buses, generation at DC buses)
    """
    _require(gains, SECONDARY)
    xi_ext = np.append(xi, 0.0)  # index -1 -> 0 for buses outside the graph
    p_gen = gains.q_gen * xi_ext[gains.gen_xi]
    p_dc = gains.q_dc * xi_ext[gains.dc_xi] - gains.c_virtual * v_dot
    return p_gen, p_dc


def generation_by_bus(net: ValidatedNetwork, p_gen: np.ndarray,
                      p_dc: np.ndarray) -> Dict[str, float]:
    """Per-bus generation dict (zero at AC converter buses)"""
    out = {b: 0.0 for b in net.conv_buses}
    out.update({b: float(p) for b, p in zip(net.gen_buses, p_gen)})
    out.update({b: float(p) for b, p in zip(net.dc_buses, p_dc)})
    return out
