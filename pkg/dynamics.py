"""
Closed-loop hybrid AC/DC network dynamics and fixed-step integration

State layout (flat vector): [eta | omega_g | v | xi | omega_x]
    eta     - angle differences over AC lines (rad)
    omega_g - frequency deviations at AC generator buses (rad/s)
    v       - DC voltage deviations (per-unit)
    xi      - communicated variables (secondary mode only)
    omega_x - converter AC-bus frequencies (dual-droop mode only)

Branch flow aggregates p_f are net INFLOW per bus. The converter transfer p_x
is reported AC-side positive (power leaving the AC bus towards DC); the DC
side of the same converter receives exactly +p_x.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import approx_fprime

from controllers import (
    DUAL_DROOP,
    PRIMARY,
    SECONDARY,
    ControllerGains,
    comm_virtual_frequency,
    consensus_rhs,
    droop_generation,
    dual_droop_power,
    ilc_primary_frequency,
    secondary_generation,
)
from errors import DimensionMismatch, HybridGridError, NegativeDelay, NonFiniteState, UnknownBus
from network_model import ValidatedNetwork

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DIVERGENCE_LIMIT = 1e6
RK4_STABILITY_RADIUS = 2.5


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class SystemState:
    eta: np.ndarray
    omega_g: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    omega_x: np.ndarray
    t: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.eta.copy(), self.omega_g.copy(), self.v.copy(),
                           self.xi.copy(), self.omega_x.copy(), self.t)


@dataclass
class DerivedOutputs:
    """Algebraic outputs at one state (all arrays follow the network index maps)"""

    p_gen: np.ndarray       # over net.gen_buses
    p_dc: np.ndarray        # over net.dc_buses
    p_x: np.ndarray         # over net.converters, AC-side positive
    p_f_ac: np.ndarray      # inflow over net.ac_buses
    p_f_dc: np.ndarray      # inflow over net.dc_buses
    omega_x: np.ndarray     # over net.converters
    v_bar: np.ndarray       # over net.dc_subsystem_names
    omega_hat: np.ndarray   # over net.comm_nodes (secondary), else empty
    v_dot: np.ndarray       # over net.dc_buses

    @property
    def p_x_dc(self) -> np.ndarray:
        """DC-side transfer of each converter (power leaving the DC bus)"""
        return -self.p_x


@dataclass(frozen=True)
class Disturbance:
    time: float
    bus: str
    delta: float


@dataclass
class DisturbanceSchedule:
    """Step changes of load, applied left-continuously on the integration grid"""

    steps: List[Disturbance] = field(default_factory=list)

    def __post_init__(self):
        times = [s.time for s in self.steps]
        if any(b < a for a, b in zip(times, times[1:])):
            raise HybridGridError("disturbance times must be nondecreasing")

    def loads_at(self, t: float, net: ValidatedNetwork) -> Dict[str, float]:
        loads = net.nominal_loads()
        for step in self.steps:
            if step.time <= t:
                if step.bus not in loads:
                    raise UnknownBus("disturbance at unknown bus", step.bus)
                loads[step.bus] += step.delta
        return loads

    def final_loads(self, net: ValidatedNetwork) -> Dict[str, float]:
        return self.loads_at(math.inf, net)

    def grid_segments(self, net: ValidatedNetwork, t0: float,
                      dt: float) -> List[Tuple[int, Dict[str, float]]]:
        """
        Constant-load segments on the grid t0 + k dt

        Returns:
            List of (first step index, loads) with strictly increasing indices
        """
        loads = net.nominal_loads()
        segments = [(0, dict(loads))]
        for step in self.steps:
            if step.bus not in loads:
                raise UnknownBus("disturbance at unknown bus", step.bus)
            k = max(0, math.ceil((step.time - t0) / dt - 1e-9))
            loads[step.bus] += step.delta
            if segments[-1][0] == k:
                segments[-1] = (k, dict(loads))
            else:
                segments.append((k, dict(loads)))
        return segments


class StateLayout:
    """Slices of the flat state vector for one network and controller mode"""

    def __init__(self, net: ValidatedNetwork, mode: str):
        self.mode = mode
        sizes = [
            net.n_ac_lines,
            net.n_gen,
            net.n_dc,
            net.n_comm if mode == SECONDARY else 0,
            net.n_conv if mode == DUAL_DROOP else 0,
        ]
        edges = np.cumsum([0] + sizes)
        self.eta, self.omega_g, self.v, self.xi, self.omega_x = (
            slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))
        self.sizes = sizes
        self.dim = int(edges[-1])

    def pack(self, state: SystemState) -> np.ndarray:
        parts = (state.eta, state.omega_g, state.v, state.xi, state.omega_x)
        for part, size in zip(parts, self.sizes):
            if np.shape(part) != (size,):
                raise DimensionMismatch(
                    f"state component has shape {np.shape(part)}, expected ({size},)")
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, x: np.ndarray, t: float = 0.0) -> SystemState:
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"state vector has shape {x.shape}, expected ({self.dim},)")
        return SystemState(x[self.eta].copy(), x[self.omega_g].copy(), x[self.v].copy(),
                           x[self.xi].copy(), x[self.omega_x].copy(), t)

    def zeros(self, t: float = 0.0) -> SystemState:
        return self.unpack(np.zeros(self.dim), t)


def zero_state(net: ValidatedNetwork, mode: str, t: float = 0.0) -> SystemState:
    return StateLayout(net, mode).zeros(t)


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------

def branch_flows(state: SystemState, net: ValidatedNetwork):
    """
    Line flows in each line's orientation and per-bus net inflow

    Returns:
        (AC flows, DC flows, AC inflow per AC bus, DC inflow per DC bus)
    """
    f_ac = net.b * np.sin(state.eta)
    f_dc = net.g * (net.A_dc.T @ state.v)
    return f_ac, f_dc, -net.A_ac @ f_ac, -net.A_dc @ f_dc


def converter_transfers(p_f_ac: np.ndarray, p_l_ac: np.ndarray,
                        net: ValidatedNetwork) -> np.ndarray:
    """
    Converter transfers read off the AC converter-bus balance
    0 = -p^L_j + p^F_j - p^X_j  (no generation at converter buses)

    Returns:
        p_x per converter, AC-side positive
    """
    return p_f_ac[net.conv_pos] - p_l_ac[net.conv_pos]


class ClosedLoop:
    """Right-hand side of the closed-loop system for one network and controller"""

    def __init__(self, net: ValidatedNetwork, controllers):
        self.net = net
        self.gains = controllers if isinstance(controllers, ControllerGains) \
            else ControllerGains(controllers, net)
        self.mode = self.gains.mode
        self.layout = StateLayout(net, self.mode)

    def load_vectors(self, loads: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
        return self.net.load_vectors(loads)

    def evaluate(self, x: np.ndarray, p_l_ac: np.ndarray, p_l_dc: np.ndarray,
                 delayed: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                 outputs: bool = False):
        """
        Evaluate d(state)/dt

        Args:
            x: Flat state vector
            p_l_ac, p_l_dc: Loads over AC buses and DC buses
            delayed: (V_bar, xi) as seen through the communication delay
            outputs: Also return DerivedOutputs

        Returns:
            derivative vector, or (derivative, DerivedOutputs)
        """
        return self._evaluate(x, np.sin(x[self.layout.eta]), p_l_ac, p_l_dc, delayed, outputs)

    def _evaluate(self, x, sin_eta, p_l_ac, p_l_dc, delayed, outputs):
        # affine in (sin_eta, x[non-eta], loads, delayed); eta enters only through sin_eta
        net, gains, lay = self.net, self.gains, self.layout
        omega_g, v = x[lay.omega_g], x[lay.v]

        f_ac = net.b * sin_eta
        p_f_ac = -net.A_ac @ f_ac
        p_f_dc = -net.A_dc @ (net.g * (net.A_dc.T @ v))

        v_bar = net.S @ v
        v_bar_seen = v_bar if delayed is None else delayed[0]

        if self.mode == PRIMARY:
            omega_x = ilc_primary_frequency(v[net.conv_dc_pos], gains.m)
        elif self.mode == SECONDARY:
            omega_x = ilc_primary_frequency(v_bar_seen[net.conv_dc_subsystem], gains.m)
        else:
            omega_x = x[lay.omega_x]

        omega_ac = np.zeros(len(net.ac_buses))
        omega_ac[net.gen_pos] = omega_g
        omega_ac[net.conv_pos] = omega_x
        eta_dot = net.A_ac.T @ omega_ac

        if self.mode == DUAL_DROOP:
            p_x = dual_droop_power(omega_x, v[net.conv_dc_pos], gains.k_omega, gains.k_v)
            omega_x_dot = (p_f_ac[net.conv_pos] - p_l_ac[net.conv_pos] - p_x) / gains.m_eps
        else:
            p_x = converter_transfers(p_f_ac, p_l_ac, net)
            omega_x_dot = np.zeros(0)
        inj_x = np.bincount(net.conv_dc_pos, weights=p_x, minlength=net.n_dc) \
            if net.n_conv else np.zeros(net.n_dc)

        dc_balance = -p_l_dc + p_f_dc + inj_x
        if self.mode == SECONDARY:
            xi = x[lay.xi]
            p_gen, p_dc0 = secondary_generation(xi, np.zeros(net.n_dc), gains)
            # derivative term of the virtual capacitance solved in closed form
            v_dot = (p_dc0 + dc_balance) / (net.C + gains.c_virtual)
            p_gen, p_dc = secondary_generation(xi, v_dot, gains)
            omega_hat = comm_virtual_frequency(omega_ac, v_bar_seen, gains)
            xi_dot = consensus_rhs(xi, omega_hat, gains,
                                   xi_remote=None if delayed is None else delayed[1])
        else:
            p_gen, p_dc = droop_generation(omega_g, v, gains)
            v_dot = (p_dc + dc_balance) / net.C
            omega_hat = np.zeros(0)
            xi_dot = np.zeros(0)

        omega_g_dot = (p_gen - p_l_ac[net.gen_pos] + p_f_ac[net.gen_pos]
                       - net.D * omega_g) / net.M

        dx = np.concatenate([eta_dot, omega_g_dot, v_dot, xi_dot, omega_x_dot])
        if not outputs:
            return dx
        return dx, DerivedOutputs(
            p_gen=p_gen, p_dc=p_dc, p_x=p_x, p_f_ac=p_f_ac, p_f_dc=p_f_dc,
            omega_x=omega_x, v_bar=v_bar, omega_hat=omega_hat, v_dot=v_dot)

    def affine_form(self, delayed: bool = False) -> "AffineForm":
        """
        Coefficient matrices of the right-hand side, read off by evaluating
        at the origin and at every unit input

        Args:
            delayed: Build the form with explicit delayed (V_bar, xi) inputs
        """
        net, lay = self.net, self.layout
        n_eta, n_ac, n_dc = lay.sizes[0], len(net.ac_buses), net.n_dc
        n_sub = len(net.dc_subsystem_names)
        n_delayed = n_sub + lay.sizes[3] if delayed else 0
        sizes = [n_eta, lay.dim, n_ac, n_dc, n_delayed]
        edges = np.cumsum([0] + sizes)

        def at(z):
            s, x, p_ac, p_dc, d = (z[a:b] for a, b in zip(edges[:-1], edges[1:]))
            seen = (d[:n_sub], d[n_sub:]) if delayed else None
            return self._evaluate(x, s, p_ac, p_dc, seen, outputs=False)

        z = np.zeros(edges[-1])
        k0 = at(z)
        cols = np.empty((lay.dim, edges[-1]))
        for i in range(edges[-1]):
            z[i] = 1.0
            cols[:, i] = at(z) - k0
            z[i] = 0.0
        k_sin, k_x, k_ac, k_dc, k_delayed = (
            cols[:, a:b] for a, b in zip(edges[:-1], edges[1:]))
        return AffineForm(lay.eta, k_sin, k_x, k_ac, k_dc, k_delayed, k0)


@dataclass
class AffineForm:
    """dx = K_sin sin(eta) + K_x x + K_ac p_L_ac + K_dc p_L_dc + K_delayed d + k0"""

    eta: slice
    k_sin: np.ndarray
    k_x: np.ndarray
    k_ac: np.ndarray
    k_dc: np.ndarray
    k_delayed: np.ndarray
    k0: np.ndarray

    def offset(self, p_l_ac: np.ndarray, p_l_dc: np.ndarray) -> np.ndarray:
        return self.k0 + self.k_ac @ p_l_ac + self.k_dc @ p_l_dc

    def __call__(self, x: np.ndarray, offset: np.ndarray) -> np.ndarray:
        return self.k_sin @ np.sin(x[self.eta]) + self.k_x @ x + offset


def rhs(state: SystemState, net: ValidatedNetwork, controllers,
        sched: Optional[DisturbanceSchedule] = None) -> SystemState:
    """
    Closed-loop derivative at `state`, loads taken from `sched` at state.t

    Returns:
        SystemState holding the time derivatives (t copied from state)
    """
    loop = ClosedLoop(net, controllers)
    loads = (sched or DisturbanceSchedule()).loads_at(state.t, net)
    p_ac, p_dc = net.load_vectors(loads)
    dx = loop.evaluate(loop.layout.pack(state), p_ac, p_dc)
    return loop.layout.unpack(dx, state.t)


def derived_outputs(state: SystemState, net: ValidatedNetwork, controllers,
                    loads: Optional[Dict[str, float]] = None) -> DerivedOutputs:
    loop = ClosedLoop(net, controllers)
    p_ac, p_dc = net.load_vectors(loads if loads is not None else net.nominal_loads())
    return loop.evaluate(loop.layout.pack(state), p_ac, p_dc, outputs=True)[1]


# ---------------------------------------------------------------------------
# Delay
# ---------------------------------------------------------------------------

class DelayLine:
    """
    Ring-buffer transport delay on a fixed grid

    push(value) returns the value pushed `delay` seconds earlier; until the
    buffer has filled, the oldest sample is held.
    """

    def __init__(self, delay: float, dt: float):
        if delay < 0:
            raise NegativeDelay(f"delay must be >= 0, got {delay}")
        self.delay = delay
        self.steps = int(round(delay / dt))
        self._buffer = deque(maxlen=self.steps + 1)

    def push(self, value):
        self._buffer.append(np.array(value, dtype=float, copy=True))
        return self._buffer[0]


def delayed_signal(buffer: DelayLine, value, delay: float):
    """Push `value` through `buffer` and return the delayed output"""
    if delay < 0:
        raise NegativeDelay(f"delay must be >= 0, got {delay}")
    return buffer.push(value)


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled trajectory with derived outputs"""

    net: ValidatedNetwork
    layout: StateLayout
    t: np.ndarray
    x: np.ndarray                 # samples x dim
    segment: np.ndarray           # load segment active at each sample
    grid_index: np.ndarray        # integration step index of each sample
    p_gen: np.ndarray
    p_dc: np.ndarray
    p_x: np.ndarray
    p_f_ac: np.ndarray
    p_f_dc: np.ndarray
    omega_x: np.ndarray
    v_bar: np.ndarray
    omega_hat: np.ndarray
    v_dot: np.ndarray
    p_l_dc: np.ndarray            # DC loads active at each sample
    dt: float = DEFAULT_DT         # integration step
    segment_starts: Tuple[int, ...] = (0,)

    def steady_load_step(self, k: int) -> bool:
        """True when loads are constant over the recorded step k -> k + 1"""
        lo, hi = self.grid_index[k], self.grid_index[k + 1]
        return not any(lo < s < hi for s in self.segment_starts)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, k: int) -> SystemState:
        return self.layout.unpack(self.x[k], float(self.t[k]))

    @property
    def final(self) -> SystemState:
        return self.state(len(self.t) - 1)

    @property
    def eta(self) -> np.ndarray:
        return self.x[:, self.layout.eta]

    @property
    def omega_g(self) -> np.ndarray:
        return self.x[:, self.layout.omega_g]

    @property
    def v(self) -> np.ndarray:
        return self.x[:, self.layout.v]

    @property
    def xi(self) -> np.ndarray:
        return self.x[:, self.layout.xi]

    def omega_ac(self) -> np.ndarray:
        """Frequencies over all AC buses (samples x AC buses)"""
        out = np.zeros((len(self.t), len(self.net.ac_buses)))
        out[:, self.net.gen_pos] = self.omega_g
        out[:, self.net.conv_pos] = self.omega_x
        return out

    def to_frame(self) -> pd.DataFrame:
        net = self.net
        columns = {"t": self.t}
        for k, line in enumerate(net.ac_lines):
            columns[f"eta:{line.id}"] = self.eta[:, k]
        omega = self.omega_ac()
        for k, bus in enumerate(net.ac_buses):
            columns[f"omega:{bus}"] = omega[:, k]
        for k, bus in enumerate(net.dc_buses):
            columns[f"v:{bus}"] = self.v[:, k]
        for k, node in enumerate(net.comm_nodes if self.layout.mode == SECONDARY else []):
            columns[f"xi:{node}"] = self.xi[:, k]
        for k, bus in enumerate(net.gen_buses):
            columns[f"pg:{bus}"] = self.p_gen[:, k]
        for k, bus in enumerate(net.dc_buses):
            columns[f"pg:{bus}"] = self.p_dc[:, k]
        for k, conv in enumerate(net.converters):
            columns[f"px:{conv.id}"] = self.p_x[:, k]
        for k, name in enumerate(net.dc_subsystem_names):
            columns[f"vbar:{name}"] = self.v_bar[:, k]
        return pd.DataFrame(columns)

    def to_csv(self, path) -> str:
        self.to_frame().to_csv(path, index=False, float_format="%.12e", encoding="utf-8")
        return str(path)


def _check_finite(x: np.ndarray, t: float):
    peak = np.abs(x).max(initial=0.0)
    if peak <= DIVERGENCE_LIMIT:
        return
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(t, "NaN or Inf in state")
    raise NonFiniteState(t, f"|state| exceeded {DIVERGENCE_LIMIT:g}")


def integrate(initial: SystemState, net: ValidatedNetwork, controllers,
              sched: Optional[DisturbanceSchedule], t_end: float,
              dt: float = DEFAULT_DT, record_every: int = 1) -> Trajectory:
    """
    Integrate the closed loop with classical fixed-step RK4

    Args:
        initial: Initial state (initial.t is the start time)
        net: Validated network
        controllers: ControllerConfig or bound ControllerGains
        sched: Load steps, applied at the first grid point at or after their time
        t_end: Final time (s)
        dt: Step size (s)
        record_every: Record one sample every this many steps

    Returns:
        Trajectory
    """
    if not dt > 0:
        raise HybridGridError(f"dt must be > 0, got {dt}")
    if not t_end > initial.t:
        raise HybridGridError("t_end must be after the initial time")
    if record_every < 1:
        raise HybridGridError("record_every must be >= 1")

    loop = ClosedLoop(net, controllers)
    gains = loop.gains
    sched = sched or DisturbanceSchedule()
    t0 = float(initial.t)
    n_steps = int(math.ceil((t_end - t0) / dt - 1e-9))

    segments = sched.grid_segments(net, t0, dt)
    seg_loads = [net.load_vectors(loads) for _, loads in segments]
    seg_starts = [k for k, _ in segments]

    use_delay = gains.mode == SECONDARY and gains.comm_delay > 0
    if use_delay:
        vbar_line = DelayLine(gains.comm_delay, dt)
        xi_line = DelayLine(gains.comm_delay, dt)

    x = loop.layout.pack(initial)
    _check_finite(x, t0)
    form = loop.affine_form(delayed=use_delay)
    seg_offsets = [form.offset(p_ac, p_dc) for p_ac, p_dc in seg_loads]

    samples_t, samples_x, samples_seg, samples_k, samples_load, outs = [], [], [], [], [], []
    seg = 0
    for k in range(n_steps + 1):
        while seg + 1 < len(seg_starts) and seg_starts[seg + 1] <= k:
            seg += 1
        offset = seg_offsets[seg]
        t_k = t0 + k * dt

        delayed = None
        if use_delay:
            delayed = (vbar_line.push(net.S @ x[loop.layout.v]),
                       xi_line.push(x[loop.layout.xi]))
            offset = offset + form.k_delayed @ np.concatenate(delayed)

        if k % record_every == 0 or k == n_steps:
            p_ac, p_dc = seg_loads[seg]
            samples_t.append(t_k)
            samples_x.append(x.copy())
            samples_seg.append(seg)
            samples_k.append(k)
            samples_load.append(p_dc)
            outs.append(loop.evaluate(x, p_ac, p_dc, delayed, outputs=True)[1])
        if k == n_steps:
            break

        k1 = form(x, offset)
        k2 = form(x + 0.5 * dt * k1, offset)
        k3 = form(x + 0.5 * dt * k2, offset)
        k4 = form(x + dt * k3, offset)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_finite(x, t0 + (k + 1) * dt)

    logger.debug("integrated %d steps (%d samples) in %s mode", n_steps, len(samples_t),
                 gains.mode)

    def stack(name):
        return np.array([getattr(o, name) for o in outs])

    return Trajectory(
        net=net, layout=loop.layout, t=np.array(samples_t), x=np.array(samples_x),
        segment=np.array(samples_seg, dtype=int), grid_index=np.array(samples_k, dtype=int),
        p_gen=stack("p_gen"), p_dc=stack("p_dc"), p_x=stack("p_x"),
        p_f_ac=stack("p_f_ac"), p_f_dc=stack("p_f_dc"), omega_x=stack("omega_x"),
        v_bar=stack("v_bar"), omega_hat=stack("omega_hat"), v_dot=stack("v_dot"),
        p_l_dc=np.array(samples_load), dt=dt, segment_starts=tuple(seg_starts),
    )


# ---------------------------------------------------------------------------
# Linearization helpers
# ---------------------------------------------------------------------------

def numerical_jacobian(func, x: np.ndarray, rel_step: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian of a vector function"""
    eps = rel_step * np.maximum(1.0, np.abs(x))
    jac = approx_fprime(x, func, eps)
    return np.atleast_2d(jac)


def stable_time_step(state: SystemState, net: ValidatedNetwork, controllers,
                     loads: Optional[Dict[str, float]] = None) -> float:
    """
    Largest RK4 step keeping the linearized spectrum inside the stability region

    Returns:
        dt bound in seconds (inf when the linearization has no dynamics)
    """
    loop = ClosedLoop(net, controllers)
    p_ac, p_dc = net.load_vectors(loads if loads is not None else net.nominal_loads())
    x0 = loop.layout.pack(state)
    if x0.size == 0:
        return math.inf
    jac = numerical_jacobian(lambda z: loop.evaluate(z, p_ac, p_dc), x0)
    radius = float(np.max(np.abs(np.linalg.eigvals(jac))))
    if radius == 0:
        return math.inf
    return RK4_STABILITY_RADIUS / radius
