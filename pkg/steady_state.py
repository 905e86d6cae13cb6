"""
Equilibria, optimal dispatch and power-sharing metrics

The equilibrium solver runs a damped Newton iteration on the closed-loop
derivative. Angles are parametrized by bus angles theta with the lowest-index
bus of every AC subsystem pinned to zero, so eta = A^T theta stays consistent
on meshed AC graphs. The eta rows of the derivative are replaced by the
frequency synchronization conditions omega_j = omega_ref within each AC
subsystem.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from controllers import ControllerGains, generation_by_bus
from dynamics import (
    ClosedLoop,
    DerivedOutputs,
    DisturbanceSchedule,
    SystemState,
    numerical_jacobian,
)
from errors import AllCostsInfinite, NoConvergence, SecurityViolation, SingularJacobian
from network_model import ValidatedNetwork, scale_dc_resistance, validate_network

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
MAX_HALVINGS = 30


@dataclass
class EquilibriumPoint:
    state: SystemState
    residual_norm: float
    security_ok: bool
    derived: DerivedOutputs
    loads: Dict[str, float]
    iterations: int = 0

    @property
    def max_angle(self) -> float:
        return float(np.max(np.abs(self.state.eta), initial=0.0))


@dataclass
class DispatchSolution:
    p_g_star: np.ndarray   # over net.spec.buses
    cost: float
    multiplier: float

    def by_bus(self, net: ValidatedNetwork) -> Dict[str, float]:
        return {b.id: float(p) for b, p in zip(net.spec.buses, self.p_g_star)}


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def optimal_dispatch(p_l, p_u, q_tilde) -> DispatchSolution:
    """
    Minimizer of 1/2 sum p_j^2 / q_j subject to 1^T p = 1^T (p_l + p_u)

    Args:
        p_l: Loads (any index space shared with p_u and q_tilde)
        p_u: Uncontrollable damping power, D omega at AC generator buses
        q_tilde: Inverse cost coefficients, 0 where no controllable source

    Returns:
        DispatchSolution with p* = q * lambda
    """
    q = np.asarray(q_tilde, dtype=float)
    total = float(np.sum(p_l) + np.sum(p_u))
    q_sum = float(np.sum(q))
    if q_sum <= 0:
        raise AllCostsInfinite("all inverse cost coefficients are zero")
    multiplier = total / q_sum
    p_star = q * multiplier
    sources = q > 0
    cost = 0.5 * float(np.sum(p_star[sources] ** 2 / q[sources]))
    return DispatchSolution(p_g_star=p_star, cost=cost, multiplier=multiplier)


def damping_power(omega_g: np.ndarray, net: ValidatedNetwork) -> np.ndarray:
    """p^u over net.spec.buses: D omega at AC generator buses, zero elsewhere"""
    p_u = dict(zip(net.gen_buses, net.D * omega_g))
    return np.array([p_u.get(b.id, 0.0) for b in net.spec.buses])


def dispatch_for(net: ValidatedNetwork, loads: Dict[str, float],
                 omega_g: np.ndarray) -> DispatchSolution:
    """Optimal dispatch for `loads`, with p^u taken from the generator frequencies"""
    p_l = np.array([loads.get(b.id, 0.0) for b in net.spec.buses])
    q = np.array([b.q for b in net.spec.buses])
    return optimal_dispatch(p_l, damping_power(omega_g, net), q)


def reference_dispatch(eq: EquilibriumPoint, net: ValidatedNetwork) -> DispatchSolution:
    return dispatch_for(net, eq.loads, eq.state.omega_g)


def generation_vector(net: ValidatedNetwork, p_gen: np.ndarray, p_dc: np.ndarray) -> np.ndarray:
    """Generation over net.spec.buses"""
    by_bus = generation_by_bus(net, p_gen, p_dc)
    return np.array([by_bus[b.id] for b in net.spec.buses])


def steady_generation(eq: EquilibriumPoint, net: ValidatedNetwork) -> np.ndarray:
    return generation_vector(net, eq.derived.p_gen, eq.derived.p_dc)


def power_sharing_error(p_g_steady, dispatch: DispatchSolution) -> float:
    p = np.asarray(p_g_steady, dtype=float)
    ref = dispatch.p_g_star
    return float(np.linalg.norm(p - ref) / max(np.linalg.norm(ref), 1e-12))


def per_source_output(eq: EquilibriumPoint, net: ValidatedNetwork) -> Dict[str, float]:
    """Output per individual source unit at every bus with q > 0"""
    p = steady_generation(eq, net)
    return {b.id: float(p_j / b.units) for b, p_j in zip(net.spec.buses, p) if b.q > 0}


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------

class _EquilibriumProblem:
    def __init__(self, loop: ClosedLoop, loads: Dict[str, float]):
        net = loop.net
        self.loop = loop
        self.net = net
        self.p_ac, self.p_dc = net.load_vectors(loads)

        refs, pairs = set(), []
        for members in net.ac_subsystems.values():
            idx = sorted(net.ac_index[b] for b in members)
            refs.add(idx[0])
            pairs.extend((j, idx[0]) for j in idx[1:])
        self.free = np.array([i for i in range(len(net.ac_buses)) if i not in refs], dtype=int)
        self.sync_rows = np.array([j for j, _ in pairs], dtype=int)
        self.sync_refs = np.array([r for _, r in pairs], dtype=int)
        self.reduced_incidence = net.A_ac[self.free, :].T   # lines x free buses
        self.n_theta = len(self.free)

    def to_x(self, z: np.ndarray) -> np.ndarray:
        eta = self.reduced_incidence @ z[:self.n_theta]
        return np.concatenate([eta, z[self.n_theta:]])

    def to_z(self, state: SystemState) -> np.ndarray:
        x = self.loop.layout.pack(state)
        lay = self.loop.layout
        if self.n_theta:
            theta = scipy.linalg.lstsq(self.reduced_incidence, x[lay.eta])[0]
        else:
            theta = np.zeros(0)
        return np.concatenate([theta, x[lay.eta.stop:]])

    def residual(self, z: np.ndarray) -> np.ndarray:
        x = self.to_x(z)
        dx, out = self.loop.evaluate(x, self.p_ac, self.p_dc, outputs=True)
        lay, net = self.loop.layout, self.net
        omega_ac = np.zeros(len(net.ac_buses))
        omega_ac[net.gen_pos] = x[lay.omega_g]
        omega_ac[net.conv_pos] = out.omega_x
        sync = omega_ac[self.sync_rows] - omega_ac[self.sync_refs]
        return np.concatenate([sync, dx[lay.eta.stop:]])


def _newton_step(jac: np.ndarray, r: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(jac, -r)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as e:
            raise SingularJacobian(f"equilibrium Jacobian is singular: {e}") from e


def find_equilibrium(net: ValidatedNetwork, controllers, p_l: Optional[Dict[str, float]] = None,
                     initial_guess: Optional[SystemState] = None, tol: float = NEWTON_TOL,
                     max_iter: int = NEWTON_MAX_ITER,
                     require_security: bool = False) -> EquilibriumPoint:
    """
    Damped Newton solve of the closed-loop equilibrium conditions

    Args:
        net: Validated network
        controllers: ControllerConfig or ControllerGains; communication delay is ignored
        p_l: Loads per bus (defaults to the nominal loads)
        initial_guess: Starting state (defaults to zero deviations)
        tol: Stop when the infinity norm of the residual falls below this
        max_iter: Iteration limit
        require_security: Raise SecurityViolation instead of flagging

    Returns:
        EquilibriumPoint
    """
    loop = ClosedLoop(net, controllers)
    loads = dict(p_l) if p_l is not None else net.nominal_loads()
    problem = _EquilibriumProblem(loop, loads)

    z = problem.to_z(initial_guess if initial_guess is not None else loop.layout.zeros())
    r = problem.residual(z)
    norm = float(np.max(np.abs(r), initial=0.0))

    def point(z_k, norm_k, iterations):
        x = problem.to_x(z_k)
        derived = loop.evaluate(x, problem.p_ac, problem.p_dc, outputs=True)[1]
        state = loop.layout.unpack(x)
        secure = bool(np.all(np.abs(state.eta) < math.pi / 2))
        return EquilibriumPoint(state=state, residual_norm=norm_k, security_ok=secure,
                                derived=derived, loads=loads, iterations=iterations)

    iterations = 0
    while norm >= tol:
        if iterations >= max_iter:
            raise NoConvergence(point(z, norm, iterations), norm, iterations)
        jac = numerical_jacobian(problem.residual, z)
        step = _newton_step(jac, r)

        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            z_try = z + alpha * step
            r_try = problem.residual(z_try)
            norm_try = float(np.max(np.abs(r_try)))
            if np.isfinite(norm_try) and norm_try < norm:
                break
            alpha *= 0.5
        else:
            raise NoConvergence(point(z, norm, iterations), norm, iterations)

        z, r, norm = z_try, r_try, norm_try
        iterations += 1
        logger.debug("newton iteration %d: residual %.3e (step %.3g)", iterations, norm, alpha)

    eq = point(z, norm, iterations)
    if not eq.security_ok:
        if require_security:
            raise SecurityViolation(eq, eq.max_angle)
        logger.warning("equilibrium violates |eta| < pi/2 (max |eta| = %.4f rad)", eq.max_angle)
    return eq


def segment_equilibria(net: ValidatedNetwork, controllers, sched: DisturbanceSchedule,
                       t0: float, dt: float) -> List[EquilibriumPoint]:
    """One equilibrium per constant-load segment of the schedule on the grid"""
    gains = controllers if isinstance(controllers, ControllerGains) \
        else ControllerGains(controllers, net)
    points, guess = [], None
    for _, loads in sched.grid_segments(net, t0, dt):
        eq = find_equilibrium(net, gains, loads, initial_guess=guess)
        points.append(eq)
        guess = eq.state
    return points


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepPoint:
    scale: float
    error: float
    omega_max: float
    vbar_max: float
    security_ok: bool


@dataclass
class SweepReport:
    points: List[SweepPoint]

    @property
    def monotone_decreasing(self) -> bool:
        errors = [p.error for p in self.points]
        return all(b < a for a, b in zip(errors, errors[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(p) for p in self.points],
                            columns=["scale", "error", "omega_max", "vbar_max", "security_ok"])

    def to_csv(self, path) -> str:
        self.to_frame().to_csv(path, index=False, float_format="%.12e", encoding="utf-8")
        return str(path)


def equilibrium_summary(eq: EquilibriumPoint, net: ValidatedNetwork):
    """(sharing error vs. optimal dispatch, max |omega| over AC buses, max |V_bar|)"""
    error = power_sharing_error(steady_generation(eq, net), reference_dispatch(eq, net))
    omega = np.concatenate([eq.state.omega_g, eq.derived.omega_x])
    omega_max = float(np.max(np.abs(omega), initial=0.0))
    vbar_max = float(np.max(np.abs(eq.derived.v_bar), initial=0.0))
    return error, omega_max, vbar_max


def resistance_sweep(spec, controllers, p_l: Optional[Dict[str, float]],
                     scale_factors: Sequence[float]) -> SweepReport:
    """
    Equilibrium sharing error as all DC line resistances are scaled (G <- G / s)

    Args:
        spec: NetworkSpec or ValidatedNetwork
        controllers: ControllerConfig
        p_l: Loads per bus (defaults to the nominal loads)
        scale_factors: Positive resistance scale factors

    Returns:
        SweepReport in the order of scale_factors
    """
    if isinstance(spec, ValidatedNetwork):
        spec = spec.spec
    points, guess = [], None
    for s in scale_factors:
        net = validate_network(scale_dc_resistance(spec, s))
        eq = find_equilibrium(net, controllers, p_l, initial_guess=guess)
        guess = eq.state
        error, omega_max, vbar_max = equilibrium_summary(eq, net)
        logger.debug("resistance scale %g: sharing error %.3e", s, error)
        points.append(SweepPoint(scale=float(s), error=error, omega_max=omega_max,
                                 vbar_max=vbar_max, security_ok=eq.security_ok))
    return SweepReport(points)
