"""One-phase Stefan plant on a boundary-immobilized grid.

The liquid temperature T(x,t) lives on [0, s(t)] with a controlled heat
flux at x=0, the melting temperature pinned at the interface, and the
interface driven by the Stefan condition s' = -beta * T_x(s,t).  Profiles
are stored on the normalized coordinate xi = x/s in [0, 1], which turns
the moving domain into a fixed one at the price of a convection term
xi * s'/s * theta_xi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import diffusion_stable_step, integrate_trapezoid, rk4_step

S_MIN_FRACTION = 1e-6  # degenerate-start guard relative to domain length


@dataclass(frozen=True)
class StefanParams:
    """Physical constants of the liquid phase."""

    k: float            # conductivity, W/m/K
    rho: float          # density, kg/m^3
    cp: float           # heat capacity, J/kg/K
    latent: float       # latent heat, J/kg
    t_melt: float       # melting temperature
    domain_length: float  # total material length L, m

    def __post_init__(self):
        for name in ("k", "rho", "cp", "latent", "domain_length"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"StefanParams.{name} must be positive")

    @property
    def alpha(self) -> float:
        return self.k / (self.rho * self.cp)

    @property
    def beta(self) -> float:
        return self.k / (self.rho * self.latent)

    @staticmethod
    def normalized(domain_length: float = 2.0) -> "StefanParams":
        """Unit-coefficient material (alpha = beta = 1) for property tests."""
        return StefanParams(k=1.0, rho=1.0, cp=1.0, latent=1.0,
                            t_melt=0.0, domain_length=domain_length)

    @staticmethod
    def zinc_like() -> "StefanParams":
        """Molten-zinc-scale constants (non-tabulated defaults)."""
        return StefanParams(k=116.0, rho=6570.0, cp=389.5, latent=112000.0,
                            t_melt=419.5, domain_length=0.25)


@dataclass
class StefanState:
    """Interface position s, temperature samples theta on xi in [0,1], time."""

    s: float
    theta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)

    @property
    def n(self) -> int:
        return self.theta.size


@dataclass
class HeatInput:
    """Boundary heat flux q_c(t) at x = 0."""

    func: Callable[[float], float]
    nonnegative: bool = True

    def __call__(self, t: float) -> float:
        q = float(self.func(t))
        if not np.isfinite(q):
            raise ValueError(f"heat input not finite at t={t}")
        return q

    @staticmethod
    def constant(q: float) -> "HeatInput":
        return HeatInput(lambda t: q, nonnegative=q >= 0.0)


def interface_gradient(theta: np.ndarray, dxi: float) -> float:
    """2nd-order one-sided theta_xi at xi = 1."""
    return (3.0 * theta[-1] - 4.0 * theta[-2] + theta[-3]) / (2.0 * dxi)


def immobilized_rhs(state: StefanState, params: StefanParams, q_c: float):
    """Time derivatives (dtheta, ds) of the immobilized Stefan system.

    theta_t = (alpha/s^2) theta_xixi + xi (s'/s) theta_xi
    theta_xi(0) = -q_c * s / k   (flux at the heated face)
    theta(1)    = t_melt          (pinned, dtheta[-1] = 0)
    s'          = -(beta/s) theta_xi(1)
    """
    s = state.s
    if s <= 0.0:
        raise ValueError("immobilized_rhs requires s > 0")
    if not (np.isfinite(q_c) and np.all(np.isfinite(state.theta))):
        raise ValueError("non-finite input to immobilized_rhs")
    theta = state.theta
    n = theta.size
    dxi = 1.0 / (n - 1)
    alpha, beta, k = params.alpha, params.beta, params.k

    ds = -(beta / s) * interface_gradient(theta, dxi)

    dtheta = np.zeros_like(theta)
    # interior second derivative
    lap = np.empty_like(theta)
    lap[1:-1] = (theta[2:] - 2.0 * theta[1:-1] + theta[:-2]) / dxi**2
    # ghost node at xi = -dxi from the Neumann condition
    g0 = -q_c * s / k
    lap[0] = 2.0 * (theta[1] - theta[0] - dxi * g0) / dxi**2
    # convection from the moving grid
    conv = np.zeros_like(theta)
    xi = np.linspace(0.0, 1.0, n)
    conv[1:-1] = xi[1:-1] * (ds / s) * (theta[2:] - theta[:-2]) / (2.0 * dxi)
    dtheta[:-1] = (alpha / s**2) * lap[:-1] + conv[:-1]
    dtheta[-1] = 0.0  # Dirichlet: stays at t_melt
    return dtheta, ds


@dataclass
class StateDiagnostics:
    min_margin: float          # min(theta - t_melt)
    margin_low: float          # distance of s from 0
    margin_high: float         # distance of s from L
    valid: bool
    argmin: int = 0


def validate_state(state: StefanState, params: StefanParams,
                   tol: float = 0.0) -> StateDiagnostics:
    """Model-validity diagnostics: theta >= t_melt and 0 < s < L."""
    margin = state.theta - params.t_melt
    i = int(np.argmin(margin))
    min_margin = float(margin[i])
    low = state.s
    high = params.domain_length - state.s
    valid = (min_margin >= -tol) and (low > 0.0) and (high > 0.0)
    return StateDiagnostics(min_margin=min_margin, margin_low=low,
                            margin_high=high, valid=valid, argmin=i)


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    halted: bool = False
    halt_reason: str = ""

    def times(self) -> np.ndarray:
        return np.array([st.time for st in self.states])

    def interface(self) -> np.ndarray:
        return np.array([st.s for st in self.states])


def _check_initial_data(params, s0, theta0):
    if not (0.0 < s0 < params.domain_length):
        raise ValueError(f"s0 = {s0} must lie inside (0, {params.domain_length})")
    if s0 < S_MIN_FRACTION * params.domain_length:
        raise ValueError("degenerate start: s0 below s_min")
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.size < 3:
        raise ValueError("initial profile needs at least 3 nodes")
    if np.min(theta0) < params.t_melt - 1e-9 * max(1.0, abs(params.t_melt)):
        raise ValueError("initial profile dips below the melting temperature")
    if abs(theta0[-1] - params.t_melt) > 1e-9 * max(1.0, abs(params.t_melt)):
        raise ValueError("initial profile must equal t_melt at the interface")
    return theta0


def simulate(params: StefanParams, heat: HeatInput, s0: float,
             theta0: Sequence[float], t_end: float,
             safety: float = 0.4, output_stride: int = 100,
             strict: bool = False, max_steps: int = 20_000_000) -> Trajectory:
    """Explicit-RK4 simulation of the Stefan plant.

    The step obeys the diffusion bound h <= safety * dxi^2 / (2 alpha/s^2),
    re-evaluated as s evolves.  Halts with a diagnostic if the interface
    leaves (0, L).
    """
    theta0 = _check_initial_data(params, s0, theta0)
    n = theta0.size
    dxi = 1.0 / (n - 1)
    s_min = S_MIN_FRACTION * params.domain_length

    state = StefanState(s=s0, theta=theta0.copy(), time=0.0)
    traj = Trajectory(states=[StefanState(s=s0, theta=theta0.copy(), time=0.0)])

    t = 0.0
    steps = 0
    while t < t_end:
        h = diffusion_stable_step(dxi, params.alpha / state.s**2, safety)
        h = min(h, t_end - t)
        if h < 1e-15 * max(t_end, 1.0):
            traj.halted = True
            traj.halt_reason = "step-size underflow"
            break

        def rhs(tt, y):
            st = StefanState(s=y[-1], theta=y[:-1], time=tt)
            dtheta, ds = immobilized_rhs(st, params, heat(tt))
            return np.concatenate([dtheta, [ds]])

        y = np.concatenate([state.theta, [state.s]])
        y = rk4_step(rhs, t, y, h)
        t += h
        state = StefanState(s=float(y[-1]), theta=y[:-1], time=t)
        steps += 1

        if state.s <= s_min or state.s >= params.domain_length:
            traj.halted = True
            traj.halt_reason = f"interface left the domain (s={state.s:.3g})"
            traj.states.append(state)
            break
        diag = validate_state(state, params, tol=1e-9 * max(1.0, abs(params.t_melt)))
        if not diag.valid:
            msg = f"validity violation at t={t:.4g}: min margin {diag.min_margin:.3g}"
            if strict:
                traj.halted = True
                traj.halt_reason = msg
                traj.states.append(state)
                break
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        if steps % output_stride == 0 or t >= t_end:
            traj.states.append(StefanState(s=state.s, theta=state.theta.copy(), time=t))
        if steps >= max_steps:
            traj.halted = True
            traj.halt_reason = "max step count exceeded"
            break
    if not traj.halted and traj.states[-1].time < t:
        traj.states.append(StefanState(s=state.s, theta=state.theta.copy(), time=t))
    return traj


def lumped_energy(state: StefanState, params: StefanParams) -> float:
    """E = (1/alpha) int_0^s (T - Tm) dx + s / beta."""
    n = state.theta.size
    dxi = 1.0 / (n - 1)
    integral = state.s * integrate_trapezoid(state.theta - params.t_melt, dxi)
    return integral / params.alpha + state.s / params.beta


def energy_balance(traj: Trajectory, heat: HeatInput, params: StefanParams) -> np.ndarray:
    """Residual time series E(t) - E(0) - int_0^t q_c/k dt.

    The lumped identity d/dt [ (1/alpha) int (T-Tm) dx + s/beta ] = q_c/k
    follows from the plant equations; its discrete residual quantifies the
    scheme's conservation error.
    """
    if len(traj.states) < 2:
        raise ValueError("energy_balance needs a trajectory with >= 2 samples")
    times = traj.times()
    e = np.array([lumped_energy(st, params) for st in traj.states])
    q = np.array([heat(t) for t in times]) / params.k
    trapz = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(times))])
    return e - e[0] - trapz
