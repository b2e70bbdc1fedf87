"""Backstepping observers for the one-phase Stefan plant.

Three estimators are provided:

* full-state observer -- measures the interface position Y1 = s(t) and the
  boundary temperature Y2 = T(0,t); injects through the closed-form gains
  p1(x, Y1), p2(Y1).
* joint observer -- measures only Y = T(0,t); runs the same PDE observer on
  its own estimated domain [0, s_hat] plus an interface ODE with injection
  gain l.
* baseline observer -- copy of the plant (no PDE injection) with the same
  interface ODE; the comparison reference.

Gains derive from Volterra transformation kernels P, Q solving a Goursat
problem on the triangle 0 <= y <= x <= D; closed forms use I1, I2 and J1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import (bessel_ratio_i, bessel_ratio_j1, diffusion_stable_step,
                       integrate_trapezoid, rk4_step)
from .stefan import HeatInput, StefanParams, StefanState, immobilized_rhs

S_HAT_MIN_FRACTION = 1e-6


@dataclass(frozen=True)
class FullObserverConfig:
    lam: float  # gain parameter, 1/s

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lambda must be >= 0 (0 disables injection)")


@dataclass(frozen=True)
class JointObserverConfig:
    lam: float
    l_gain: float  # interface injection gain

    def __post_init__(self):
        if self.lam < 0.0 or self.l_gain < 0.0:
            raise ValueError("joint observer gains must be >= 0")


@dataclass
class ObserverState:
    s_hat: float
    theta_hat: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)


def gain_p1(x, s_meas: float, lam: float, alpha: float):
    """Interior injection gain of the full-state observer (theorem form).

    p1 = lambda * s * (s - x) * I2(z) / (s^2 - (x-s)^2),
    z = sqrt(lambda/alpha * (s^2 - (x-s)^2)); since the denominator equals
    (alpha/lambda) z^2 the evaluation reduces to the I2/z^2 ratio, which is
    regular at x = 0.
    """
    if s_meas <= 0.0:
        raise ValueError("gain_p1 requires s_meas > 0")
    xarr = np.asarray(x, dtype=float)
    if np.any(xarr < -1e-12 * s_meas) or np.any(xarr > s_meas * (1.0 + 1e-12)):
        raise ValueError("gain_p1 requires 0 <= x <= s_meas")
    xarr = np.clip(xarr, 0.0, s_meas)
    arg = s_meas**2 - (xarr - s_meas) ** 2
    z = np.sqrt(np.maximum(lam / alpha * arg, 0.0))
    val = (lam**2 / alpha) * s_meas * (s_meas - xarr) * bessel_ratio_i(2, z)
    return float(val) if np.isscalar(x) or np.asarray(x).ndim == 0 else val


def gain_p2(s_meas: float, lam: float, alpha: float) -> float:
    """Boundary injection gain p2 = -lambda * s / (2 alpha)."""
    return -lam * s_meas / (2.0 * alpha)


@dataclass
class KernelSet:
    """Closed-form Goursat kernels on the triangle 0 <= y <= x <= D."""

    lam: float
    alpha: float
    D: float

    def _zeta(self, x, y):
        lp = self.lam / self.alpha
        arg = (self.D - np.asarray(y, dtype=float)) ** 2 - (self.D - np.asarray(x, dtype=float)) ** 2
        return np.sqrt(np.maximum(lp * arg, 0.0))

    def P(self, x, y):
        """Direct kernel: P(x,y) = lambda' (D-x) I1(zeta)/zeta."""
        lp = self.lam / self.alpha
        return lp * (self.D - np.asarray(x, dtype=float)) * bessel_ratio_i(1, self._zeta(x, y))

    def Q(self, x, y):
        """Inverse kernel: Q = P evaluated at -lambda, i.e. with J1."""
        lp = self.lam / self.alpha
        return -lp * (self.D - np.asarray(x, dtype=float)) * bessel_ratio_j1(self._zeta(x, y))


def kernel_solution(lam: float, alpha: float, D: float) -> KernelSet:
    if D <= 0.0:
        raise ValueError("kernel domain D must be positive")
    return KernelSet(lam=lam, alpha=alpha, D=D)


def kernel_residual(kernels: KernelSet, grid_n: int) -> float:
    """Max discrete Goursat residual over the interior triangle for P and Q.

    P_xx - P_yy + (lambda/alpha) P = 0 and the Q analogue with -lambda;
    both are checked with centered 2nd-order stencils.
    """
    if grid_n < 16:
        raise ValueError("kernel_residual needs grid_n >= 16")
    D = kernels.D
    h = D / grid_n
    lp = kernels.lam / kernels.alpha
    worst = 0.0
    for fn, sign in ((kernels.P, +1.0), (kernels.Q, -1.0)):
        xs = []
        ys = []
        for i in range(1, grid_n):
            x = i * h
            # keep the full 5-point stencil inside y <= x
            jmax = i - 1
            for j in range(0, jmax):
                xs.append(x)
                ys.append(j * h)
        if not xs:
            continue
        x = np.array(xs)
        y = np.array(ys)
        pxx = (fn(x + h, y) - 2.0 * fn(x, y) + fn(x - h, y)) / h**2
        pyy = (fn(x, y + h) - 2.0 * fn(x, y) + fn(x, y - h)) / h**2
        res = pxx - pyy + sign * lp * fn(x, y)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def volterra_apply(kernel: Callable, profile: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """(K f)(x) = f(x) + int_0^x K(x,y) f(y) dy by trapezoid on a shared grid."""
    n = grid.size
    out = profile.astype(float).copy()
    for i in range(1, n):
        x = grid[i]
        y = grid[: i + 1]
        kern = np.asarray(kernel(np.full(i + 1, x), y), dtype=float)
        dx = grid[1] - grid[0]
        out[i] += integrate_trapezoid(kern * profile[: i + 1], dx)
    return out


def _observer_core(theta_hat: np.ndarray, domain: float, domain_dot: float,
                   q_c: float, params: StefanParams, p1_profile, p2_value,
                   innovation: float) -> np.ndarray:
    """Shared discretization of plant copy + output injection on [0, domain]."""
    n = theta_hat.size
    dxi = 1.0 / (n - 1)
    alpha, k = params.alpha, params.k
    s = domain
    lap = np.empty_like(theta_hat)
    lap[1:-1] = (theta_hat[2:] - 2.0 * theta_hat[1:-1] + theta_hat[:-2]) / dxi**2
    # Neumann at xi=0: theta_xi(0) = s * (-q_c/k + p2 * innovation)
    g0 = s * (-q_c / k + p2_value * innovation)
    lap[0] = 2.0 * (theta_hat[1] - theta_hat[0] - dxi * g0) / dxi**2
    conv = np.zeros_like(theta_hat)
    xi = np.linspace(0.0, 1.0, n)
    conv[1:-1] = xi[1:-1] * (domain_dot / s) * (theta_hat[2:] - theta_hat[:-2]) / (2.0 * dxi)
    d = np.zeros_like(theta_hat)
    d[:-1] = (alpha / s**2) * lap[:-1] + conv[:-1] + p1_profile[:-1] * innovation
    d[-1] = 0.0  # pinned at t_melt
    return d


def observer_rhs_full(obs: ObserverState, Y1: float, Y2: float, q_c: float,
                      cfg: FullObserverConfig, params: StefanParams,
                      y1_dot: float = 0.0) -> np.ndarray:
    """Full-state observer derivatives; the domain tracks the measured Y1."""
    if not (np.isfinite(Y1) and np.isfinite(Y2)):
        raise ValueError("non-finite measurement")
    if Y1 <= 0.0:
        raise ValueError("measured interface must be positive")
    n = obs.theta_hat.size
    x = np.linspace(0.0, 1.0, n) * Y1
    p1 = gain_p1(x, Y1, cfg.lam, params.alpha) if cfg.lam > 0 else np.zeros(n)
    p2 = gain_p2(Y1, cfg.lam, params.alpha)
    innovation = Y2 - obs.theta_hat[0]
    return _observer_core(obs.theta_hat, Y1, y1_dot, q_c, params, p1, p2, innovation)


def observer_rhs_joint(obs: ObserverState, Y: float, q_c: float,
                       cfg: JointObserverConfig, params: StefanParams):
    """Joint observer: PDE on the estimated domain + interface ODE.

    ds_hat = -(beta/s_hat) theta_hat_xi(1) + l (Y - T_hat(0)).
    """
    s_hat = obs.s_hat
    if s_hat <= S_HAT_MIN_FRACTION * params.domain_length:
        raise ValueError("estimated interface collapsed below s_min")
    n = obs.theta_hat.size
    dxi = 1.0 / (n - 1)
    innovation = Y - obs.theta_hat[0]
    grad1 = (3.0 * obs.theta_hat[-1] - 4.0 * obs.theta_hat[-2] + obs.theta_hat[-3]) / (2.0 * dxi)
    ds_hat = -(params.beta / s_hat) * grad1 + cfg.l_gain * innovation
    x = np.linspace(0.0, 1.0, n) * s_hat
    p1 = gain_p1(x, s_hat, cfg.lam, params.alpha) if cfg.lam > 0 else np.zeros(n)
    p2 = gain_p2(s_hat, cfg.lam, params.alpha)
    dtheta = _observer_core(obs.theta_hat, s_hat, ds_hat, q_c, params, p1, p2, innovation)
    return dtheta, ds_hat


def baseline_observer_rhs(obs: ObserverState, Y: float, q_c: float,
                          l_gain: float, params: StefanParams):
    """Copy-of-plant PDE (no injection) + the same interface ODE."""
    cfg = JointObserverConfig(lam=0.0, l_gain=l_gain)
    return observer_rhs_joint(obs, Y, q_c, cfg, params)


def h1_error_norm(plant: StefanState, obs: ObserverState, n_common: int = 0):
    """(L2, H1-seminorm) of T - T_hat on the overlap [0, min(s, s_hat)]."""
    m = min(plant.s, obs.s_hat)
    if m <= 0.0:
        raise ValueError("empty overlap domain")
    if n_common <= 0:
        n_common = max(plant.theta.size, obs.theta_hat.size)
    x = np.linspace(0.0, m, n_common)
    tp = np.interp(x / plant.s, np.linspace(0, 1, plant.theta.size), plant.theta)
    to = np.interp(x / obs.s_hat, np.linspace(0, 1, obs.theta_hat.size), obs.theta_hat)
    diff = tp - to
    dx = x[1] - x[0]
    l2 = np.sqrt(integrate_trapezoid(diff**2, dx))
    grad = np.gradient(diff, dx)
    h1 = np.sqrt(integrate_trapezoid(grad**2, dx))
    return float(l2), float(h1)


@dataclass
class EstimationRun:
    times: np.ndarray
    plant: list            # StefanState samples
    observer: list         # ObserverState samples
    err_l2: np.ndarray
    err_h1: np.ndarray
    halted: bool = False
    halt_reason: str = ""


def simulate_estimation(params: StefanParams, heat: HeatInput,
                        s0: float, theta0: np.ndarray,
                        theta_hat0: np.ndarray, mode: str,
                        cfg, t_end: float, s_hat0: float = None,
                        safety: float = 0.4, output_stride: int = 50) -> EstimationRun:
    """Co-simulate plant and one observer with a shared RK4 step.

    mode: 'full' (measures s and T(0)), 'joint', 'baseline', or 'openloop'
    (joint structure with all gains zero).
    """
    theta0 = np.asarray(theta0, dtype=float)
    theta_hat0 = np.asarray(theta_hat0, dtype=float)
    n = theta0.size
    m = theta_hat0.size
    dxi = 1.0 / (min(n, m) - 1)
    if mode == "full":
        s_hat0 = s0
    elif s_hat0 is None:
        raise ValueError("joint/baseline modes need an initial interface estimate")
    s_min = S_HAT_MIN_FRACTION * params.domain_length

    def rhs(t, y):
        theta = y[:n]
        s = y[n]
        theta_hat = y[n + 1: n + 1 + m]
        s_hat = y[-1]
        plant_state = StefanState(s=s, theta=theta, time=t)
        q = heat(t)
        dtheta, ds = immobilized_rhs(plant_state, params, q)
        obs = ObserverState(s_hat=s_hat, theta_hat=theta_hat, time=t)
        if mode == "full":
            dth = observer_rhs_full(obs, s, theta[0], q, cfg, params, y1_dot=ds)
            dsh = ds
        elif mode == "joint":
            dth, dsh = observer_rhs_joint(obs, theta[0], q, cfg, params)
        elif mode == "baseline":
            dth, dsh = baseline_observer_rhs(obs, theta[0], q, cfg.l_gain, params)
        elif mode == "openloop":
            dth, dsh = observer_rhs_joint(
                obs, theta[0], q, JointObserverConfig(0.0, 0.0), params)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return np.concatenate([dtheta, [ds], dth, [dsh]])

    y = np.concatenate([theta0, [s0], theta_hat0, [s_hat0]])
    t = 0.0
    run = EstimationRun(times=None, plant=[], observer=[], err_l2=None, err_h1=None)
    times, l2s, h1s = [], [], []

    def record(t, y):
        plant_state = StefanState(s=float(y[n]), theta=y[:n].copy(), time=t)
        obs = ObserverState(s_hat=float(y[-1]), theta_hat=y[n + 1: n + 1 + m].copy(), time=t)
        l2, h1 = h1_error_norm(plant_state, obs)
        run.plant.append(plant_state)
        run.observer.append(obs)
        times.append(t)
        l2s.append(l2)
        h1s.append(h1)

    record(t, y)
    steps = 0
    while t < t_end:
        smallest = min(float(y[n]), float(y[-1]))
        h = diffusion_stable_step(dxi, params.alpha / smallest**2, safety)
        h = min(h, t_end - t)
        y = rk4_step(rhs, t, y, h)
        t += h
        steps += 1
        if y[-1] < s_min:
            run.halted = True
            run.halt_reason = "estimated interface collapsed"
            break
        if not (0 < y[n] < params.domain_length):
            run.halted = True
            run.halt_reason = "plant interface left the domain"
            break
        if steps % output_stride == 0 or t >= t_end:
            record(t, y)
    run.times = np.array(times)
    run.err_l2 = np.array(l2s)
    run.err_h1 = np.array(h1s)
    return run
