"""Core-shell single particle model (SPM) and state-of-charge estimators.

Plant: Fickian spherical diffusion in a representative negative particle,
and a shrinking-core positive particle whose beta-phase shell occupies
[r_p, R_p] above an alpha-phase core at concentration c_alpha; the phase
boundary r_p obeys a Stefan condition and shrinks during discharge.
Butler-Volmer kinetics with film resistance close the terminal voltage.

Estimation: a backstepping observer for the positive shell (Bessel-kernel
injection gains P(r), Q plus a kappa-weighted interface estimator), a
companion negative-electrode observer whose gains are constructed so the
estimated total lithium is conserved exactly, and an extended Kalman
filter on a coarse discretization as the comparison baseline.

Sign convention: `molar_flux` returns the *insertion* flux (positive into
the particle), so discharge current I > 0 inserts lithium into the
positive particle, raises its surface concentration, and shrinks the
core.  Butler-Volmer and the film term consume the reaction flux
j_bv = -j_insertion (positive when lithium leaves the particle).

Time stepping is semi-implicit (backward-Euler radial transport via the
Thomas solver; interface motion, injections, and couplings explicit):
the nanoscale positive shell is explicit-unstable at any practical step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .numerics import TridiagonalSystem, bessel_ratio_i, solve_tridiagonal

R_P_GUARD = 1e-3       # r_p clamped to [guard, 1-guard] * R_p
C_SS_EPS = 1e-9        # Butler-Volmer interior-concentration guard, fraction


@dataclass(frozen=True)
class ElectrodeParams:
    """Per-electrode constants (SI units)."""

    L: float          # electrode thickness, m
    c_max: float      # maximum solid concentration, mol/m^3
    R_p: float        # particle radius, m
    D_s: float        # solid diffusivity, m^2/s
    eps_s: float      # active-material volume fraction
    R_f: float        # film resistance, Ohm m^2
    R_c: float        # contact resistance, Ohm m^2
    k_rate: float     # reaction rate constant, m^2.5 mol^-0.5 s^-1

    def __post_init__(self):
        for name in ("L", "c_max", "R_p", "D_s", "eps_s", "k_rate"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"ElectrodeParams.{name} must be positive")
        if self.R_f < 0.0 or self.R_c < 0.0:
            raise ValueError("resistances must be >= 0")

    @property
    def a_s(self) -> float:
        """Specific interfacial area 3 eps_s / R_p."""
        return 3.0 * self.eps_s / self.R_p


@dataclass(frozen=True)
class CellParams:
    neg: ElectrodeParams = ElectrodeParams(
        L=50e-6, c_max=27760.0, R_p=11e-6, D_s=9e-14, eps_s=0.33,
        R_f=1e-5, R_c=0.0, k_rate=3e-5)
    pos: ElectrodeParams = ElectrodeParams(
        L=74e-6, c_max=20950.0, R_p=52e-9, D_s=8e-18, eps_s=0.27,
        R_f=0.0, R_c=6.5e-3, k_rate=3e-17)
    L_sep: float = 25e-6
    c_alpha_frac: float = 0.0480   # alpha-phase concentration / c_max,+
    c_beta_frac: float = 0.8920    # beta-phase boundary concentration / c_max,+
    c_e0: float = 1000.0           # electrolyte concentration, mol/m^3
    alpha_a: float = 0.5
    alpha_c: float = 0.5
    F_const: float = 96487.0
    R_gas: float = 8.314472
    T_abs: float = 298.0

    def __post_init__(self):
        if not (0.0 < self.c_alpha_frac < self.c_beta_frac <= 1.0):
            raise ValueError("need 0 < c_alpha < c_beta <= c_max,+")
        for name in ("c_e0", "F_const", "R_gas", "T_abs", "L_sep"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"CellParams.{name} must be positive")

    @property
    def c_alpha(self) -> float:
        return self.c_alpha_frac * self.pos.c_max

    @property
    def c_beta(self) -> float:
        return self.c_beta_frac * self.pos.c_max

    def electrode(self, which: str) -> ElectrodeParams:
        if which == "neg":
            return self.neg
        if which == "pos":
            return self.pos
        raise ValueError(f"unknown electrode {which!r}")

    def current_1c(self) -> float:
        """1C current density: nominal negative-electrode capacity per hour."""
        return self.F_const * self.neg.eps_s * self.neg.L * self.neg.c_max / 3600.0


def _fv_volumes(r: np.ndarray) -> np.ndarray:
    """Spherical finite-volume cell volumes (over 4*pi) for the node radii r.

    Cell faces sit at the midpoints, with the end cells truncated at r[0]
    and r[-1]; the volumes sum to (r[-1]^3 - r[0]^3)/3 exactly, which makes
    volume-weighted sums telescope against the face fluxes.
    """
    faces = np.empty(r.size + 1)
    faces[0], faces[-1] = r[0], r[-1]
    faces[1:-1] = 0.5 * (r[:-1] + r[1:])
    return (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0


@dataclass
class NegParticleState:
    """Concentration on a uniform radial grid over [0, R_p,-]."""

    c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)

    def c_ss(self) -> float:
        return float(self.c[-1])

    def c_avg(self, params: CellParams) -> float:
        r = np.linspace(0.0, params.neg.R_p, self.c.size)
        return 3.0 * float(np.dot(_fv_volumes(r), self.c)) / params.neg.R_p**3


@dataclass
class ShellState:
    """Beta-phase shell on a normalized grid sigma in [0,1] over [r_p, R_p,+]."""

    r_p: float
    c: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)

    def radii(self, params: CellParams) -> np.ndarray:
        sigma = np.linspace(0.0, 1.0, self.c.size)
        return self.r_p + sigma * (params.pos.R_p - self.r_p)

    def c_ss(self) -> float:
        return float(self.c[-1])

    def c_avg(self, params: CellParams) -> float:
        """Particle-volume average including the alpha core."""
        R = params.pos.R_p
        r = self.radii(params)
        shell = 3.0 * float(np.dot(_fv_volumes(r), self.c)) / R**3
        return params.c_alpha * (self.r_p / R) ** 3 + shell


class OCPCurve:
    """Monotone open-circuit-potential interpolant U(stoichiometry)."""

    def __init__(self, stoich, potential):
        x = np.asarray(stoich, dtype=float)
        u = np.asarray(potential, dtype=float)
        if x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("stoichiometry grid must be strictly increasing")
        if x[0] < 0.0 or x[-1] > 1.0:
            raise ValueError("stoichiometry must lie in [0, 1]")
        if not np.all(np.isfinite(u)):
            raise ValueError("potential table contains non-finite values")
        self._x = x
        self._interp = PchipInterpolator(x, u, extrapolate=False)

    def __call__(self, stoich):
        xarr = np.clip(np.asarray(stoich, dtype=float), self._x[0], self._x[-1])
        val = self._interp(xarr)
        return float(val) if np.isscalar(stoich) else val

    @classmethod
    def from_csv(cls, path) -> "OCPCurve":
        xs, us = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row["stoichiometry"]))
                us.append(float(row["potential"]))
        return cls(xs, us)

    @classmethod
    def default_pair(cls):
        """(U_neg, U_pos) synthetic defaults (graphite-like, LFP-like)."""
        assets = Path(__file__).parent / "assets"
        return cls.from_csv(assets / "ocp_neg.csv"), cls.from_csv(assets / "ocp_pos.csv")


def molar_flux(I: float, electrode: str, params: CellParams) -> float:
    """Insertion molar flux (positive into the particle), mol/m^2/s."""
    if not math.isfinite(I):
        raise ValueError("current density must be finite")
    el = params.electrode(electrode)
    mag = I / (el.a_s * params.F_const * el.L)
    return mag if electrode == "pos" else -mag


def _fv_diffusion(c: np.ndarray, r: np.ndarray, D: float, flux_top: float) -> np.ndarray:
    """Conservative spherical diffusion: dc_i = (F_{i+1/2} - F_{i-1/2}) / V_i.

    The inner face flux is zero (symmetry at r=0, or slaved Dirichlet cell
    at a shell interface); the outer face carries the physical surface flux
    D c_r = flux_top exactly, so volume-weighted totals balance boundary
    throughput to roundoff.
    """
    n = c.size
    dr = r[1] - r[0]
    vols = _fv_volumes(r)
    faces = 0.5 * (r[:-1] + r[1:])
    flux = np.empty(n + 1)
    flux[0] = 0.0
    flux[1:-1] = D * faces**2 * (c[1:] - c[:-1]) / dr
    flux[-1] = r[-1] ** 2 * flux_top
    return (flux[1:] - flux[:-1]) / vols


def neg_rhs(state: NegParticleState, j_ins: float, params: CellParams) -> np.ndarray:
    """Spherical diffusion with r=0 symmetry and surface flux D c_r(R) = j_ins."""
    r = np.linspace(0.0, params.neg.R_p, state.c.size)
    return _fv_diffusion(state.c, r, params.neg.D_s, j_ins)


def interface_rate(shell: ShellState, params: CellParams) -> float:
    """Stefan condition (c_beta - c_alpha) dr_p/dt = -D c_r(r_p)."""
    W = params.pos.R_p - shell.r_p
    dsig = 1.0 / (shell.c.size - 1)
    grad = (-3.0 * shell.c[0] + 4.0 * shell.c[1] - shell.c[2]) / (2.0 * dsig * W)
    return -params.pos.D_s * grad / (params.c_beta - params.c_alpha)


def shell_rhs(state: ShellState, j_ins: float, params: CellParams):
    """Immobilized-shell derivatives (dc, dr_p); inner node slaved to c_beta."""
    R, D = params.pos.R_p, params.pos.D_s
    if state.r_p <= R_P_GUARD * R:
        raise RuntimeError("phase interface reached the particle center (full lithiation)")
    if state.r_p >= (1.0 - R_P_GUARD) * R:
        raise RuntimeError("phase interface at the particle surface (no shell)")
    c = state.c
    n = c.size
    W = R - state.r_p
    dsig = 1.0 / (n - 1)
    sigma = np.linspace(0.0, 1.0, n)
    r = state.r_p + sigma * W
    dr_p = interface_rate(state, params)
    dc = _fv_diffusion(c, r, D, j_ins)
    # node velocity (1 - sigma) dr_p/dt gives the moving-mesh advection term
    grad = np.zeros(n)
    grad[1:-1] = (c[2:] - c[:-2]) / (2.0 * dsig)
    dc += (1.0 - sigma) * dr_p * grad / W
    dc[0] = 0.0
    return dc, dr_p


def exchange_current(c_ss: float, electrode: str, params: CellParams) -> float:
    """i0 = F k c_ss^alpha_c (c_e0 (c_max - c_ss))^alpha_a."""
    el = params.electrode(electrode)
    if not (C_SS_EPS * el.c_max < c_ss < (1.0 - C_SS_EPS) * el.c_max):
        raise ValueError(f"{electrode} surface concentration outside (0, c_max)")
    return params.F_const * el.k_rate * c_ss ** params.alpha_c \
        * (params.c_e0 * (el.c_max - c_ss)) ** params.alpha_a


def butler_volmer(j_bv: float, c_ss: float, electrode: str, params: CellParams) -> float:
    """Overpotential for the reaction flux j_bv (positive = delithiation).

    With alpha_a = alpha_c = 1/2 the kinetics invert in closed form:
    eta = (2 R T / F) asinh(F j_bv / (2 i0)).
    """
    if not (params.alpha_a == params.alpha_c == 0.5):
        raise NotImplementedError("closed-form inversion needs alpha_a = alpha_c = 1/2")
    i0 = exchange_current(c_ss, electrode, params)
    F, Rg, T = params.F_const, params.R_gas, params.T_abs
    return (2.0 * Rg * T / F) * math.asinh(F * j_bv / (2.0 * i0))


def terminal_voltage(neg: NegParticleState, shell: ShellState, I: float,
                     ocp_pair, params: CellParams,
                     include_contact: bool = False) -> float:
    """V = phi_+ - phi_-, phi = eta + U(c_ss/c_max) + R_f F j_bv; NaN if invalid."""
    U_neg, U_pos = ocp_pair
    F = params.F_const
    out = 0.0
    try:
        for sign, electrode, c_ss, U in (
                (+1.0, "pos", shell.c_ss(), U_pos),
                (-1.0, "neg", neg.c_ss(), U_neg)):
            el = params.electrode(electrode)
            j_bv = -molar_flux(I, electrode, params)
            eta = butler_volmer(j_bv, c_ss, electrode, params)
            phi = eta + U(c_ss / el.c_max) + el.R_f * F * j_bv
            out += sign * phi
    except ValueError:
        return math.nan
    if include_contact:
        out -= I * (params.pos.R_c + params.neg.R_c)
    return out


def total_lithium(neg: NegParticleState, shell: ShellState, params: CellParams) -> float:
    """Solid-phase lithium inventory per electrode-pair area, mol/m^2.

    The alpha core contributes c_alpha r_p^3/R^3 analytically; the shell and
    the negative particle by quadrature of their volume averages.
    """
    return params.neg.eps_s * params.neg.L * neg.c_avg(params) \
        + params.pos.eps_s * params.pos.L * shell.c_avg(params)


# ---------------------------------------------------------------------------
# Observers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatteryObserverParams:
    lam: float = 0.05          # design decay rate, 1/s
    kappa: float = 2e-8        # interface-estimator gain, m^4/(mol s)
    process_var: float = 1e2   # EKF process covariance (concentration scale^2)
    meas_var: float = 1e2      # EKF measurement covariance
    noise_std: float = 0.0     # measurement noise, mol/m^3
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0.0 or self.kappa <= 0.0:
            raise ValueError("lam and kappa must be positive")

    def lambda_bar(self, params: CellParams) -> float:
        return self.lam / params.pos.D_s


def observer_gains_pos(r_p_hat: float, obs: BatteryObserverParams,
                       params: CellParams, n: int = None, sigma=None):
    """Bessel injection gains (P profile over the shell grid, Q scalar).

    With s = R - r_hat, l(r) = r - r_hat, z = sqrt(lambda_bar (s^2 - l^2)):
    P(r) = D lambda_bar^2 (R/r) l s I2(z)/z^2  and  Q = D/R + lam s / 2.
    Both follow from the backstepping kernel p = lambda_bar x I1(zeta)/zeta
    via its boundary-trace conditions (P from the y-derivative trace, Q from
    the diagonal trace), which keeps the gains kernel-consistent.
    """
    R, D = params.pos.R_p, params.pos.D_s
    if not (R_P_GUARD * R <= r_p_hat <= (1.0 - R_P_GUARD) * R):
        raise ValueError("estimated interface outside the guarded shell range")
    if sigma is None:
        sigma = np.linspace(0.0, 1.0, 50 if n is None else n)
    sigma = np.asarray(sigma, dtype=float)
    s = R - r_p_hat
    r = r_p_hat + sigma * s
    l = r - r_p_hat
    lam_bar = obs.lam / D
    z = np.sqrt(np.maximum(lam_bar * (s**2 - l**2), 0.0))
    P = D * lam_bar**2 * (R / r) * l * s * bessel_ratio_i(2, z)
    Q = D / R + obs.lam * s / 2.0
    return P, float(Q)


def observer_rhs_pos(obs_shell: ShellState, c_ss_meas: float, j_ins: float,
                     obs: BatteryObserverParams, params: CellParams):
    """Positive-shell observer derivatives (dc, dr_p_hat).

    Plant copy on the estimated geometry plus P (c_ss - c_hat_ss) in the
    interior, Q (c_ss - c_hat_ss) added to the surface flux, and the
    interface estimator
    (c_beta - c_alpha) dr_hat/dt = -kappa (c_ss - c_hat_ss) - D dc_hat/dr(r_hat).
    """
    R, D = params.pos.R_p, params.pos.D_s
    n = obs_shell.c.size
    tilde = c_ss_meas - obs_shell.c_ss()
    P, Q = observer_gains_pos(obs_shell.r_p, obs, params,
                              sigma=np.linspace(0.0, 1.0, n))
    dc, dr_plant = shell_rhs(obs_shell, j_ins + Q * tilde, params)
    dc = dc + P * tilde
    dc[0] = 0.0
    dr_hat = -obs.kappa * tilde / (params.c_beta - params.c_alpha) + dr_plant
    return dc, dr_hat


def observer_gains_neg(r_p_hat: float, obs: BatteryObserverParams,
                       params: CellParams, n: int = 200):
    """Companion gains (P_minus, Q_minus) that conserve estimated lithium.

    Q_minus = -(a_+ L_+ / a_- L_-)(Q + kappa r_hat^2 / R^2);
    P_minus = -(eps_+ L_+ / eps_- L_-) (3/R^3) integral_{r_hat}^{R} P r^2 dr.
    """
    R = params.pos.R_p
    sigma = np.linspace(0.0, 1.0, n)
    P, Q = observer_gains_pos(r_p_hat, obs, params, sigma=sigma)
    r = r_p_hat + sigma * (R - r_p_hat)
    # finite-volume weights match the shell discretization, so the injected
    # lithium cancels discretely between the two observers
    integral = float(np.dot(_fv_volumes(r), P))
    ratio_a = (params.pos.a_s * params.pos.L) / (params.neg.a_s * params.neg.L)
    ratio_eps = (params.pos.eps_s * params.pos.L) / (params.neg.eps_s * params.neg.L)
    Q_minus = -ratio_a * (Q + obs.kappa * r_p_hat**2 / R**2)
    P_minus = -ratio_eps * 3.0 * integral / R**3
    return float(P_minus), float(Q_minus)


def observer_rhs_neg(obs_neg: NegParticleState, c_ss_tilde_pos: float,
                     j_ins: float, r_p_hat: float,
                     obs: BatteryObserverParams, params: CellParams) -> np.ndarray:
    """Negative observer: plant copy + uniform P_minus injection + Q_minus flux."""
    P_minus, Q_minus = observer_gains_neg(r_p_hat, obs, params)
    dc = neg_rhs(obs_neg, j_ins + Q_minus * c_ss_tilde_pos, params)
    return dc + P_minus * c_ss_tilde_pos


def soc(c_avg: float, electrode: str, params: CellParams,
        window=None) -> float:
    """State of charge: c_avg / c_max, or a stoichiometry window if given."""
    el = params.electrode(electrode)
    if not (-1e-9 <= c_avg <= el.c_max * (1 + 1e-9)):
        raise ValueError("average concentration outside [0, c_max]")
    if window is None:
        return c_avg / el.c_max
    lo, hi = window
    return (c_avg / el.c_max - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# Semi-implicit stepping
# ---------------------------------------------------------------------------

def _be_radial_step(c: np.ndarray, dt: float, D: float, r: np.ndarray,
                    dirichlet0: float = None, flux_top: float = 0.0,
                    extra: np.ndarray = None, theta: float = 0.5):
    """One theta-scheme step of the conservative spherical diffusion.

    The implicit and explicit halves both use the finite-volume operator of
    `_fv_diffusion`, so the surface flux enters the last cell exactly and
    volume-weighted totals stay balanced regardless of theta; theta = 0.5
    (Crank-Nicolson) keeps the step second order in time, which matters for
    the lithium bookkeeping of the moving shell.  `dirichlet0` pins the
    first node (shell interface) instead of the symmetry cell; `extra` is
    an explicit source applied over the full step.
    """
    n = c.size
    dr = r[1] - r[0]
    vols = _fv_volumes(r)
    faces = 0.5 * (r[:-1] + r[1:])
    k_face = D * faces**2 / dr            # face conductances F = k (c_i+1 - c_i)

    sub = np.zeros(n - 1)
    main = np.zeros(n)
    sup = np.zeros(n - 1)
    rhs = c + (1.0 - theta) * dt * _fv_diffusion(c, r, D, flux_top)
    if extra is not None:
        rhs = rhs + dt * extra
    th = theta * dt

    if dirichlet0 is None:
        main[0] = 1.0 + th * k_face[0] / vols[0]
        sup[0] = -th * k_face[0] / vols[0]
    else:
        main[0] = 1.0
        rhs[0] = dirichlet0

    idx = np.arange(1, n - 1)
    main[idx] = 1.0 + th * (k_face[idx] + k_face[idx - 1]) / vols[idx]
    sub[idx - 1] = -th * k_face[idx - 1] / vols[idx]
    sup[idx] = -th * k_face[idx] / vols[idx]

    main[-1] = 1.0 + th * k_face[-1] / vols[-1]
    sub[-1] = -th * k_face[-1] / vols[-1]
    rhs[-1] = rhs[-1] + th * r[-1] ** 2 * flux_top / vols[-1]

    return solve_tridiagonal(TridiagonalSystem(sub=sub, main=main, sup=sup, rhs=rhs))


def step_neg(state: NegParticleState, j_ins: float, dt: float,
             params: CellParams, extra: np.ndarray = None) -> NegParticleState:
    r = np.linspace(0.0, params.neg.R_p, state.c.size)
    c_new = _be_radial_step(state.c, dt, params.neg.D_s, r,
                            dirichlet0=None, flux_top=j_ins, extra=extra)
    return NegParticleState(c=c_new, time=state.time + dt)


def _shell_substep(state: ShellState, j_ins: float, dt: float, params: CellParams,
                   dr_p: float, extra, grad_c: np.ndarray) -> ShellState:
    """BE shell step with prescribed interface rate and explicit c-gradient."""
    r_p_mid = state.r_p + 0.5 * dt * dr_p
    W = params.pos.R_p - r_p_mid
    sigma = np.linspace(0.0, 1.0, state.c.size)
    r = r_p_mid + sigma * W
    dsig_r = W / (state.c.size - 1)
    adv = (1.0 - sigma) * dr_p * grad_c / dsig_r
    total_extra = adv if extra is None else adv + extra
    c_new = _be_radial_step(state.c, dt, params.pos.D_s, r,
                            dirichlet0=params.c_beta, flux_top=j_ins,
                            extra=total_extra)
    r_p_new = state.r_p + dt * dr_p
    R = params.pos.R_p
    if r_p_new <= R_P_GUARD * R:
        raise RuntimeError("phase interface reached the particle center (full lithiation)")
    r_p_new = min(r_p_new, (1.0 - R_P_GUARD) * R)
    return ShellState(r_p=r_p_new, c=c_new, time=state.time + dt)


def _centered_sigma_gradient(c: np.ndarray) -> np.ndarray:
    g = np.zeros(c.size)
    g[1:-1] = (c[2:] - c[:-2]) / 2.0
    return g


def step_shell(state: ShellState, j_ins: float, dt: float, params: CellParams,
               extra: np.ndarray = None, dr_p_override: float = None) -> ShellState:
    """Heun-corrected semi-implicit shell step.

    The explicit couplings (interface rate, mesh advection) are first-order
    if frozen at the step start, which shows up directly as a lithium drift;
    averaging them with a predictor pass restores second-order accuracy in
    time at twice the solve cost.
    """
    dr_p0 = interface_rate(state, params) if dr_p_override is None else dr_p_override
    grad0 = _centered_sigma_gradient(state.c)
    pred = _shell_substep(state, j_ins, dt, params, dr_p0, extra, grad0)
    dr_p1 = interface_rate(pred, params) if dr_p_override is None else dr_p_override
    grad1 = _centered_sigma_gradient(pred.c)
    return _shell_substep(state, j_ins, dt, params, 0.5 * (dr_p0 + dr_p1),
                          extra, 0.5 * (grad0 + grad1))


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

@dataclass
class BatteryRun:
    times: np.ndarray
    voltage: np.ndarray
    r_p: np.ndarray
    soc_neg: np.ndarray
    c_ss_pos: np.ndarray
    c_ss_neg: np.ndarray
    soc_pos: np.ndarray = None
    r_p_hat: np.ndarray = None
    soc_neg_hat: np.ndarray = None
    soc_pos_hat: np.ndarray = None
    c_ss_pos_hat: np.ndarray = None
    n_li: np.ndarray = None          # plant lithium inventory trace
    n_li_hat: np.ndarray = None      # observer lithium inventory trace
    measurement: np.ndarray = None   # (possibly noisy) c_ss,+ fed to observers
    halted: bool = False
    halt_reason: str = ""
    saturated_at: float = math.nan   # first time c_ss,+ left (0, c_max)


def initial_truth(params: CellParams, soc_neg0: float = 0.66,
                  r_p_frac: float = 0.87, n_shell: int = 50, n_neg: int = 50):
    neg = NegParticleState(c=np.full(n_neg, soc_neg0 * params.neg.c_max))
    shell = ShellState(r_p=r_p_frac * params.pos.R_p,
                       c=np.full(n_shell, params.c_beta))
    return neg, shell


def matched_estimate(params: CellParams, truth_neg: NegParticleState,
                     truth_shell: ShellState, soc_neg_hat0: float = 0.46):
    """Estimator ICs with the same total lithium as the truth.

    Uniform negative estimate at the given SoC; shell uniform at c_beta with
    r_p_hat chosen so the lithium deficit moved off the negative electrode
    reappears as extra beta phase (smaller core).
    """
    n_true = total_lithium(truth_neg, truth_shell, params)
    neg_hat = NegParticleState(c=np.full(truth_neg.c.size,
                                         soc_neg_hat0 * params.neg.c_max))
    # solve eps_+ L_+ [(c_a - c_b) rp^3/R^3 + c_b] = n_true - n_neg_hat for rp
    n_neg_hat = params.neg.eps_s * params.neg.L * neg_hat.c_avg(params)
    target = (n_true - n_neg_hat) / (params.pos.eps_s * params.pos.L)
    cube = (target - params.c_beta) / (params.c_alpha - params.c_beta)
    if not (0.0 < cube < 1.0):
        raise ValueError("matched estimate infeasible: interface outside (0, R)")
    shell_hat = ShellState(r_p=cube ** (1.0 / 3.0) * params.pos.R_p,
                           c=np.full(truth_shell.c.size, params.c_beta))
    return neg_hat, shell_hat


def run_discharge(params: CellParams, I: float, t_end: float, dt: float = 0.025,
                  ocp_pair=None, n_shell: int = 50, n_neg: int = 50,
                  soc_neg0: float = 0.66, r_p_frac: float = 0.87,
                  include_contact: bool = False, output_stride: int = 40) -> BatteryRun:
    """Constant-current discharge of the plant alone."""
    if ocp_pair is None:
        ocp_pair = OCPCurve.default_pair()
    neg, shell = initial_truth(params, soc_neg0, r_p_frac, n_shell, n_neg)
    j_pos = molar_flux(I, "pos", params)
    j_neg = molar_flux(I, "neg", params)
    times, volts, rps, socs, socp, cssp, cssn, nli = [], [], [], [], [], [], [], []
    run = BatteryRun(times=None, voltage=None, r_p=None, soc_neg=None,
                     c_ss_pos=None, c_ss_neg=None)

    def record(t):
        times.append(t)
        v = terminal_voltage(neg, shell, I, ocp_pair, params, include_contact)
        volts.append(v)
        rps.append(shell.r_p)
        socs.append(soc(neg.c_avg(params), "neg", params))
        socp.append(soc(shell.c_avg(params), "pos", params))
        cssp.append(shell.c_ss())
        cssn.append(neg.c_ss())
        nli.append(total_lithium(neg, shell, params))
        if math.isnan(v) and math.isnan(run.saturated_at):
            run.saturated_at = t

    record(0.0)
    steps = int(round(t_end / dt))
    try:
        for k in range(steps):
            neg = step_neg(neg, j_neg, dt, params)
            shell = step_shell(shell, j_pos, dt, params)
            if (k + 1) % output_stride == 0 or k == steps - 1:
                record((k + 1) * dt)
    except RuntimeError as exc:
        run.halted, run.halt_reason = True, str(exc)
    run.times = np.array(times)
    run.voltage = np.array(volts)
    run.r_p = np.array(rps)
    run.soc_neg = np.array(socs)
    run.soc_pos = np.array(socp)
    run.c_ss_pos = np.array(cssp)
    run.c_ss_neg = np.array(cssn)
    run.n_li = np.array(nli)
    return run


def run_estimation(params: CellParams, I: float, t_end: float,
                   obs: BatteryObserverParams, dt: float = 0.025,
                   ocp_pair=None, n_shell: int = 50, n_neg: int = 50,
                   soc_neg0: float = 0.66, r_p_frac: float = 0.87,
                   soc_neg_hat0: float = 0.46,
                   output_stride: int = 40) -> BatteryRun:
    """Co-simulate the plant and the conservation-preserving observer pair.

    The observer measures c_ss,+ (plus seeded Gaussian noise if configured)
    and knows the applied current; its initial state carries the configured
    SoC error but the true total lithium.
    """
    if ocp_pair is None:
        ocp_pair = OCPCurve.default_pair()
    neg, shell = initial_truth(params, soc_neg0, r_p_frac, n_shell, n_neg)
    neg_hat, shell_hat = matched_estimate(params, neg, shell, soc_neg_hat0)
    j_pos = molar_flux(I, "pos", params)
    j_neg = molar_flux(I, "neg", params)
    rng = np.random.Generator(np.random.Philox(obs.seed))
    sigma_grid = np.linspace(0.0, 1.0, n_shell)

    times, volts, rps, socs, socp, cssp, cssn = [], [], [], [], [], [], []
    rph, soch, socph, cssph, nli, nlih, meas_trace = [], [], [], [], [], [], []
    run = BatteryRun(times=None, voltage=None, r_p=None, soc_neg=None,
                     c_ss_pos=None, c_ss_neg=None)

    def record(t, y):
        times.append(t)
        v = terminal_voltage(neg, shell, I, ocp_pair, params)
        volts.append(v)
        rps.append(shell.r_p)
        socs.append(soc(neg.c_avg(params), "neg", params))
        socp.append(soc(shell.c_avg(params), "pos", params))
        cssp.append(shell.c_ss())
        cssn.append(neg.c_ss())
        rph.append(shell_hat.r_p)
        soch.append(soc(np.clip(neg_hat.c_avg(params), 0.0, params.neg.c_max),
                        "neg", params))
        socph.append(soc(np.clip(shell_hat.c_avg(params), 0.0, params.pos.c_max),
                         "pos", params))
        cssph.append(shell_hat.c_ss())
        nli.append(total_lithium(neg, shell, params))
        nlih.append(total_lithium(neg_hat, shell_hat, params))
        meas_trace.append(y)
        if math.isnan(v) and math.isnan(run.saturated_at):
            run.saturated_at = t

    record(0.0, shell.c_ss())
    steps = int(round(t_end / dt))
    try:
        for k in range(steps):
            y = shell.c_ss()
            if obs.noise_std > 0.0:
                y += obs.noise_std * rng.standard_normal()
            tilde = y - shell_hat.c_ss()

            # plant
            neg = step_neg(neg, j_neg, dt, params)
            shell = step_shell(shell, j_pos, dt, params)

            # positive observer: injections explicit, transport implicit
            P, Q = observer_gains_pos(shell_hat.r_p, obs, params, sigma=sigma_grid)
            dr_hat = -obs.kappa * tilde / (params.c_beta - params.c_alpha) \
                + interface_rate(shell_hat, params)
            shell_hat = step_shell(shell_hat, j_pos + Q * tilde, dt, params,
                                   extra=P * tilde, dr_p_override=dr_hat)
            # negative observer: uniform companion injection (gains built on
            # the same shell grid so the lithium bookkeeping cancels exactly)
            P_m, Q_m = observer_gains_neg(shell_hat.r_p, obs, params, n=n_shell)
            neg_hat = step_neg(neg_hat, j_neg + Q_m * tilde, dt, params,
                               extra=np.full(n_neg, P_m * tilde))

            if (k + 1) % output_stride == 0 or k == steps - 1:
                record((k + 1) * dt, y)
    except RuntimeError as exc:
        run.halted, run.halt_reason = True, str(exc)
    run.times = np.array(times)
    run.voltage = np.array(volts)
    run.r_p = np.array(rps)
    run.soc_neg = np.array(socs)
    run.soc_pos = np.array(socp)
    run.c_ss_pos = np.array(cssp)
    run.c_ss_neg = np.array(cssn)
    run.r_p_hat = np.array(rph)
    run.soc_neg_hat = np.array(soch)
    run.soc_pos_hat = np.array(socph)
    run.c_ss_pos_hat = np.array(cssph)
    run.n_li = np.array(nli)
    run.n_li_hat = np.array(nlih)
    run.measurement = np.array(meas_trace)
    return run


# ---------------------------------------------------------------------------
# EKF baseline
# ---------------------------------------------------------------------------

def _coarse_step(x: np.ndarray, j_pos: float, j_neg: float, dt: float,
                 params: CellParams, n_neg: int, n_shell: int) -> np.ndarray:
    """One semi-implicit step of the coarse model; state = [c_neg, c_shell, r_p].

    States are clamped to their physical ranges first: the EKF's linearized
    updates (and Jacobian probes) can otherwise push the interface or the
    concentrations into regions where the shell step blows up.
    """
    R = params.pos.R_p
    neg = NegParticleState(c=np.clip(x[:n_neg], 0.0, params.neg.c_max))
    shell = ShellState(r_p=float(np.clip(x[-1], 2 * R_P_GUARD * R, (1 - 2 * R_P_GUARD) * R)),
                       c=np.clip(x[n_neg:n_neg + n_shell], 0.0, 1.5 * params.pos.c_max))
    neg = step_neg(neg, j_neg, dt, params)
    # rate-limit the interface so linearization probes cannot collapse it
    dr_p = interface_rate(shell, params)
    max_move = 0.1 * min(shell.r_p - R_P_GUARD * R, (1 - R_P_GUARD) * R - shell.r_p)
    dr_p = float(np.clip(dr_p, -max_move / dt, max_move / dt))
    shell = step_shell(shell, j_pos, dt, params, dr_p_override=dr_p)
    return np.concatenate([neg.c, shell.c, [shell.r_p]])


@dataclass
class EkfResult:
    soc_neg: np.ndarray
    soc_pos: np.ndarray
    r_p: np.ndarray
    states: list


def ekf_estimate(params: CellParams, I: float, measurement_times: np.ndarray,
                 measurements: np.ndarray, obs: BatteryObserverParams,
                 x0: np.ndarray = None, n_neg: int = 8, n_shell: int = 8,
                 soc_neg_hat0: float = 0.46, r_p_hat0_frac: float = None,
                 dt_sub: float = 0.5) -> "EkfResult":
    """EKF on the coarse model; returns SoC and interface traces.

    Measurement is c_ss,+ (last shell node).  The predict step integrates
    the coarse model with substeps; Jacobians are forward finite differences
    of the step map.  Aborts if the covariance loses positive-definiteness.
    """
    j_pos = molar_flux(I, "pos", params)
    j_neg = molar_flux(I, "neg", params)
    nx = n_neg + n_shell + 1
    if x0 is None:
        if r_p_hat0_frac is None:
            neg_t, shell_t = initial_truth(params, n_shell=n_shell, n_neg=n_neg)
            neg_h, shell_h = matched_estimate(params, neg_t, shell_t, soc_neg_hat0)
        else:
            neg_h = NegParticleState(c=np.full(n_neg, soc_neg_hat0 * params.neg.c_max))
            shell_h = ShellState(r_p=r_p_hat0_frac * params.pos.R_p,
                                 c=np.full(n_shell, params.c_beta))
        x0 = np.concatenate([neg_h.c, shell_h.c, [shell_h.r_p]])
    x = np.asarray(x0, dtype=float).copy()

    # covariance scales: concentrations O(c_max), radius O(R_p)
    scale = np.concatenate([np.full(n_neg + n_shell, params.pos.c_max),
                            [params.pos.R_p]])
    P_cov = np.diag((0.2 * scale) ** 2)
    Q_cov = np.diag(obs.process_var * (scale / params.pos.c_max) ** 2)
    R_cov = np.array([[obs.meas_var]])
    Hrow = np.zeros((1, nx))
    Hrow[0, n_neg + n_shell - 1] = 1.0

    def predict(xs):
        t = 0.0
        dt_meas = float(measurement_times[1] - measurement_times[0])
        out = xs.copy()
        while t < dt_meas - 1e-12:
            h = min(dt_sub, dt_meas - t)
            out = _coarse_step(out, j_pos, j_neg, h, params, n_neg, n_shell)
            t += h
        return out

    soc_trace, socp_trace, rp_trace, states = [], [], [], []
    for k, y in enumerate(measurements):
        if k > 0:
            # predict with finite-difference Jacobian
            fx = predict(x)
            J = np.empty((nx, nx))
            for i in range(nx):
                dx = 1e-6 * scale[i]
                xp = x.copy()
                xp[i] += dx
                J[:, i] = (predict(xp) - fx) / dx
            x = fx
            P_cov = J @ P_cov @ J.T + Q_cov
        # update
        S = Hrow @ P_cov @ Hrow.T + R_cov
        if S[0, 0] <= 0.0 or not np.all(np.isfinite(P_cov)):
            raise RuntimeError("EKF covariance lost positive-definiteness")
        K = (P_cov @ Hrow.T) / S[0, 0]
        x = x + K[:, 0] * (y - x[n_neg + n_shell - 1])
        P_cov = (np.eye(nx) - K @ Hrow) @ P_cov
        x[-1] = np.clip(x[-1], R_P_GUARD * params.pos.R_p,
                        (1 - R_P_GUARD) * params.pos.R_p)
        neg_k = NegParticleState(c=np.clip(x[:n_neg], 0.0, params.neg.c_max))
        shell_k = ShellState(r_p=float(x[-1]),
                             c=np.clip(x[n_neg:n_neg + n_shell], 0.0, params.pos.c_max))
        soc_trace.append(soc(neg_k.c_avg(params), "neg", params))
        socp_trace.append(soc(np.clip(shell_k.c_avg(params), 0.0, params.pos.c_max),
                              "pos", params))
        rp_trace.append(float(x[-1]))
        states.append(x.copy())
    return EkfResult(soc_neg=np.array(soc_trace), soc_pos=np.array(socp_trace),
                     r_p=np.array(rp_trace), states=states)
