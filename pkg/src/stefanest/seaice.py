"""Thermodynamic snow + sea-ice column model and thickness-driven observer.

The plant is a two-layer Stefan-type system: heat conduction through a snow
slab on top of a sea-ice slab, a quartic radiative surface balance (with
surface-melt clamping at Tm1), salinity-dependent ice heat capacity and
conductivity, penetrating shortwave source in the ice, and a bottom Stefan
condition driven by the conductive flux against the ocean heat flux F_w.

The observer runs the salinity-free simplified ice equation on the measured
domain [0, Y1] with four injection gains (p1 profile, p2, p3, p4) built
from modified Bessel functions; it estimates the temperature profile and
the thickness simultaneously from Y1 = H and Y2 = T_i(0).

Both the annual-cycle driver and the estimation drivers step diffusion
implicitly (backward Euler via the Thomas solver) because the thin snow
layer is far too stiff for explicit stepping at annual horizons; advection
from the moving grids and the radiative source are treated explicitly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import (TridiagonalSystem, bessel_ratio_i, bessel_ratio_j1,
                       integrate_trapezoid, solve_tridiagonal)

DAY = 86400.0
MONTH = 30.0 * DAY          # uniform 30-day months, 360-day year
YEAR = 12.0 * MONTH

H_ICE_MIN = 0.05            # phase-collapse guard, m
SNOW_MIN = 2e-3             # below this the column is treated as bare ice, m
COEFF_T_CAP = -0.05         # salinity corrections evaluated at T <= this, deg C


@dataclass(frozen=True)
class SeaIceParams:
    """Physical constants of the snow/ice column (SI units, temps in deg C)."""

    rho_s: float = 330.0       # snow density
    k_s: float = 0.31          # snow conductivity
    rho: float = 917.0         # ice density
    c0: float = 2110.0         # pure-ice heat capacity
    k0: float = 2.034          # pure-ice conductivity
    gamma1_kj: float = 18.0    # heat-capacity salinity weight, kJ degC/kg
    gamma2: float = 0.117      # conductivity salinity weight, W/m
    I0_pen: float = 1.59       # penetrating solar radiation, W/m^2
    kappa_i: float = 1.5       # penetration rate, 1/m
    sigma_sb: float = 5.67e-8  # Stefan-Boltzmann constant
    q_latent: float = 3.02e8   # ice volumetric latent heat, J/m^3 (non-tabulated)
    q_snow: float = 1.10e8     # snow volumetric latent heat, J/m^3 (non-tabulated)
    Tm1: float = -0.1          # surface melting temperature
    Tm2: float = -1.8          # bottom melting temperature
    F_w: float = 2.0           # ocean heat flux, W/m^2 (non-tabulated)

    def __post_init__(self):
        for name in ("rho_s", "k_s", "rho", "c0", "k0", "I0_pen", "kappa_i",
                     "sigma_sb", "q_latent", "q_snow"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"SeaIceParams.{name} must be positive")
        if not (self.Tm2 < self.Tm1 < 0.0):
            raise ValueError("melting points must satisfy Tm2 < Tm1 < 0 degC")

    @property
    def gamma1(self) -> float:
        """Heat-capacity salinity weight in J degC/kg."""
        return self.gamma1_kj * 1e3

    @property
    def D_i(self) -> float:
        """Salinity-free ice diffusivity k0 / (rho c0)."""
        return self.k0 / (self.rho * self.c0)

    @property
    def D_s(self) -> float:
        return self.k_s / (self.rho_s * self.c0)

    @property
    def beta(self) -> float:
        """Stefan coefficient k0 / q of the bottom interface ODE."""
        return self.k0 / self.q_latent


@dataclass
class MonthlyForcing:
    """Monthly-averaged atmospheric fluxes; albedo is NaN in dark months."""

    fr: np.ndarray       # shortwave
    fl_atm: np.ndarray   # longwave
    fs: np.ndarray       # sensible
    fl_lat: np.ndarray   # latent
    albedo: np.ndarray

    def __post_init__(self):
        for name in ("fr", "fl_atm", "fs", "fl_lat", "albedo"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.size != 12:
                raise ValueError(f"MonthlyForcing.{name} needs 12 entries")
        present = ~np.isnan(self.albedo)
        if np.any((self.albedo[present] < 0) | (self.albedo[present] > 1)):
            raise ValueError("albedo must lie in [0, 1] where present")
        if np.any(np.isnan(self.albedo) & (self.fr != 0.0)):
            raise ValueError("dark months (no albedo) must have zero shortwave")

    def total_flux(self, month: int) -> float:
        """F_a = (1 - albedo) Fr + FL + Fs + Fl for month index 0..11."""
        a = self.albedo[month]
        sw = 0.0 if np.isnan(a) else (1.0 - a) * self.fr[month]
        return float(sw + self.fl_atm[month] + self.fs[month] + self.fl_lat[month])

    @staticmethod
    def month_of(t: float) -> int:
        return int(t // MONTH) % 12

    @classmethod
    def from_csv(cls, path) -> "MonthlyForcing":
        rows = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                m = int(row["month"])
                alb = row["albedo"].strip()
                rows[m] = (float(row["Fr"]), float(row["FL"]), float(row["Fs"]),
                           float(row["Fl"]), float(alb) if alb else math.nan)
        if sorted(rows) != list(range(1, 13)):
            raise ValueError(f"forcing table must cover months 1..12, got {sorted(rows)}")
        cols = np.array([rows[m] for m in range(1, 13)])
        return cls(fr=cols[:, 0], fl_atm=cols[:, 1], fs=cols[:, 2],
                   fl_lat=cols[:, 3], albedo=cols[:, 4])

    @classmethod
    def default(cls) -> "MonthlyForcing":
        return cls.from_csv(Path(__file__).parent / "assets" / "forcing_monthly.csv")


# Default snow accumulation schedule, m per month (month index 0 = January).
# The column model itself only ablates snow; without resupply the annual
# cycle dies, so a configurable schedule with plausible polar totals
# (~0.4 m/yr, concentrated in fall) is applied.
DEFAULT_SNOW_ACCUMULATION = {8: 0.10, 9: 0.20, 10: 0.017, 11: 0.017,
                             0: 0.017, 1: 0.017, 2: 0.017, 3: 0.017, 4: 0.05}


@dataclass(frozen=True)
class SalinitySpec:
    A: float = 1.6
    n_exp: float = 0.407
    m_exp: float = 0.573

    def __post_init__(self):
        if self.A < 0.0:
            raise ValueError("salinity amplitude A must be >= 0")
        if self.m_exp <= 0.0:
            raise ValueError("m_exp must be positive on [0, H]")


def salinity(x, H: float, spec: SalinitySpec):
    """S(x) = A [1 - cos(pi (x/H)^(n/(m + x/H)))] for x in [0, H]."""
    xarr = np.asarray(x, dtype=float)
    if np.any(xarr < -1e-12 * H) or np.any(xarr > H * (1 + 1e-12)):
        raise ValueError("salinity requires 0 <= x <= H")
    frac = np.clip(xarr / H, 0.0, 1.0)
    val = spec.A * (1.0 - np.cos(np.pi * frac ** (spec.n_exp / (spec.m_exp + frac))))
    return float(val) if np.isscalar(x) else val


def effective_coeffs(T_i, S, params: SeaIceParams):
    """Salinity-corrected (c_i, k_i); singular at T = 0 degC, guarded."""
    Tarr = np.asarray(T_i, dtype=float)
    if np.any(np.abs(Tarr) < 1e-3):
        raise ValueError("effective_coeffs: |T_i| below 1e-3 degC guard")
    Sarr = np.asarray(S, dtype=float)
    if np.any(Sarr < 0):
        raise ValueError("salinity must be >= 0")
    c_i = params.c0 + params.gamma1 * Sarr / Tarr**2
    k_i = params.k0 + params.gamma2 * Sarr / Tarr
    if np.isscalar(T_i) and np.isscalar(S):
        return float(c_i), float(k_i)
    return c_i, k_i


@dataclass
class SeaIceState:
    """Column state; T_s spans [-h, 0], T_i spans [0, H], shared interface node."""

    h: float
    H: float
    T_s: np.ndarray
    T_i: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.T_s = np.asarray(self.T_s, dtype=float)
        self.T_i = np.asarray(self.T_i, dtype=float)

    @property
    def snow_covered(self) -> bool:
        return self.h >= SNOW_MIN


def _surface_root(Fa: float, k_top: float, dx_top: float, T1: float,
                  params: SeaIceParams):
    """Root of F_a - I0 - sigma (T+273)^4 + k (T1 - T)/dx = 0 on [-60, 5].

    The balance is strictly decreasing in T, so bisection-safeguarded Newton
    always converges; returns (root, residual_at_Tm1).
    """
    sig = params.sigma_sb

    def g(T):
        return Fa - params.I0_pen - sig * (T + 273.0) ** 4 + k_top * (T1 - T) / dx_top

    lo, hi = -60.0, 5.0
    if g(lo) < 0.0:
        return lo, g(params.Tm1)
    T = 0.5 * (lo + hi)
    for _ in range(50):
        val = g(T)
        if abs(val) < 1e-10:
            break
        dg = -4.0 * sig * (T + 273.0) ** 3 - k_top / dx_top
        step = val / dg
        Tn = T - step
        if not (lo < Tn < hi):
            if val > 0.0:
                lo = T
            else:
                hi = T
            Tn = 0.5 * (lo + hi)
        T = Tn
    else:
        raise RuntimeError("surface balance Newton did not converge in 50 iterations")
    return T, g(params.Tm1)


def surface_step(state: SeaIceState, forcing: MonthlyForcing, params: SeaIceParams):
    """Surface temperature and ablation rate from the radiative balance.

    Returns (T_surface, h_dot): the unclamped root when it is below Tm1,
    otherwise T = Tm1 and a melt rate h_dot = -residual / q < 0.
    """
    if state.h <= 0.0:
        raise ValueError("surface_step requires snow cover h > 0")
    Fa = forcing.total_flux(forcing.month_of(state.time))
    dx = state.h / (state.T_s.size - 1)
    root, res_melt = _surface_root(Fa, params.k_s, dx, float(state.T_s[1]), params)
    if root < params.Tm1:
        return root, 0.0
    return params.Tm1, -res_melt / params.q_snow


def _ice_gradient_bottom(T_i: np.ndarray, H: float) -> float:
    dx = H / (T_i.size - 1)
    return (3.0 * T_i[-1] - 4.0 * T_i[-2] + T_i[-3]) / (2.0 * dx)


def seaice_rhs(state: SeaIceState, forcing: MonthlyForcing, params: SeaIceParams,
               salinity_on: bool = True, spec: SalinitySpec = SalinitySpec()):
    """Explicit time derivatives (dT_s, dT_i, dh, dH) of the immobilized column.

    Boundary nodes (surface, shared interface, bottom) are algebraically
    slaved; their derivative entries are zero.  Used for the unit-level
    structure checks; the drivers step the same operators implicitly.
    """
    if state.h <= 0.0 or state.H <= 0.0:
        raise ValueError("layer thickness underflow in seaice_rhs")
    n_s, n_i = state.T_s.size, state.T_i.size
    dzeta, dxi = 1.0 / (n_s - 1), 1.0 / (n_i - 1)
    x_i = np.linspace(0.0, 1.0, n_i) * state.H

    if salinity_on:
        S = salinity(x_i, state.H, spec)
        c_i, k_i = effective_coeffs(np.minimum(state.T_i, COEFF_T_CAP), S, params)
    else:
        c_i = np.full(n_i, params.c0)
        k_i = np.full(n_i, params.k0)

    dH = (float(k_i[-1]) * _ice_gradient_bottom(state.T_i, state.H) - params.F_w) / params.q_latent
    _, dh_abl = surface_step(state, forcing, params)
    dh = dh_abl

    dT_s = np.zeros(n_s)
    lap_s = (state.T_s[2:] - 2.0 * state.T_s[1:-1] + state.T_s[:-2]) / dzeta**2
    grad_s = (state.T_s[2:] - state.T_s[:-2]) / (2.0 * dzeta)
    zeta = np.linspace(0.0, 1.0, n_s)[1:-1]
    dT_s[1:-1] = params.D_s * lap_s / state.h**2 - dh * (1.0 - zeta) * grad_s / state.h

    dT_i = np.zeros(n_i)
    lap_i = (state.T_i[2:] - 2.0 * state.T_i[1:-1] + state.T_i[:-2]) / dxi**2
    grad_i = (state.T_i[2:] - state.T_i[:-2]) / (2.0 * dxi)
    xi = np.linspace(0.0, 1.0, n_i)[1:-1]
    rho_c = params.rho * c_i[1:-1]
    src = params.I0_pen * params.kappa_i * np.exp(-params.kappa_i * x_i[1:-1]) / rho_c
    dT_i[1:-1] = (k_i[1:-1] / rho_c) * lap_i / state.H**2 + src \
        + xi * (dH / state.H) * grad_i
    return dT_s, dT_i, dh, dH


def _implicit_column_step(state: SeaIceState, T_top: float, dt: float,
                          params: SeaIceParams, dh: float, dH: float,
                          salinity_on: bool, spec: SalinitySpec):
    """Backward-Euler diffusion step of the coupled snow+ice column.

    Unknowns: snow nodes (surface..interface) and ice nodes (interface..
    bottom) with the interface node shared; the surface row is Dirichlet
    T_top, the interface row enforces flux continuity with first-order
    one-sided fluxes (keeps the system tridiagonal), the bottom row is
    Dirichlet Tm2.  Advection and the radiation source enter explicitly.
    """
    n_s, n_i = state.T_s.size, state.T_i.size
    dzeta, dxi = 1.0 / (n_s - 1), 1.0 / (n_i - 1)
    x_i = np.linspace(0.0, 1.0, n_i) * state.H
    if salinity_on:
        S = salinity(x_i, state.H, spec)
        c_i, k_i = effective_coeffs(np.minimum(state.T_i, COEFF_T_CAP), S, params)
    else:
        c_i = np.full(n_i, params.c0)
        k_i = np.full(n_i, params.k0)

    n = n_s + n_i - 1
    sub = np.zeros(n - 1)
    main = np.zeros(n)
    sup = np.zeros(n - 1)
    rhs = np.zeros(n)

    # surface Dirichlet
    main[0] = 1.0
    rhs[0] = T_top

    # snow interior
    zeta = np.linspace(0.0, 1.0, n_s)
    r_s = dt * params.D_s / (state.h**2 * dzeta**2)
    grad_s = (state.T_s[2:] - state.T_s[:-2]) / (2.0 * dzeta)
    adv_s = -dh * (1.0 - zeta[1:-1]) * grad_s / state.h
    idx = np.arange(1, n_s - 1)
    main[idx] = 1.0 + 2.0 * r_s
    sub[idx - 1] = -r_s
    sup[idx] = -r_s
    rhs[idx] = state.T_s[1:-1] + dt * adv_s

    # interface flux continuity: k_s (T_int - T_s[-2]) / (h dzeta) =
    #                            k_i (T_i[1] - T_int) / (H dxi)
    i_int = n_s - 1
    a = params.k_s / (state.h * dzeta)
    b = float(k_i[0]) / (state.H * dxi)
    sub[i_int - 1] = -a
    main[i_int] = a + b
    sup[i_int] = -b
    rhs[i_int] = 0.0

    # ice interior
    xi = np.linspace(0.0, 1.0, n_i)
    rho_c = params.rho * c_i[1:-1]
    r_i = dt * (k_i[1:-1] / rho_c) / (state.H**2 * dxi**2)
    grad_i = (state.T_i[2:] - state.T_i[:-2]) / (2.0 * dxi)
    src = params.I0_pen * params.kappa_i * np.exp(-params.kappa_i * x_i[1:-1]) / rho_c
    adv_i = xi[1:-1] * (dH / state.H) * grad_i
    idx = np.arange(1, n_i - 1)
    main[i_int + idx] = 1.0 + 2.0 * r_i
    sub[i_int + idx - 1] = -r_i
    sup[i_int + idx] = -r_i
    rhs[i_int + idx] = state.T_i[1:-1] + dt * (src + adv_i)

    # bottom Dirichlet
    main[-1] = 1.0
    rhs[-1] = params.Tm2

    sol = solve_tridiagonal(TridiagonalSystem(sub=sub, main=main, sup=sup, rhs=rhs))
    return sol[:n_s].copy(), sol[n_s - 1:].copy()


def _implicit_ice_step(T_i: np.ndarray, H: float, T_top: float, dt: float,
                       params: SeaIceParams, dH: float, salinity_on: bool,
                       spec: SalinitySpec, injection=None, bottom_value=None):
    """Backward-Euler step of the bare-ice column (Dirichlet both ends).

    `injection` is an optional explicit per-node source (observer error
    injection); `bottom_value` overrides the Tm2 bottom Dirichlet value.
    """
    n_i = T_i.size
    dxi = 1.0 / (n_i - 1)
    x_i = np.linspace(0.0, 1.0, n_i) * H
    if salinity_on:
        S = salinity(x_i, H, spec)
        c_i, k_i = effective_coeffs(np.minimum(T_i, COEFF_T_CAP), S, params)
    else:
        c_i = np.full(n_i, params.c0)
        k_i = np.full(n_i, params.k0)
    sub = np.zeros(n_i - 1)
    main = np.zeros(n_i)
    sup = np.zeros(n_i - 1)
    rhs = np.zeros(n_i)
    main[0] = 1.0
    rhs[0] = T_top
    rho_c = params.rho * c_i[1:-1]
    r_i = dt * (k_i[1:-1] / rho_c) / (H**2 * dxi**2)
    grad_i = (T_i[2:] - T_i[:-2]) / (2.0 * dxi)
    src = params.I0_pen * params.kappa_i * np.exp(-params.kappa_i * x_i[1:-1]) / rho_c
    xi = np.linspace(0.0, 1.0, n_i)
    adv_i = xi[1:-1] * (dH / H) * grad_i
    extra = injection[1:-1] if injection is not None else 0.0
    idx = np.arange(1, n_i - 1)
    main[idx] = 1.0 + 2.0 * r_i
    sub[idx - 1] = -r_i
    sup[idx] = -r_i
    rhs[idx] = T_i[1:-1] + dt * (src + adv_i + extra)
    main[-1] = 1.0
    rhs[-1] = params.Tm2 if bottom_value is None else bottom_value
    return solve_tridiagonal(TridiagonalSystem(sub=sub, main=main, sup=sup, rhs=rhs))


@dataclass
class SeaIceTrajectory:
    times: np.ndarray = None
    snow: np.ndarray = None
    thickness: np.ndarray = None
    surface_temp: np.ndarray = None
    profiles: list = field(default_factory=list)   # (time, T_i snapshot)
    halted: bool = False
    halt_reason: str = ""

    def annual_extrema(self):
        """Per-year (max, min) thickness with the times they occur."""
        out = []
        years = int(np.floor(self.times[-1] / YEAR + 1e-9))
        for y in range(years):
            m = (self.times >= y * YEAR) & (self.times < (y + 1) * YEAR)
            if not np.any(m):
                continue
            hh = self.thickness[m]
            tt = self.times[m]
            out.append((float(hh.max()), float(tt[np.argmax(hh)]),
                        float(hh.min()), float(tt[np.argmin(hh)])))
        return out


def initial_column(params: SeaIceParams, forcing: MonthlyForcing,
                   h0: float = 0.3, H0: float = 2.8, n_s: int = 15,
                   n_i: int = 60, wobble: float = 0.0) -> SeaIceState:
    """Linear snow profile and (optionally sinusoid-perturbed) linear ice profile.

    The snow-ice interface temperature T0 solves the surface quartic balance
    combined with steady conduction through both layers.
    """
    Fa = forcing.total_flux(0)
    # steady two-slab conduction: surface temp Ts on snow top, interface T0,
    # bottom Tm2; fluxes equal: k_s (T0 - Ts)/h = k0 (Tm2 - T0)/H
    # solve the quartic for Ts with the slab flux expression
    sig = params.sigma_sb

    def g(Ts):
        # conduction flux through the column for surface temp Ts
        flux = (params.Tm2 - Ts) / (h0 / params.k_s + H0 / params.k0)
        return Fa - params.I0_pen - sig * (Ts + 273.0) ** 4 + flux

    lo, hi = -60.0, params.Tm1
    Ts = 0.5 * (lo + hi)
    for _ in range(80):
        if g(Ts) > 0:
            lo = Ts
        else:
            hi = Ts
        Ts = 0.5 * (lo + hi)
    T0 = Ts + (params.Tm2 - Ts) * (h0 / params.k_s) / (h0 / params.k_s + H0 / params.k0)
    zeta = np.linspace(0.0, 1.0, n_s)
    T_s = Ts + (T0 - Ts) * zeta
    xi = np.linspace(0.0, 1.0, n_i)
    T_i = T0 + (params.Tm2 - T0) * xi
    if wobble != 0.0:
        T_i = T_i + wobble * np.sin(4.0 * np.pi * xi)
        T_i[0], T_i[-1] = T0, params.Tm2
    return SeaIceState(h=h0, H=H0, T_s=T_s, T_i=T_i, time=0.0)


def simulate_annual(params: SeaIceParams, forcing: MonthlyForcing,
                    init: SeaIceState, years: int, dt: float = 900.0,
                    salinity_on: bool = True, spec: SalinitySpec = SalinitySpec(),
                    accumulation: dict = None, output_stride: int = 24) -> SeaIceTrajectory:
    """Multi-year semi-implicit run with piecewise-constant monthly forcing."""
    if accumulation is None:
        accumulation = DEFAULT_SNOW_ACCUMULATION
    state = replace(init)
    state.T_s = init.T_s.copy()
    state.T_i = init.T_i.copy()
    traj = SeaIceTrajectory()
    times, snows, thicks, tsurf = [], [], [], []
    t_end = years * YEAR
    steps = 0
    t = state.time

    while t < t_end - 1e-6:
        month = MonthlyForcing.month_of(t)
        accum = accumulation.get(month, 0.0) / MONTH
        n_i = state.T_i.size
        dxi = 1.0 / (n_i - 1)
        if salinity_on:
            S_bot = salinity(state.H, state.H, spec)
            _, k_bot = effective_coeffs(min(float(state.T_i[-1]), COEFF_T_CAP), S_bot, params)
        else:
            k_bot = params.k0
        dH_bot = (k_bot * _ice_gradient_bottom(state.T_i, state.H) - params.F_w) / params.q_latent

        if state.snow_covered:
            T_top, dh_abl = surface_step(state, forcing, params)
            dh = accum + dh_abl
            dH = dH_bot
            T_s_new, T_i_new = _implicit_column_step(
                state, T_top, dt, params, dh, dH, salinity_on, spec)
            h_new = max(state.h + dt * dh, 0.0)
        else:
            # bare ice: surface balance applied to the top of the ice;
            # surface melt is lumped into the single thickness H
            Fa = forcing.total_flux(month)
            dx = state.H * dxi
            root, res_melt = _surface_root(Fa, params.k0, dx, float(state.T_i[1]), params)
            if root < params.Tm1:
                T_top, dH_surf = root, 0.0
            else:
                T_top, dH_surf = params.Tm1, -res_melt / params.q_latent
            dH = dH_bot + dH_surf
            T_i_new = _implicit_ice_step(state.T_i, state.H, T_top, dt, params,
                                         dH, salinity_on, spec)
            h_new = max(state.h + dt * accum, 0.0)
            if h_new >= SNOW_MIN:
                # snow reappears: seed a linear slab between T_top and the
                # ice surface temperature
                zeta = np.linspace(0.0, 1.0, state.T_s.size)
                state.T_s = T_top + (T_i_new[0] - T_top) * zeta
            T_s_new = state.T_s if h_new >= SNOW_MIN else np.full_like(state.T_s, T_top)

        H_new = state.H + dt * dH
        if H_new < H_ICE_MIN:
            traj.halted = True
            traj.halt_reason = f"ice thickness collapsed (H={H_new:.3g} m)"
            break
        state = SeaIceState(h=h_new, H=H_new, T_s=np.asarray(T_s_new),
                            T_i=np.asarray(T_i_new), time=t + dt)
        t += dt
        steps += 1
        if steps % output_stride == 0 or t >= t_end - 1e-6:
            times.append(t)
            snows.append(state.h)
            thicks.append(state.H)
            tsurf.append(float(state.T_s[0]) if state.snow_covered else float(state.T_i[0]))
            if steps % (output_stride * 30) == 0:
                traj.profiles.append((t, state.T_i.copy()))
    traj.times = np.array(times)
    traj.snow = np.array(snows)
    traj.thickness = np.array(thicks)
    traj.surface_temp = np.array(tsurf)
    return traj


# ---------------------------------------------------------------------------
# Observer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeaIceObserverParams:
    lam: float = 5.0e-6     # 1/s
    c: float = 3.0e-5       # 1/s
    epsilon: float = 1.0e-8  # degC/m
    M: float = 1.9e-7       # interface-rate bound, m/s
    H_bar: float = 10.0     # thickness bound, m

    def __post_init__(self):
        if min(self.lam, self.c, self.epsilon, self.M, self.H_bar) <= 0.0:
            raise ValueError("observer parameters must be positive")


@dataclass
class GainBundle:
    x: np.ndarray
    p1: np.ndarray
    p2: float
    p3: float
    p4: float


def observer_gains(H: float, obs: SeaIceObserverParams, params: SeaIceParams,
                   x=None) -> GainBundle:
    """Closed-form injection gains for the measured thickness H.

    p1(x) = (c lam x / beta) I1(z)/z + (eps H / D - 3/beta) lam^2 x I2(z)/z^2
            + (lam^3 x^3 / (D beta)) I3(z)/z^3,   z = sqrt(lam/D (H^2 - x^2));
    p2 = 0;  p3 = -lam H / (2 beta) - eps;
    p4 = c - (lam/2)(1 - lam H^2 / (8 D)) + (beta lam / 2D) eps H.
    """
    if H <= 0.0:
        raise ValueError("observer_gains requires H > 0")
    lam, c, eps = obs.lam, obs.c, obs.epsilon
    D, beta = params.D_i, params.beta
    if x is None:
        x = np.linspace(0.0, 1.0, 100) * H
    x = np.asarray(x, dtype=float)
    lam_bar = lam / D
    z = np.sqrt(np.maximum(lam_bar * (H**2 - x**2), 0.0))
    # I_nu(z)/z^nu ratios absorb the removable singularities at x = H
    p1 = (c * lam * x / beta) * bessel_ratio_i(1, z) \
        + (eps * H / D - 3.0 / beta) * lam**2 * x * bessel_ratio_i(2, z) \
        + (lam**3 * x**3 / (D * beta)) * bessel_ratio_i(3, z)
    p3 = -lam * H / (2.0 * beta) - eps
    p4 = c - 0.5 * lam * (1.0 - lam * H**2 / (8.0 * D)) + (beta * lam / (2.0 * D)) * eps * H
    return GainBundle(x=x, p1=np.asarray(p1), p2=0.0, p3=float(p3), p4=float(p4))


@dataclass
class SeaIceObserverState:
    H_hat: float
    T_hat: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.T_hat = np.asarray(self.T_hat, dtype=float)


def observer_rhs(obs_state: SeaIceObserverState, Y1: float, Y2: float,
                 gains: GainBundle, params: SeaIceParams,
                 F_w: float = None, Y1_dot: float = 0.0):
    """Explicit derivatives (dT_hat, dH_hat) of the thickness observer.

    The estimate lives on the measured domain [0, Y1]; boundary nodes are
    slaved to the Dirichlet conditions T_hat(0) = Y2 - p2 (Y1 - H_hat) and
    T_hat(Y1) = Tm2 - p3 (Y1 - H_hat); interior nodes carry the simplified
    (salinity-free) dynamics minus p1 (Y1 - H_hat).
    """
    if obs_state.H_hat <= 0.0:
        raise ValueError("estimated thickness underflow")
    if F_w is None:
        F_w = params.F_w
    n = obs_state.T_hat.size
    dxi = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n) * Y1
    innovation = Y1 - obs_state.H_hat
    dT = np.zeros(n)
    lap = (obs_state.T_hat[2:] - 2.0 * obs_state.T_hat[1:-1] + obs_state.T_hat[:-2]) / dxi**2
    grad = (obs_state.T_hat[2:] - obs_state.T_hat[:-2]) / (2.0 * dxi)
    xi = np.linspace(0.0, 1.0, n)[1:-1]
    src = params.I0_pen * params.kappa_i * np.exp(-params.kappa_i * x[1:-1]) / (params.rho * params.c0)
    dT[1:-1] = params.D_i * lap / Y1**2 + src - gains.p1[1:-1] * innovation \
        + xi * (Y1_dot / Y1) * grad
    grad_top = (3.0 * obs_state.T_hat[-1] - 4.0 * obs_state.T_hat[-2]
                + obs_state.T_hat[-3]) / (2.0 * Y1 * dxi)
    dH_hat = gains.p4 * innovation + params.beta * grad_top - F_w / params.q_latent
    return dT, dH_hat


@dataclass
class SeaIceEstimationRun:
    times: np.ndarray
    H: np.ndarray
    H_hat: np.ndarray
    err_l2: np.ndarray           # ||T_i - T_hat||_L2 over [0, Y1]
    overshoot: float             # max over run of max(T_hat - T_i)
    plant_profiles: list
    observer_profiles: list
    halted: bool = False
    halt_reason: str = ""


def estimate_initial(init: SeaIceState, d: float = 0.25) -> np.ndarray:
    """Quadratic initial temperature estimate matching both boundary values."""
    n = init.T_i.size
    xi = np.linspace(0.0, 1.0, n)
    T0 = float(init.T_i[0])
    Tm2 = float(init.T_i[-1])
    return (Tm2 - T0) / (1.0 - 2.0 * d) * (xi**2 - 2.0 * d * xi) + T0


def run_estimation(params: SeaIceParams, forcing: MonthlyForcing,
                   init: SeaIceState, obs: SeaIceObserverParams,
                   t_end: float, dt: float = 300.0, use_gains: bool = True,
                   T_hat0: np.ndarray = None, obs_params: SeaIceParams = None,
                   salinity_on: bool = True, spec: SalinitySpec = SalinitySpec(),
                   output_stride: int = 6) -> SeaIceEstimationRun:
    """Co-simulate the full plant and the thickness observer.

    `obs_params` lets the observer run with perturbed physics (robustness
    study); `use_gains=False` zeroes every injection (open-loop estimator).
    The observer is stepped semi-implicitly like the plant, with the
    injection, source, and advection terms explicit.
    """
    if obs_params is None:
        obs_params = params
    state = SeaIceState(h=init.h, H=init.H, T_s=init.T_s.copy(),
                        T_i=init.T_i.copy(), time=init.time)
    if T_hat0 is None:
        T_hat0 = estimate_initial(init)
    ob = SeaIceObserverState(H_hat=init.H, T_hat=np.asarray(T_hat0, dtype=float).copy(),
                             time=init.time)
    n_i = state.T_i.size
    xi_nodes = np.linspace(0.0, 1.0, n_i)

    times, Hs, Hhats, errs = [], [], [], []
    plant_profiles, obs_profiles = [], []
    overshoot = 0.0
    run = SeaIceEstimationRun(times=None, H=None, H_hat=None, err_l2=None,
                              overshoot=0.0, plant_profiles=plant_profiles,
                              observer_profiles=obs_profiles)

    def record(t):
        nonlocal overshoot
        diff = state.T_i - ob.T_hat
        err = math.sqrt(state.H * integrate_trapezoid(diff**2, 1.0 / (n_i - 1)))
        times.append(t)
        Hs.append(state.H)
        Hhats.append(ob.H_hat)
        errs.append(err)
        overshoot = max(overshoot, float(np.max(ob.T_hat - state.T_i)))
        plant_profiles.append((t, state.T_i.copy()))
        obs_profiles.append((t, ob.T_hat.copy()))

    record(state.time)
    t = state.time
    steps = 0
    while t < t_end - 1e-9:
        month = MonthlyForcing.month_of(t)
        # --- plant step (full model, salinity on) ---
        if salinity_on:
            S_bot = salinity(state.H, state.H, spec)
            _, k_bot = effective_coeffs(min(float(state.T_i[-1]), COEFF_T_CAP), S_bot, params)
        else:
            k_bot = params.k0
        dH = (k_bot * _ice_gradient_bottom(state.T_i, state.H) - params.F_w) / params.q_latent
        T_top, dh_abl = surface_step(state, forcing, params)
        T_s_new, T_i_new = _implicit_column_step(state, T_top, dt, params,
                                                 dh_abl, dH, salinity_on, spec)
        H_new = state.H + dt * dH
        h_new = max(state.h + dt * dh_abl, SNOW_MIN)

        # --- measurements ---
        Y1, Y2, Y1_dot = state.H, float(state.T_i[0]), dH

        # --- observer step on [0, Y1] ---
        innovation = Y1 - ob.H_hat
        if use_gains:
            gains = observer_gains(Y1, obs, obs_params, x=xi_nodes * Y1)
        else:
            gains = GainBundle(x=xi_nodes * Y1, p1=np.zeros(n_i), p2=0.0, p3=0.0, p4=0.0)
        grad_top = (3.0 * ob.T_hat[-1] - 4.0 * ob.T_hat[-2] + ob.T_hat[-3]) / (2.0 * Y1 / (n_i - 1))
        dH_hat = gains.p4 * innovation + obs_params.beta * grad_top \
            - obs_params.F_w / obs_params.q_latent
        top_val = Y2 - gains.p2 * innovation
        bot_val = params.Tm2 - gains.p3 * innovation
        obs_p = obs_params if obs_params is not params else params
        T_hat_new = _implicit_ice_step(ob.T_hat, Y1, top_val, dt, obs_p,
                                       Y1_dot, False, spec,
                                       injection=-gains.p1 * innovation,
                                       bottom_value=bot_val)
        # observer diffusivity perturbation is carried by obs_params.k0/rho/c0
        H_hat_new = ob.H_hat + dt * dH_hat

        if H_new < H_ICE_MIN or H_hat_new < H_ICE_MIN:
            run.halted = True
            run.halt_reason = "thickness underflow during estimation run"
            break
        state = SeaIceState(h=h_new, H=H_new, T_s=T_s_new, T_i=T_i_new, time=t + dt)
        ob = SeaIceObserverState(H_hat=H_hat_new, T_hat=T_hat_new, time=t + dt)
        t += dt
        steps += 1
        if steps % output_stride == 0 or t >= t_end - 1e-9:
            record(t)

    run.times = np.array(times)
    run.H = np.array(Hs)
    run.H_hat = np.array(Hhats)
    run.err_l2 = np.array(errs)
    run.overshoot = overshoot
    return run


def robustness_run(params: SeaIceParams, forcing: MonthlyForcing,
                   init: SeaIceState, obs: SeaIceObserverParams,
                   deltas, t_end: float, **kwargs):
    """Observer with perturbed D_i(1+d1), beta(1+d2), F_w(1+d3) vs. true plant.

    D_i and beta are perturbed through k0 and q_latent: k0' = k0 (1+d1)
    scales D_i; q_latent' = k0'/ (beta (1+d2)) realizes the beta factor.
    Returns the estimation run plus simple settling metrics on |H - H_hat|.
    """
    d1, d2, d3 = deltas
    k0p = params.k0 * (1.0 + d1)
    # rho c0 unchanged => D_i scales by (1+d1); choose q so beta scales by (1+d2)
    qp = k0p / (params.beta * (1.0 + d2))
    obs_params = replace(params, k0=k0p, q_latent=qp, F_w=params.F_w * (1.0 + d3))
    run = run_estimation(params, forcing, init, obs, t_end, obs_params=obs_params,
                         **kwargs)
    herr = np.abs(run.H - run.H_hat)
    peak = float(np.max(herr)) if herr.size else 0.0
    settle_day = None
    band = 0.1 * peak
    for i in range(len(herr)):
        if np.all(herr[i:] <= band + 1e-15):
            settle_day = run.times[i] / DAY
            break
    return run, {"peak_abs_h_error": peak, "band": band, "settle_day": settle_day}


def c_condition_check(obs: SeaIceObserverParams, params: SeaIceParams,
                      H: float = 3.0) -> dict:
    """Advisory check of the spectral condition on c (heuristic f-bar).

    The condition involves an unquantified bound f_bar on the auxiliary
    function f(x, H) = r(x, H) p3 + dphi/dH; f_bar is estimated numerically
    on [0, H] with a finite-difference H-derivative.  Advisory only.
    """
    lam, c, eps = obs.lam, obs.c, obs.epsilon
    D, beta = params.D_i, params.beta
    lam_bar = lam / D
    x = np.linspace(0.0, 1.0, 200) * H

    def phi(xv, Hv):
        zz = np.sqrt(np.maximum(lam_bar * (Hv**2 - xv**2), 0.0))
        return (lam / beta) * xv * bessel_ratio_j1(zz)

    z = np.sqrt(np.maximum(lam_bar * (H**2 - x**2), 0.0))
    r = lam_bar * x * bessel_ratio_j1(z)
    p3 = -lam * H / (2.0 * beta) - eps
    dH = 1e-4 * H
    phi_H = (phi(x, H + dH) - phi(x, H - dH)) / (2.0 * dH)
    f = r * p3 + phi_H
    f_bar = float(np.max(np.abs(f)))
    threshold = beta * obs.M**2 * f_bar / (eps * lam) + beta * obs.M * eps
    return {"f_bar": f_bar, "threshold": threshold, "satisfied": bool(c > threshold)}
