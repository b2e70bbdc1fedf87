"""Shared numerical primitives: Bessel functions, tridiagonal solves,
quadrature, and explicit time stepping.

Bessel functions are evaluated by ascending power series for moderate
arguments and by the scaled asymptotic (Hankel) expansion beyond, so the
package carries no special-function dependency.  All evaluators accept
scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Crossover between power series and asymptotic expansion for I_nu.
_I_SERIES_CUTOFF = 30.0
# Overflow guard: exp(600) is still representable in float64.
_I_OVERFLOW_GUARD = 600.0
# Crossover for J_nu (series loses digits to cancellation past this).
_J_SERIES_CUTOFF = 12.0

_MAX_SERIES_TERMS = 80


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on [0, 1] with n_points nodes."""

    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError(f"GridSpec needs n_points >= 3, got {self.n_points}")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_points)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_points - 1)


@dataclass
class TridiagonalSystem:
    """sub/main/super diagonals and right-hand side of a tridiagonal system."""

    sub: np.ndarray
    main: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.sub = np.asarray(self.sub, dtype=float)
        self.main = np.asarray(self.main, dtype=float)
        self.sup = np.asarray(self.sup, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        n = self.main.size
        if self.rhs.size != n or self.sub.size != n - 1 or self.sup.size != n - 1:
            raise ValueError(
                "inconsistent tridiagonal sizes: "
                f"main={n}, sub={self.sub.size}, sup={self.sup.size}, rhs={self.rhs.size}"
            )


def _i_series(order: int, z: np.ndarray) -> np.ndarray:
    """Ascending power series for I_order(z), vectorized."""
    half = 0.5 * z
    # leading term (z/2)^order / order!
    term = half**order / math.factorial(order)
    total = term.copy()
    half2 = half * half
    for k in range(1, _MAX_SERIES_TERMS):
        term = term * half2 / (k * (k + order))
        total += term
        if np.all(term <= 1e-18 * np.abs(total)):
            break
    return total


def _i_asymptotic(order: int, z: np.ndarray) -> np.ndarray:
    """Large-argument expansion I_nu(z) ~ e^z/sqrt(2 pi z) * sum."""
    mu = 4 * order * order
    inv8z = 1.0 / (8.0 * z)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(1, 30):
        term = term * -(mu - (2 * k - 1) ** 2) * inv8z / k
        total += term
        if np.all(np.abs(term) <= 1e-16 * np.abs(total)):
            break
    return np.exp(z) / np.sqrt(2.0 * np.pi * z) * total


def bessel_i(order: int, z):
    """Modified Bessel function I_order(z) for order in 0..3, z >= 0."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"bessel_i order must be in 0..3, got {order}")
    zarr = np.asarray(z, dtype=float)
    scalar = zarr.ndim == 0
    zarr = np.atleast_1d(zarr)
    if np.any(zarr < 0.0):
        raise ValueError("bessel_i requires z >= 0")
    if np.any(zarr > _I_OVERFLOW_GUARD):
        raise ValueError(f"bessel_i overflow guard: z must be <= {_I_OVERFLOW_GUARD}")
    out = np.empty_like(zarr)
    small = zarr <= _I_SERIES_CUTOFF
    if np.any(small):
        out[small] = _i_series(order, zarr[small])
    if np.any(~small):
        out[~small] = _i_asymptotic(order, zarr[~small])
    return float(out[0]) if scalar else out


def _j_series(order: int, z: np.ndarray) -> np.ndarray:
    half = 0.5 * z
    term = half**order / math.factorial(order)
    total = term.copy()
    half2 = half * half
    for k in range(1, _MAX_SERIES_TERMS):
        term = term * -half2 / (k * (k + order))
        total += term
        if np.all(np.abs(term) <= 1e-18 * (np.abs(total) + 1e-300)):
            break
    return total


def _j_asymptotic(order: int, z: np.ndarray) -> np.ndarray:
    """Hankel expansion J_nu(z) ~ sqrt(2/(pi z)) (P cos w - Q sin w)."""
    mu = 4 * order * order
    inv8z = 1.0 / (8.0 * z)
    p = np.ones_like(z)
    q = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(1, 20):
        term = term * (mu - (2 * k - 1) ** 2) * inv8z / k
        if k % 4 == 1:
            q += term
        elif k % 4 == 2:
            p -= term
        elif k % 4 == 3:
            q -= term
        else:
            p += term
        if np.all(np.abs(term) <= 1e-17):
            break
    w = z - 0.5 * order * np.pi - 0.25 * np.pi
    return np.sqrt(2.0 / (np.pi * z)) * (p * np.cos(w) - q * np.sin(w))


def bessel_j(order: int, z):
    """Bessel function of the first kind J_order(z) for order in 0..2, z >= 0."""
    if order not in (0, 1, 2):
        raise ValueError(f"bessel_j order must be in 0..2, got {order}")
    zarr = np.asarray(z, dtype=float)
    scalar = zarr.ndim == 0
    zarr = np.atleast_1d(zarr)
    if np.any(zarr < 0.0):
        raise ValueError("bessel_j requires z >= 0")
    out = np.empty_like(zarr)
    small = zarr <= _J_SERIES_CUTOFF
    if np.any(small):
        out[small] = _j_series(order, zarr[small])
    if np.any(~small):
        out[~small] = _j_asymptotic(order, zarr[~small])
    return float(out[0]) if scalar else out


def bessel_ratio_i(order: int, z):
    """I_order(z) / z**order with the removable singularity at z = 0 filled
    by its limit 1 / (2**order * order!)."""
    if order not in (1, 2, 3):
        raise ValueError(f"bessel_ratio_i order must be in 1..3, got {order}")
    zarr = np.asarray(z, dtype=float)
    scalar = zarr.ndim == 0
    zarr = np.atleast_1d(zarr)
    if np.any(zarr < 0.0):
        raise ValueError("bessel_ratio_i requires z >= 0")
    if np.any(zarr > _I_OVERFLOW_GUARD):
        raise ValueError(f"bessel_ratio_i overflow guard: z must be <= {_I_OVERFLOW_GUARD}")
    out = np.empty_like(zarr)
    small = zarr <= _I_SERIES_CUTOFF
    if np.any(small):
        # series for I_nu(z)/z^nu: sum_k z^{2k} / (2^{2k+nu} k! (k+nu)!)
        zs = zarr[small]
        term = np.full_like(zs, 1.0 / (2**order * math.factorial(order)))
        total = term.copy()
        q = 0.25 * zs * zs
        for k in range(1, _MAX_SERIES_TERMS):
            term = term * q / (k * (k + order))
            total += term
            if np.all(term <= 1e-18 * total):
                break
        out[small] = total
    if np.any(~small):
        zl = zarr[~small]
        out[~small] = _i_asymptotic(order, zl) / zl**order
    return float(out[0]) if scalar else out


def bessel_ratio_j1(z):
    """J_1(z)/z with the z = 0 limit 1/2 filled in (used by inverse kernels)."""
    zarr = np.asarray(z, dtype=float)
    scalar = zarr.ndim == 0
    zarr = np.atleast_1d(zarr)
    out = np.empty_like(zarr)
    tiny = zarr < 1e-6
    out[tiny] = 0.5 - zarr[tiny] ** 2 / 16.0
    if np.any(~tiny):
        out[~tiny] = bessel_j(1, zarr[~tiny]) / zarr[~tiny]
    return float(out[0]) if scalar else out


def solve_tridiagonal(system: TridiagonalSystem) -> np.ndarray:
    """Thomas algorithm without pivoting; raises on a zero pivot.

    Diagonal dominance is checked up front because every diffusion operator
    assembled in this package is dominant; a violation signals a bug.
    """
    a, b, c, d = system.sub, system.main, system.sup, system.rhs
    n = b.size
    dom = np.abs(b).copy()
    dom[1:] -= np.abs(a)
    dom[:-1] -= np.abs(c)
    if np.any(dom < -1e-12 * np.abs(b)):
        raise ValueError("tridiagonal system is not diagonally dominant")
    cp = np.empty(n)
    dp = np.empty(n)
    if b[0] == 0.0:
        raise ZeroDivisionError("zero pivot in tridiagonal elimination (row 0)")
    cp[0] = c[0] / b[0] if n > 1 else 0.0
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        denom = b[i] - a[i - 1] * cp[i - 1]
        if denom == 0.0:
            raise ZeroDivisionError(f"zero pivot in tridiagonal elimination (row {i})")
        cp[i] = c[i] / denom if i < n - 1 else 0.0
        dp[i] = (d[i] - a[i - 1] * dp[i - 1]) / denom
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def integrate_trapezoid(values, spacing: float) -> float:
    """Composite trapezoid rule over uniformly spaced samples."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("integrate_trapezoid needs at least 2 samples")
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    trapz = getattr(np, "trapezoid", np.trapz)
    return float(trapz(values, dx=spacing))


def rk4_step(rhs, t: float, y, h: float):
    """One classical 4th-order Runge-Kutta step for dy/dt = rhs(t, y)."""
    if h <= 0.0:
        raise ValueError("rk4_step requires h > 0")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(rhs(t, y), dtype=float)
    k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(rhs(t + h, y + h * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise FloatingPointError("non-finite derivative encountered in rk4_step")
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def diffusion_stable_step(dx: float, max_diffusivity: float, safety: float = 0.4) -> float:
    """Explicit-step bound h <= safety * dx^2 / (2 * D) for diffusion."""
    if max_diffusivity <= 0.0:
        raise ValueError("max_diffusivity must be positive")
    return safety * dx * dx / (2.0 * max_diffusivity)
