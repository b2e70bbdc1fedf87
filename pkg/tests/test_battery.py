"""Tests for the core-shell single-particle cell model and its observers."""

import math

import numpy as np
import pytest

from stefanest.battery import (
    BatteryObserverParams,
    CellParams,
    NegParticleState,
    OCPCurve,
    ShellState,
    _fv_diffusion,
    _fv_volumes,
    butler_volmer,
    ekf_estimate,
    exchange_current,
    initial_truth,
    interface_rate,
    matched_estimate,
    molar_flux,
    neg_rhs,
    observer_gains_neg,
    observer_gains_pos,
    run_discharge,
    run_estimation,
    shell_rhs,
    soc,
    terminal_voltage,
    total_lithium,
)

PARAMS = CellParams()
OBS = BatteryObserverParams()


# --------------------------------------------------------------------------
# Fluxes and kinetics
# --------------------------------------------------------------------------

def test_molar_flux_signs_on_discharge():
    I = 10.0
    assert molar_flux(I, "pos", PARAMS) > 0.0    # lithium inserts into the positive
    assert molar_flux(I, "neg", PARAMS) < 0.0    # and leaves the negative


def test_molar_flux_linearity():
    assert molar_flux(6.0, "pos", PARAMS) == pytest.approx(
        3.0 * molar_flux(2.0, "pos", PARAMS))


def test_electrode_flux_balance():
    # a_+ L_+ j_+ + a_- L_- j_- = 0: what one electrode absorbs the other releases
    I = 25.0
    jp = molar_flux(I, "pos", PARAMS)
    jn = molar_flux(I, "neg", PARAMS)
    assert PARAMS.pos.a_s * PARAMS.pos.L * jp + PARAMS.neg.a_s * PARAMS.neg.L * jn \
        == pytest.approx(0.0, abs=1e-18)


def test_one_c_current_value():
    expected = PARAMS.F_const * PARAMS.neg.eps_s * PARAMS.neg.L * PARAMS.neg.c_max / 3600.0
    assert PARAMS.current_1c() == pytest.approx(expected)
    assert PARAMS.current_1c() == pytest.approx(12.276, rel=1e-3)


def test_exchange_current_arithmetic():
    c_ss = 0.5 * PARAMS.neg.c_max
    el = PARAMS.neg
    expected = PARAMS.F_const * el.k_rate * c_ss**0.5 \
        * (PARAMS.c_e0 * (el.c_max - c_ss)) ** 0.5
    assert exchange_current(c_ss, "neg", PARAMS) == pytest.approx(expected, rel=1e-12)


def test_butler_volmer_inversion():
    c_ss = 0.4 * PARAMS.neg.c_max
    assert butler_volmer(0.0, c_ss, "neg", PARAMS) == 0.0
    eta = butler_volmer(1e-6, c_ss, "neg", PARAMS)
    assert butler_volmer(-1e-6, c_ss, "neg", PARAMS) == pytest.approx(-eta)
    # closed form: eta = (2RT/F) asinh(F j / 2 i0)
    i0 = exchange_current(c_ss, "neg", PARAMS)
    expected = 2.0 * PARAMS.R_gas * PARAMS.T_abs / PARAMS.F_const \
        * math.asinh(PARAMS.F_const * 1e-6 / (2.0 * i0))
    assert eta == pytest.approx(expected, rel=1e-12)


def test_voltage_nan_on_saturated_surface():
    neg, shell = initial_truth(PARAMS)
    shell.c[:] = PARAMS.pos.c_max          # saturated positive surface
    v = terminal_voltage(neg, shell, 10.0, OCPCurve.default_pair(), PARAMS)
    assert math.isnan(v)


# --------------------------------------------------------------------------
# Spatial operator: conservation and consistency
# --------------------------------------------------------------------------

def test_fv_diffusion_discrete_conservation():
    n = 40
    r = np.linspace(0.0, PARAMS.neg.R_p, n)
    rng = np.random.Generator(np.random.Philox(1))
    c = 1000.0 + 100.0 * rng.standard_normal(n)
    flux_top = 3e-7
    dc = _fv_diffusion(c, r, PARAMS.neg.D_s, flux_top)
    vols = _fv_volumes(r)
    # volume-weighted total change equals the boundary throughput exactly
    assert float(np.dot(vols, dc)) == pytest.approx(
        r[-1] ** 2 * flux_top, rel=1e-12)


def test_fv_diffusion_exact_on_quadratic():
    # c = r^2 has spherical Laplacian 6, and the finite-volume stencil
    # reproduces 6 D exactly in the interior cells
    n = 30
    r = np.linspace(0.0, 1.0, n)
    D = 2.5
    dc = _fv_diffusion(r**2, r, D, 2.0 * r[-1] * 1.0)   # c_r(R) = 2R
    assert np.allclose(dc[1:-1], 6.0 * D, rtol=1e-10)


def test_uniform_profile_is_equilibrium():
    neg = NegParticleState(c=np.full(35, 9000.0))
    assert np.allclose(neg_rhs(neg, 0.0, PARAMS), 0.0, atol=1e-20)


def test_interface_rate_sign_and_scale():
    # shell concentration rising away from the interface drives the core
    # to shrink: (c_beta - c_alpha) dr_p = -D c_r(r_p) with c_r > 0
    n = 30
    sigma = np.linspace(0.0, 1.0, n)
    shell = ShellState(r_p=0.8 * PARAMS.pos.R_p,
                       c=PARAMS.c_beta + 100.0 * sigma)
    W = PARAMS.pos.R_p - shell.r_p
    rate = interface_rate(shell, PARAMS)
    expected = -PARAMS.pos.D_s * (100.0 / W) / (PARAMS.c_beta - PARAMS.c_alpha)
    assert rate == pytest.approx(expected, rel=1e-6)
    assert rate < 0.0


def test_shell_rhs_guards_interface_range():
    n = 20
    with pytest.raises(RuntimeError, match="center"):
        shell_rhs(ShellState(r_p=1e-4 * PARAMS.pos.R_p,
                             c=np.full(n, PARAMS.c_beta)), 0.0, PARAMS)
    with pytest.raises(RuntimeError, match="surface"):
        shell_rhs(ShellState(r_p=0.9999 * PARAMS.pos.R_p,
                             c=np.full(n, PARAMS.c_beta)), 0.0, PARAMS)


def test_total_lithium_closed_form_uniform():
    neg, shell = initial_truth(PARAMS, soc_neg0=0.5, r_p_frac=0.8)
    frac = 0.8**3
    expected = PARAMS.neg.eps_s * PARAMS.neg.L * 0.5 * PARAMS.neg.c_max \
        + PARAMS.pos.eps_s * PARAMS.pos.L * (PARAMS.c_alpha * frac
                                             + PARAMS.c_beta * (1.0 - frac))
    assert total_lithium(neg, shell, PARAMS) == pytest.approx(expected, rel=1e-12)


def test_soc_windows():
    assert soc(0.5 * PARAMS.neg.c_max, "neg", PARAMS) == pytest.approx(0.5)
    assert soc(0.5 * PARAMS.neg.c_max, "neg", PARAMS, window=(0.25, 0.75)) \
        == pytest.approx(0.5)
    with pytest.raises(ValueError):
        soc(-10.0, "neg", PARAMS)


# --------------------------------------------------------------------------
# Observer gains
# --------------------------------------------------------------------------

def test_positive_gains_kernel_consistency():
    r_p_hat = 0.7 * PARAMS.pos.R_p
    sigma = np.linspace(0.0, 1.0, 60)
    P, Q = observer_gains_pos(r_p_hat, OBS, PARAMS, sigma=sigma)
    s = PARAMS.pos.R_p - r_p_hat
    # P vanishes at the interface (l = 0) and Q carries the diagonal trace
    assert P[0] == pytest.approx(0.0, abs=1e-30)
    assert Q == pytest.approx(PARAMS.pos.D_s / PARAMS.pos.R_p + OBS.lam * s / 2.0)
    assert np.all(np.isfinite(P))
    # independent recomputation at the surface point (z = 0 there)
    lam_bar = OBS.lam / PARAMS.pos.D_s
    expected_surf = PARAMS.pos.D_s * lam_bar**2 * s * s / 8.0
    assert P[-1] == pytest.approx(expected_surf, rel=1e-10)


def test_negative_gains_signs_and_scaling():
    r_p_hat = 0.7 * PARAMS.pos.R_p
    P_minus, Q_minus = observer_gains_neg(r_p_hat, OBS, PARAMS)
    # both carry the opposite sign of the positive-side injection
    assert P_minus < 0.0
    assert Q_minus < 0.0
    ratio_a = (PARAMS.pos.a_s * PARAMS.pos.L) / (PARAMS.neg.a_s * PARAMS.neg.L)
    _, Q = observer_gains_pos(r_p_hat, OBS, PARAMS)
    assert Q_minus == pytest.approx(
        -ratio_a * (Q + OBS.kappa * r_p_hat**2 / PARAMS.pos.R_p**2), rel=1e-12)


def test_gains_reject_unguarded_interface():
    with pytest.raises(ValueError):
        observer_gains_pos(0.0, OBS, PARAMS)


def test_matched_estimate_preserves_lithium():
    neg, shell = initial_truth(PARAMS)
    neg_hat, shell_hat = matched_estimate(PARAMS, neg, shell, soc_neg_hat0=0.46)
    assert total_lithium(neg_hat, shell_hat, PARAMS) == pytest.approx(
        total_lithium(neg, shell, PARAMS), rel=1e-12)
    assert neg_hat.c_avg(PARAMS) == pytest.approx(0.46 * PARAMS.neg.c_max, rel=1e-12)


# --------------------------------------------------------------------------
# Short closed-loop runs
# --------------------------------------------------------------------------

def test_discharge_conserves_lithium_and_shrinks_core():
    run = run_discharge(PARAMS, 2.0 * PARAMS.current_1c(), 30.0, dt=0.025,
                        output_stride=100)
    assert not run.halted
    drift = np.max(np.abs(run.n_li - run.n_li[0])) / run.n_li[0]
    assert drift < 1e-5
    assert run.r_p[-1] < run.r_p[0]
    assert run.soc_neg[-1] < run.soc_neg[0]
    assert run.soc_pos[-1] > run.soc_pos[0]


def test_estimation_run_reduces_soc_error():
    run = run_estimation(PARAMS, 5.0 * PARAMS.current_1c(), 60.0, OBS,
                         dt=0.025, output_stride=100)
    assert not run.halted
    err = np.abs(run.soc_neg_hat - run.soc_neg)
    assert err[0] == pytest.approx(0.20, abs=0.01)
    assert err[-1] < 0.02
    # both inventories stay conserved while the gains shuffle lithium
    assert np.max(np.abs(run.n_li_hat - run.n_li_hat[0])) / run.n_li_hat[0] < 1e-4


def test_estimation_noise_is_seed_deterministic():
    obs = BatteryObserverParams(noise_std=200.0, seed=7)
    a = run_estimation(PARAMS, 2.0 * PARAMS.current_1c(), 10.0, obs, dt=0.05,
                       output_stride=20)
    b = run_estimation(PARAMS, 2.0 * PARAMS.current_1c(), 10.0, obs, dt=0.05,
                       output_stride=20)
    assert np.array_equal(a.measurement, b.measurement)
    assert np.array_equal(a.soc_neg_hat, b.soc_neg_hat)


def test_ekf_runs_and_returns_finite_traces():
    obs = BatteryObserverParams(noise_std=200.0, seed=3,
                                process_var=1.0, meas_var=4e4)
    truth = run_estimation(PARAMS, 2.0 * PARAMS.current_1c(), 30.0, obs,
                           dt=0.05, output_stride=20)
    ekf = ekf_estimate(PARAMS, 2.0 * PARAMS.current_1c(), truth.times,
                       truth.measurement, obs)
    assert np.all(np.isfinite(ekf.soc_pos))
    assert np.all(np.isfinite(ekf.r_p))
    assert len(ekf.soc_pos) == len(truth.times)
