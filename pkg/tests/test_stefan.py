"""Unit and property tests for the one-phase moving-boundary plant."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stefanest.stefan import (
    HeatInput,
    StefanParams,
    StefanState,
    Trajectory,
    energy_balance,
    immobilized_rhs,
    lumped_energy,
    simulate,
    validate_state,
)

PARAMS = StefanParams.normalized(domain_length=6.0)


def linear_profile(n: int, amp: float, t_melt: float = 0.0) -> np.ndarray:
    xi = np.linspace(0.0, 1.0, n)
    return t_melt + amp * (1.0 - xi)


# --------------------------------------------------------------------------
# Right-hand side on states with closed-form behaviour
# --------------------------------------------------------------------------

def test_equilibrium_is_stationary():
    # uniform melt-temperature profile with no heating does not move
    state = StefanState(s=1.0, theta=np.full(41, PARAMS.t_melt), time=0.0)
    dtheta, ds = immobilized_rhs(state, PARAMS, q_c=0.0)
    assert ds == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(dtheta, 0.0, atol=1e-12)


def test_interface_speed_on_linear_profile():
    # theta = g (s - x): the interface gradient is -g in physical coordinates,
    # so the front advances at beta * g
    g = 0.7
    s = 1.3
    n = 201
    xi = np.linspace(0.0, 1.0, n)
    theta = g * s * (1.0 - xi) + PARAMS.t_melt
    state = StefanState(s=s, theta=theta, time=0.0)
    _, ds = immobilized_rhs(state, PARAMS, q_c=0.0)
    assert ds == pytest.approx(PARAMS.beta * g, rel=1e-6)


def test_zinc_like_derived_constants():
    p = StefanParams.zinc_like()
    assert p.alpha == pytest.approx(p.k / (p.rho * p.cp), rel=1e-12)
    assert p.beta == pytest.approx(p.k / (p.rho * p.latent), rel=1e-12)


def test_validate_state_flags_cold_spot():
    theta = linear_profile(21, 0.5)
    theta[7] = PARAMS.t_melt - 0.01
    diag = validate_state(StefanState(s=1.0, theta=theta, time=0.0), PARAMS)
    assert not diag.valid
    assert diag.argmin == 7
    assert diag.min_margin == pytest.approx(-0.01)


# --------------------------------------------------------------------------
# Simulation invariants
# --------------------------------------------------------------------------

def test_rejects_bad_initial_data():
    with pytest.raises(ValueError, match="inside"):
        simulate(PARAMS, HeatInput.constant(0.1), 7.0, linear_profile(11, 0.5), 0.1)
    with pytest.raises(ValueError, match="melting temperature"):
        bad = linear_profile(11, 0.5)
        bad[3] = -1.0
        simulate(PARAMS, HeatInput.constant(0.1), 1.0, bad, 0.1)
    with pytest.raises(ValueError, match="interface"):
        simulate(PARAMS, HeatInput.constant(0.1), 1.0,
                 linear_profile(11, 0.5) + 0.2, 0.1)


@settings(max_examples=12, deadline=None)
@given(q=st.floats(min_value=0.0, max_value=1.0),
       amp=st.floats(min_value=0.0, max_value=1.0),
       s0=st.floats(min_value=0.5, max_value=2.0))
def test_monotone_melting_property(q, amp, s0):
    # non-negative heating keeps the front advancing and the liquid at or
    # above the melt temperature
    traj = simulate(PARAMS, HeatInput.constant(q), s0,
                    linear_profile(31, amp), 0.3, output_stride=20)
    assert not traj.halted
    s = traj.interface()
    assert np.all(np.diff(s) >= -1e-12)
    for state in traj.states:
        assert np.min(state.theta) >= PARAMS.t_melt - 1e-9


def test_energy_identity_small_residual():
    traj = simulate(PARAMS, HeatInput.constant(0.3), 1.0,
                    linear_profile(61, 0.5), 1.0, output_stride=50)
    res = energy_balance(traj, HeatInput.constant(0.3), PARAMS)
    assert np.max(np.abs(res)) < 1e-3


def test_interface_position_converges_under_refinement():
    # front position at t_end against a fine-grid reference
    t_end = 0.5
    ref = simulate(PARAMS, HeatInput.constant(0.3), 1.0,
                   linear_profile(161, 0.5), t_end).states[-1].s
    errs = []
    for n in (21, 41, 81):
        s = simulate(PARAMS, HeatInput.constant(0.3), 1.0,
                     linear_profile(n, 0.5), t_end).states[-1].s
        errs.append(abs(s - ref))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > 2.0   # at least first order in practice


def test_strict_mode_halts_instead_of_warning():
    # a strongly negative heat input freezes the boundary layer and violates
    # the validity envelope; strict mode must stop with a diagnostic
    traj = simulate(PARAMS, HeatInput.constant(-5.0), 1.0,
                    linear_profile(41, 0.2), 2.0, strict=True)
    assert traj.halted
    assert traj.halt_reason != ""


def test_lumped_energy_formula():
    state = StefanState(s=2.0, theta=linear_profile(101, 1.0), time=0.0)
    # int_0^s theta dx = s * amp / 2 = 1.0 for the linear profile
    expected = 1.0 / PARAMS.alpha + 2.0 / PARAMS.beta
    assert lumped_energy(state, PARAMS) == pytest.approx(expected, rel=1e-4)


def test_trajectory_accessors():
    traj = Trajectory(states=[StefanState(s=1.0, theta=np.zeros(5), time=0.0),
                              StefanState(s=1.5, theta=np.zeros(5), time=1.0)])
    assert np.allclose(traj.times(), [0.0, 1.0])
    assert np.allclose(traj.interface(), [1.0, 1.5])
