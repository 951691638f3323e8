import numpy as np
import pytest

from evstab.equilibria import SteadyState, schwarzschild_level_radii
from evstab.errors import OutOfSupportError, SingleWellViolation
from evstab.orbits import (angle, characteristic_period, critical_radius,
                           effective_potential, orbit_solution, period,
                           turning_points, verify_single_well)
from evstab.orbits import _psi_second_derivative


def test_effective_potential_limits(vacuum_shell):
    ss = vacuum_shell
    assert float(effective_potential(ss, 0.0, 10.0)) == pytest.approx(
        float(np.exp(ss.mu0(10.0))), rel=1e-14)
    assert float(effective_potential(ss, 15.0, 2.0 * (1 + 1e-9))) < 1e-3
    assert float(effective_potential(ss, 15.0, 1e9)) == pytest.approx(1.0, abs=1e-8)


def test_single_well_shell(shell_support):
    sup = shell_support
    assert sup.L_lo == 15.0
    assert sup.L_max > sup.L_lo
    assert np.all(np.diff(sup.L_nodes) > 0)
    assert np.all((sup.IL_lo < sup.r_L) & (sup.r_L < sup.IL_hi))
    assert np.all(sup.E_min < sup.E0)


def test_single_well_formal_vacuum(vacuum_shell, shell_params):
    sup = verify_single_well(vacuum_shell, n_L=16)
    assert sup.formal
    # the well radius of the tagged band matches the closed-form minimum
    r_L = critical_radius(vacuum_shell, 15.0)
    assert r_L == pytest.approx(shell_params.r_L0, rel=1e-10)


def test_single_well_sufficient_condition(polytrope_state):
    sup = verify_single_well(polytrope_state, n_L=24)
    assert sup.sufficient_condition is True   # max 2m/r = 0.11 <= 1/3
    assert sup.T_min > 0 and np.isfinite(sup.T_max)


def test_single_well_violation_detected(shell_state):
    y_bump = shell_state.y_table + 5e-3 * np.exp(-((shell_state.r_grid - 16.0) / 1.5) ** 2)
    bad = SteadyState(mode="shell", M=shell_state.M, eos=shell_state.eos,
                      r_grid=shell_state.r_grid, y=y_bump, m=shell_state.m_table,
                      E0_cut=shell_state.E0_cut, Rmin=shell_state.Rmin,
                      Rmax=shell_state.Rmax, M_vlasov=shell_state.M_vlasov,
                      r0_indicator=shell_state.r0_indicator)
    with pytest.raises(SingleWellViolation) as err:
        verify_single_well(bad, n_L=24)
    assert err.value.L > 15.0


def test_turning_points_defining_property(shell_state, shell_support):
    rng = np.random.default_rng(7)
    for _ in range(10):
        L = 15.0 + (shell_support.L_max - 15.0) * rng.uniform(0.05, 0.9)
        e_lo, e_hi = shell_support.E_range(L)
        E = e_lo + (e_hi - e_lo) * rng.uniform(0.1, 0.9)
        rm, rp = turning_points(shell_state, E, L)
        assert rm < rp
        assert float(effective_potential(shell_state, L, rm)) == pytest.approx(E, rel=1e-12)
        assert float(effective_potential(shell_state, L, rp)) == pytest.approx(E, rel=1e-12)
        mid = np.linspace(rm * 1.001, rp * 0.999, 20)
        assert np.all(effective_potential(shell_state, L, mid) < E)


def test_turning_points_match_level_radii_vacuum(vacuum_shell):
    # delta = 0: two independent root finders on the closed-form potential
    _, rm_ref, rp_ref = schwarzschild_level_radii(1.0, 15.0, 0.97)
    rm, rp = turning_points(vacuum_shell, 0.97, 15.0)
    assert rm == pytest.approx(rm_ref, rel=1e-10)
    assert rp == pytest.approx(rp_ref, rel=1e-10)


def test_turning_points_out_of_support(shell_state):
    with pytest.raises(OutOfSupportError):
        turning_points(shell_state, 0.9999, 15.5)   # above cut-off
    with pytest.raises(OutOfSupportError):
        turning_points(shell_state, 0.8, 15.5)      # below the well minimum


def test_turning_points_collapse_to_rL(shell_state):
    L = 17.0
    r_L = critical_radius(shell_state, L)
    E = float(effective_potential(shell_state, L, r_L)) + 1e-10
    rm, rp = turning_points(shell_state, E, L)
    assert rm == pytest.approx(r_L, abs=2e-3)
    assert rp == pytest.approx(r_L, abs=2e-3)


def test_period_vs_characteristic_ode(shell_state, shell_support):
    rng = np.random.default_rng(3)
    errs = []
    for _ in range(12):
        L = 15.0 + (shell_support.L_max - 15.0) * rng.uniform(0.03, 0.92)
        e_lo, e_hi = shell_support.E_range(L)
        E = e_lo + (e_hi - e_lo) * rng.uniform(0.05, 0.95)
        T = period(shell_state, E, L)
        T_ode = characteristic_period(shell_state, E, L)
        errs.append(abs(T - T_ode) / T_ode)
    assert max(errs) < 1e-6


def test_period_harmonic_branch(shell_state):
    L = 17.0
    r_L = critical_radius(shell_state, L)
    E_min = float(effective_potential(shell_state, L, r_L))
    psi2 = _psi_second_derivative(shell_state, np.array([L]), np.array([r_L]))[0]
    # just below the switching width: harmonic formula against the ODE orbit
    E = E_min + psi2 * (0.9e-4 * r_L) ** 2 / 8.0
    T, flagged = period(shell_state, E, L, return_flag=True)
    assert flagged
    assert T == pytest.approx(characteristic_period(shell_state, E, L), rel=1e-6)
    # just above: quadrature and harmonic branches agree to 1 percent
    E2 = E_min + psi2 * (1.5e-4 * r_L) ** 2 / 8.0
    T2, flagged2 = period(shell_state, E2, L, return_flag=True)
    assert not flagged2
    pref = np.exp(shell_state.lambda0(r_L) - shell_state.mu0(r_L))
    T_harm = 2.0 * np.pi * pref * np.sqrt(E2 / psi2)
    assert T2 == pytest.approx(T_harm, rel=1e-2)


def test_angle_endpoints_and_monotonicity(shell_state, shell_support):
    L = 16.0
    e_lo, e_hi = shell_support.E_range(L)
    E = 0.5 * (e_lo + e_hi)
    rm, rp = turning_points(shell_state, E, L)
    assert angle(shell_state, rm, E, L) == pytest.approx(0.0, abs=1e-10)
    assert angle(shell_state, rp, E, L) == pytest.approx(0.5, abs=1e-10)
    r = np.linspace(rm * 1.0005, rp * 0.9995, 50)
    th = angle(shell_state, r, np.full_like(r, E), np.full_like(r, L))
    assert np.all(np.diff(th) > 0)


def test_orbit_table_invariants(shell_state, shell_support):
    L = 16.0
    e_lo, e_hi = shell_support.E_range(L)
    E = 0.5 * (e_lo + e_hi)
    tab = orbit_solution(shell_state, E, L, n_theta=64)
    # energy conserved along the table
    e_chk = shell_state.energy(tab.R, tab.W, L)
    assert np.max(np.abs(e_chk - E)) < 1e-8 * E
    assert tab.theta[0] == 0.0 and tab.theta[-1] == 0.5
    assert tab.W[0] == 0.0 and tab.W[-1] == pytest.approx(0.0, abs=1e-12)
    # inverse-function consistency R(angle(r)) = r
    th = angle(shell_state, tab.R[1:-1], E, L)
    assert np.max(np.abs(th - tab.theta[1:-1])) < 1e-8


def test_orbit_table_vs_characteristic_flow(shell_state, shell_support):
    from scipy.integrate import solve_ivp

    ss = shell_state
    L = 18.0
    e_lo, e_hi = shell_support.E_range(L)
    E = e_lo + 0.6 * (e_hi - e_lo)
    tab = orbit_solution(ss, E, L, n_theta=32)

    def rhs(t, s):
        r, w = s
        eps = np.sqrt(1.0 + w**2 + L / r**2)
        fac = np.exp(ss.mu0(r) - ss.lambda0(r))
        return [fac * w / eps, fac * (L / (r**3 * eps) - ss.mu0_prime(r) * eps)]

    for k in (8, 16, 24):
        t_target = tab.theta[k] * tab.T
        sol = solve_ivp(rhs, (0.0, t_target), [tab.r_minus, 0.0], method="DOP853",
                        rtol=1e-11, atol=1e-13)
        assert sol.y[0, -1] == pytest.approx(tab.R[k], rel=1e-6)
        assert sol.y[1, -1] == pytest.approx(tab.W[k], abs=1e-6 * (1 + abs(tab.W[k])))
