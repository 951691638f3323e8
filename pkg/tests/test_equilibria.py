import math

import numpy as np
import pytest
from scipy.optimize import bisect

from evstab.eos import EquationOfState
from evstab.equilibria import (ShellParameters, build_shell, diagnostics,
                               equilibrium_residuals, load_state, save_state,
                               schwarzschild_critical_radii, schwarzschild_level_radii,
                               schwarzschild_potential, solve_singularity_free)
from evstab.errors import ConfigurationError, NumericalError


# -- Schwarzschild closed forms ---------------------------------------------


def test_critical_radii_reference_values():
    s, r = schwarzschild_critical_radii(1.0, 15.0)
    assert s == pytest.approx((15 - math.sqrt(45)) / 2, rel=1e-14)
    assert r == pytest.approx((15 + math.sqrt(45)) / 2, rel=1e-14)


def test_critical_radii_threshold():
    with pytest.raises(ConfigurationError):
        schwarzschild_critical_radii(1.0, 12.0)
    # just above the threshold both radii collapse toward the double root 6M
    s, r = schwarzschild_critical_radii(1.0, 12.0 + 1e-9)
    assert s == pytest.approx(6.0, abs=1e-4)
    assert r == pytest.approx(6.0, abs=1e-4)


def test_critical_radii_vs_bisection_oracle():
    M = 1.0
    dpsi = lambda rr, L: (schwarzschild_potential(M, L, rr + 1e-7)
                          - schwarzschild_potential(M, L, rr - 1e-7))
    for L in np.linspace(12.5, 40.0, 25):
        s, r = schwarzschild_critical_radii(M, L)
        s_ref = bisect(dpsi, 2 * M + 1e-3, 6 * M - 1e-6, args=(L,), xtol=1e-12)
        r_ref = bisect(dpsi, 6 * M + 1e-6, 100 * M, args=(L,), xtol=1e-12)
        assert s == pytest.approx(s_ref, rel=2e-6)
        assert r == pytest.approx(r_ref, rel=2e-6)


def test_barrier_height_threshold():
    # Psi(s_L) > 1 exactly for L > 16 M^2
    for L, above in ((15.0, False), (17.0, True)):
        s, _ = schwarzschild_critical_radii(1.0, L)
        assert (schwarzschild_potential(1.0, L, s) > 1.0) == above


def test_level_radii_ordering_and_bound():
    M = 1.0
    rng_L = np.linspace(13.0, 30.0, 10)
    for L in rng_L:
        s, rl = schwarzschild_critical_radii(M, L)
        lo = schwarzschild_potential(M, L, rl)
        hi = min(1.0, schwarzschild_potential(M, L, s))
        for E in lo + (hi - lo) * np.linspace(0.1, 0.9, 10):
            r0, rm, rp = schwarzschild_level_radii(M, L, E)
            assert 2 * M < r0 < s < rm < rl < rp
            assert rm > 4 * M
            for rr in (r0, rm, rp):
                assert schwarzschild_potential(M, L, rr) == pytest.approx(E, rel=1e-13)


def test_level_radii_band_errors():
    with pytest.raises(ConfigurationError):
        schwarzschild_level_radii(1.0, 15.0, 0.9999)  # above min(1, Psi(s_L))
    with pytest.raises(ConfigurationError):
        schwarzschild_level_radii(1.0, 15.0, 0.9)     # below Psi(r_L)


def test_level_radii_collapse_to_minimum():
    M, L = 1.0, 15.0
    _, rl = schwarzschild_critical_radii(M, L)
    E = schwarzschild_potential(M, L, rl) + 1e-10
    _, rm, rp = schwarzschild_level_radii(M, L, E)
    assert rm == pytest.approx(rl, abs=1e-3)
    assert rp == pytest.approx(rl, abs=1e-3)


def test_shell_parameters_validation():
    with pytest.raises(ConfigurationError):
        ShellParameters(M=1.0, L0=10.0, E_intermediate=0.98)
    with pytest.raises(ConfigurationError):
        ShellParameters(M=1.0, L0=15.0, E_intermediate=0.9999)
    with pytest.raises(ConfigurationError):
        ShellParameters(M=1.0, L0=15.0, E_intermediate=0.98, eta0=10.0)
    p = ShellParameters(M=1.0, L0=15.0, E_intermediate=0.98)
    assert p.r0 == p.s_L0
    assert p.r0 + p.eta0 < p.R_min0
    assert p.y_init == pytest.approx(math.log(math.sqrt(2.0) * 0.98))


# -- singularity-free construction -------------------------------------------


def test_vacuum_amplitude_returns_minkowski():
    ss = solve_singularity_free(
        EquationOfState(family="polytrope", k=1.0, delta=0.0), 0.1)
    assert not ss.has_matter
    assert ss.E0_cut is None and ss.Rmin is None and ss.Rmax is None
    r = np.linspace(0.5, 5.0, 7)
    assert np.max(np.abs(ss.mu0(r))) == 0.0


def test_polytrope_state_basic(polytrope_state):
    ss = polytrope_state
    assert 0.0 < ss.E0_cut < 1.0
    assert np.isfinite(ss.Rmax) and ss.Rmax > 0
    assert ss.M_vlasov > 0
    assert diagnostics(ss)["max_2m_over_r"] < 8.0 / 9.0


def test_polytrope_cutoff_oracle(polytrope_state):
    # independent high-order integrator at tighter tolerance
    from scipy.integrate import solve_ivp
    from evstab.eos import profile_G, profile_H, alpha_max

    eos = polytrope_state.eos

    def rhs(r, u):
        y, m = u
        rho = profile_G(eos, r, y)
        p = profile_H(eos, r, y)
        return [-(m / r**2 + 4 * np.pi * r * p) / (1 - 2 * m / r),
                4 * np.pi * r**2 * rho]

    def exit_event(r, u):
        return alpha_max(eos, r, u[0])

    exit_event.terminal = True
    exit_event.direction = -1
    sol = solve_ivp(rhs, (1e-8, 1e4), [0.1, 0.0], method="DOP853", rtol=1e-12,
                    atol=1e-14, events=exit_event)
    R = sol.t_events[0][0]
    yR, mR = sol.sol(R) if sol.sol else sol.y_events[0][0]
    E0_oracle = math.exp(yR + 0.5 * math.log1p(-2 * mR / R))
    assert polytrope_state.E0_cut == pytest.approx(E0_oracle, rel=1e-8)


def test_singfree_residuals(polytrope_state, king_state):
    for ss in (polytrope_state, king_state):
        res = equilibrium_residuals(ss)
        assert all(v < 1e-6 for v in res.values()), res


def test_singfree_isotropy_inequality(polytrope_state):
    r = polytrope_state.support_grid(200)
    p, rho = polytrope_state.p0(r), polytrope_state.rho0(r)
    assert np.all(3 * p <= rho * (1 + 1e-12))


def test_metric_asymptotics(polytrope_state):
    ss = polytrope_state
    r = ss.r_grid
    mu = ss.mu0(r)
    assert np.all(np.diff(mu) >= -1e-12)          # nondecreasing
    assert abs(ss.mu0(1e6)) < 1e-6                # flatness
    lam_expected = -0.5 * np.log1p(-2 * (ss.M + ss.m(r)) / r)
    assert np.max(np.abs(ss.lambda0(r) - lam_expected)) < 1e-12


# -- shell construction -------------------------------------------------------


def test_shell_delta_zero_is_schwarzschild(vacuum_shell):
    r = np.linspace(2.5, 80.0, 200)
    mu_exact = 0.5 * np.log1p(-2.0 / r)
    assert np.max(np.abs(vacuum_shell.mu0(r) - mu_exact)) < 1e-12
    assert vacuum_shell.M_vlasov == 0.0
    d = diagnostics(vacuum_shell)
    assert d["M_ADM"] == pytest.approx(1.0)
    assert d["N_rest_mass"] == 0.0
    assert d["binding_energy"] is None


def test_shell_basic(shell_state, shell_params):
    ss = shell_state
    assert 0.0 < ss.E0_cut < 0.98 * (1 + 1e-3)
    assert ss.M_vlasov > 0
    assert shell_params.R_min0 <= ss.Rmin < ss.Rmax <= shell_params.R_max0
    # matter vanishes outside the a-priori band
    r_out = np.array([3.0, 4.5, shell_params.R_min0 * 0.999,
                      shell_params.R_max0 * 1.001, 60.0])
    assert np.all(ss.rho0(r_out) == 0.0)
    assert np.all(ss.p0(r_out) == 0.0)


def test_shell_y_below_vacuum(shell_state, vacuum_shell):
    r = np.linspace(2.2, 100.0, 400)
    assert np.all(shell_state.y(r) <= vacuum_shell.y(r) + 1e-12)


def test_shell_residuals(shell_state):
    res = equilibrium_residuals(shell_state)
    assert all(v < 1e-6 for v in res.values()), res


def test_shell_no_horizon(shell_state):
    r = shell_state.r_grid
    assert np.all(2 * (shell_state.M + shell_state.m(r)) < r)


def test_delta_convergence(shell_params, shell_eos, shell_state, vacuum_shell):
    rr = np.linspace(2.001, 120.0, 3000)
    sups, masses = [], []
    for d in (1e-3, 5e-4, 2.5e-4):
        sd = shell_state if d == 1e-3 else build_shell(shell_params, shell_eos, d)
        sups.append((np.max(np.abs(sd.mu0(rr) - vacuum_shell.mu0(rr))),
                     np.max(np.abs(sd.lambda0(rr) - vacuum_shell.lambda0(rr)))))
        masses.append(sd.M_vlasov)
    for seq in (np.array([s[0] for s in sups]), np.array([s[1] for s in sups]),
                np.array(masses)):
        ratios = seq[:-1] / seq[1:]
        assert np.all(np.abs(ratios - 2.0) < 0.4), ratios  # halves within 20%


def test_diagnostics_shell(shell_state):
    d = diagnostics(shell_state)
    assert d["M_ADM"] == pytest.approx(shell_state.M + shell_state.M_vlasov, rel=1e-6)
    assert d["N_rest_mass"] > 0
    assert d["max_2m_over_r"] < 8.0 / 9.0


# -- serialization ------------------------------------------------------------


def test_save_load_roundtrip(shell_state, tmp_path):
    path = tmp_path / "state.csv"
    save_state(shell_state, path)
    back = load_state(path)
    assert np.array_equal(back.r_grid, shell_state.r_grid)
    assert np.array_equal(back.y_table, shell_state.y_table)
    assert back.E0_cut == shell_state.E0_cut
    assert back.eos.delta == shell_state.eos.delta
    r = np.linspace(5.0, 40.0, 50)
    assert np.max(np.abs(back.rho0(r) - shell_state.rho0(r))) < 1e-15


def test_save_deterministic(shell_state, tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_state(shell_state, p1)
    save_state(shell_state, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_horizon_violation(shell_state, tmp_path):
    path = tmp_path / "broken.csv"
    save_state(shell_state, path)
    lines = path.read_text().splitlines()
    # corrupt one interior mass entry so that 2(M+m) >= r
    row = lines[400].split(",")
    row[-1] = repr(float(row[0]))  # m = r -> 2(M+m) > r
    lines[400] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(NumericalError):
        load_state(path)
