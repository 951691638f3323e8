import numpy as np
import pytest

from evstab.eos import phi, phi_prime
from evstab.errors import GridMismatchError
from evstab.mathur import alpha0
from evstab.phase_space import (PhaseFunction, PhaseGrid, hlr_identity_residual,
                                inner_product, lambda_field, s4_bound, source_terms)
from evstab.quadrature import gauss_nodes


def _f0_function(ss):
    return lambda r, w, L, E: phi(ss.eos, E, L) * (r >= ss.r0_indicator)


def test_parity_orthogonality(shell_grid):
    fe = PhaseFunction.from_rwl(shell_grid,
                                lambda r, w, L, E: np.cos(37 * E) * np.exp(-(L - 18) ** 2) + w**2,
                                parity="even")
    fo = PhaseFunction.from_rwl(shell_grid,
                                lambda r, w, L, E: w * np.exp(-(E - 0.97) ** 2 * 900),
                                parity="odd")
    assert abs(inner_product(fe, fo)) < 1e-12 * fe.norm() * fo.norm()
    assert inner_product(fo, fo) > 0


def test_parity_projection_split(shell_grid):
    f = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: np.sin(w * 30) + E * L / 20.0)
    fp, fm = f.even_part(), f.odd_part()
    assert np.max(np.abs(fp.values + fm.values - f.values)) < 1e-14 * np.max(np.abs(f.values))
    assert abs(inner_product(fp, fm)) < 1e-12 * max(fp.norm() * fm.norm(), 1e-30)


def test_grid_mismatch_rejected(shell_state, shell_support, shell_grid):
    other = PhaseGrid(shell_state, shell_support, n_theta=64, n_L=6, n_E=8)
    f = PhaseFunction.from_rwl(shell_grid, lambda r, w, L, E: E)
    g = PhaseFunction.from_rwl(other, lambda r, w, L, E: E)
    with pytest.raises(GridMismatchError):
        inner_product(f, g)


def test_radial_form_inner_product_reduces_to_1d(shell_state, shell_grid):
    # <|phi'| w a0 F, |phi'| w a0 G>_H = int F G dr for supported F, G
    ss = shell_state
    c = 0.5 * (ss.Rmin + ss.Rmax)
    wdt = 0.1 * (ss.Rmax - ss.Rmin)
    F = lambda r: np.exp(-((r - c + 2) / wdt) ** 2)
    G = lambda r: np.exp(-((r - c - 2) / wdt) ** 2) * (r / c)

    def make(H):
        return PhaseFunction.from_rwl(
            shell_grid,
            lambda r, w, L, E: np.abs(phi_prime(ss.eos, E, L)) * w * alpha0(ss, r) * H(r),
            parity="odd")

    lhs = inner_product(make(F), make(G))
    x, wq = gauss_nodes(200, ss.Rmin, ss.Rmax)
    rhs = float(np.sum(wq * F(x) * G(x)))
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_volume_element_identity(shell_state, shell_grid):
    # iiint h dr dw dL = iint int e^{-lambda0} T h dtheta dE dL
    # h = phi(E, L) g(r) w^2 is smooth and supported exactly on Omega_0
    from evstab.phase_space import SliceQuadrature

    ss = shell_state
    c = 0.5 * (ss.Rmin + ss.Rmax)
    g = lambda r: 1.0 + np.sin(0.3 * (r - c))

    def h(r, w, L):
        E = ss.energy(r, w, L)
        return phi(ss.eos, E, L) * g(r) * w**2 * (r >= ss.r0_indicator)

    # direct (r, w, L) integration: tensor Gauss in the slice at Gauss radii
    xr, wr = gauss_nodes(200, ss.Rmin, ss.Rmax)
    quad = SliceQuadrature(ss, xr, order=48)
    inner = np.einsum("rwl,rwl->r", quad.wt,
                      h(quad._r3, quad.w, quad.L) + h(quad._r3, -quad.w, quad.L))
    lhs = float(np.sum(wr * inner))

    vals = h(shell_grid.R, shell_grid.W, shell_grid.L_grid)
    w_el = (shell_grid.L_w[:, None] * shell_grid.E_w) * shell_grid.T
    rhs = float(np.sum(w_el * np.mean(np.exp(-ss.lambda0(shell_grid.R)) * vals, axis=0)))
    assert rhs == pytest.approx(lhs, rel=1e-6)


def test_source_terms_parity_structure(shell_grid):
    fo = PhaseFunction.from_rwl(shell_grid,
                                lambda r, w, L, E: w * np.exp(-(E - 0.97) ** 2 * 500),
                                parity="odd")
    st = source_terms(fo)
    assert np.max(np.abs(st.rho)) == 0.0
    assert np.max(np.abs(st.p)) == 0.0
    assert np.max(np.abs(st.q)) == 0.0
    assert np.max(np.abs(st.j)) > 0.0
    fe = PhaseFunction.from_rwl(shell_grid,
                                lambda r, w, L, E: np.exp(-(E - 0.97) ** 2 * 500),
                                parity="even")
    st_e = source_terms(fe)
    assert np.max(np.abs(st_e.j)) == 0.0
    assert np.max(st_e.rho) > 0.0


def test_source_terms_reproduce_equilibrium(shell_state, shell_grid):
    f0 = PhaseFunction.from_rwl(shell_grid, _f0_function(shell_state), parity="even")
    st = source_terms(f0)
    for got, ref in ((st.rho, shell_state.rho0(st.r)), (st.p, shell_state.p0(st.r)),
                     (st.q, shell_state.q0(st.r))):
        assert np.max(np.abs(got - ref)) < 1e-5 * np.max(ref)


def test_lambda_field(shell_state, shell_grid):
    ss = shell_state
    fo = PhaseFunction.from_rwl(shell_grid, lambda r, w, L, E: w, parity="odd")
    _, lam = lambda_field(fo)
    assert np.max(np.abs(lam)) == 0.0

    f0 = PhaseFunction.from_rwl(shell_grid, _f0_function(ss), parity="even")
    r, lam = lambda_field(f0)
    ref = np.exp(2.0 * ss.lambda0(ss.Rmax)) * ss.M_vlasov / ss.Rmax
    assert lam[-1] == pytest.approx(ref, rel=1e-6)
    # linearity
    f2 = PhaseFunction.from_rwl(
        shell_grid, lambda rr, w, L, E: 2.0 * _f0_function(ss)(rr, w, L, E), parity="even")
    _, lam2 = lambda_field(f2)
    assert np.max(np.abs(lam2 - 2.0 * lam)) < 1e-12 * np.max(np.abs(lam2))


def test_hlr_identity_gate(shell_state, polytrope_state, king_state):
    for ss in (shell_state, polytrope_state, king_state):
        assert hlr_identity_residual(ss) < 1e-6
    # already at quadrature consistency level; refinement keeps it there
    assert hlr_identity_residual(shell_state, n=800) < 1e-12


def test_s4_bound(shell_state, vacuum_shell):
    out = s4_bound(shell_state)
    assert out["bounded"]
    assert out["sup_phi_prime_integral"] > 0
    vac = s4_bound(vacuum_shell)
    assert vac["sup_phi_prime_integral"] == 0.0
