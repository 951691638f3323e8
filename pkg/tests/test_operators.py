import numpy as np
import pytest

from evstab.eos import phi, phi_prime
from evstab.errors import TransportImageError
from evstab.operators import (KernelBasis, b_apply, build_kernel_basis, check_kernelB,
                              lambda_identity_residuals, lift_to_kernelB,
                              project_kerB, transport_apply, transport_inverse)
from evstab.phase_space import PhaseFunction, inner_product


def _bump(E, L):
    return np.exp(-((E - 0.9715) / 0.004) ** 2) * np.exp(-((L - 19) / 2.5) ** 2)


def _trig_pair(grid, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)
    b = rng.normal(size=4)

    def fn(th, E, L):
        sig = sum(a[k] * np.cos(2 * np.pi * (k + 1) * th)
                  + b[k] * np.sin(2 * np.pi * (k + 1) * th) for k in range(4))
        return sig * np.exp(-((E - 0.97) * 30) ** 2) * (1 + 0.05 * L)

    return PhaseFunction.from_theta(grid, fn)


def test_transport_kills_functions_of_EL(shell_grid):
    g = PhaseFunction.from_theta(grid=shell_grid, parity="even",
                                 theta_fn=lambda th, E, L: (E - 0.97) * (L - 18) + 0 * th)
    assert np.max(np.abs(transport_apply(g).values)) == 0.0


def test_transport_oscillator(shell_grid):
    f = PhaseFunction.from_theta(shell_grid,
                                 lambda th, E, L: np.sin(2 * np.pi * th) * _bump(E, L),
                                 parity="odd")
    Tf = transport_apply(f)
    expected = -(2 * np.pi / shell_grid.T[None]) \
        * np.cos(2 * np.pi * shell_grid.theta)[:, None, None] \
        * _bump(shell_grid.E_nodes[None], shell_grid.L_nodes[None, :, None])
    assert np.max(np.abs(Tf.values - expected)) < 1e-12 * np.max(np.abs(expected))
    assert Tf.parity == "even"


def test_transport_skew_symmetry(shell_grid):
    for seed in range(5):
        f, g = _trig_pair(shell_grid, 2 * seed), _trig_pair(shell_grid, 2 * seed + 1)
        lhs = inner_product(transport_apply(f), g)
        rhs = inner_product(f, transport_apply(g))
        assert abs(lhs + rhs) < 1e-8 * max(abs(lhs), abs(rhs), 1e-30)


def test_transport_inverse_formula(shell_grid):
    f = PhaseFunction.from_theta(shell_grid,
                                 lambda th, E, L: np.cos(2 * np.pi * th) * _bump(E, L))
    finv = transport_inverse(f)
    expected = -(shell_grid.T[None] / (2 * np.pi)) \
        * np.sin(2 * np.pi * shell_grid.theta)[:, None, None] \
        * _bump(shell_grid.E_nodes[None], shell_grid.L_nodes[None, :, None])
    assert np.max(np.abs(finv.values - expected)) < 1e-12 * np.max(np.abs(expected))


def test_transport_round_trips(shell_grid):
    f = _trig_pair(shell_grid, 11)
    back = transport_apply(transport_inverse(f))
    scale = np.max(np.abs(f.values))
    assert np.max(np.abs(back.values - f.values)) < 1e-8 * scale
    there = transport_inverse(transport_apply(f))
    # T^-1 T recovers f up to its theta-mean, which is zero for trig series
    assert np.max(np.abs(there.values - f.values)) < 1e-8 * scale


def test_transport_inverse_rejects_nonzero_mean(shell_grid):
    f = PhaseFunction.from_theta(shell_grid,
                                 lambda th, E, L: 1.0 + np.cos(2 * np.pi * th) + 0 * E)
    with pytest.raises(TransportImageError):
        transport_inverse(f)


def test_lift_of_zero_is_zero(shell_grid):
    k = lift_to_kernelB(shell_grid, lambda E, L: np.zeros_like(E))
    assert np.max(np.abs(k.values)) == 0.0


def test_lift_of_profile_generator_closed_form(shell_state, shell_grid):
    # the lift of Phi'(alpha) (L-L0)^l E reproduces the full indicator profile
    ss = shell_state
    scale = ss.eos.cutoff_energy / ss.eos.delta
    k = lift_to_kernelB(shell_grid,
                        lambda E, L: scale * np.abs(phi_prime(ss.eos, E, L)) * E)
    target = PhaseFunction.from_rwl(
        shell_grid,
        lambda r, w, L, E: scale * np.exp(ss.lambda0(ss.Rmax) + ss.mu0(ss.Rmax))
        * np.abs(phi_prime(ss.eos, E, L)) * E * np.exp(-ss.lambda0(r) - ss.mu0(r)))
    assert np.max(np.abs(k.values - target.values)) < 1e-9 * np.max(np.abs(target.values))


def test_check_kernelB_random_generators(shell_grid):
    rng = np.random.default_rng(5)
    E0, E1 = float(np.min(shell_grid.E_floor)), shell_grid.state.E0_cut
    L0, L1 = shell_grid.support.L_lo, shell_grid.support.L_max
    for _ in range(10):
        cE = rng.normal(size=3)
        cL = rng.normal(size=3)

        def gen(E, L):
            x = 2 * (E - E0) / (E1 - E0) - 1
            z = 2 * (L - L0) / (L1 - L0) - 1
            return (cE[0] + cE[1] * x + cE[2] * x**2) * (cL[0] + cL[1] * z + cL[2] * z**2)

        k = lift_to_kernelB(shell_grid, gen)
        assert check_kernelB(shell_grid, k) < 1e-6


def test_check_kernelB_negative_controls(shell_state, shell_grid):
    # odd functions are far from the kernel
    f = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: w * np.exp(-((E - 0.97) * 40) ** 2),
                               parity="odd")
    assert check_kernelB(shell_grid, f) > 1e-2
    # the equilibrium itself is generated by phi(E, L) but lacks the lift tail
    f0 = PhaseFunction.from_rwl(
        shell_grid,
        lambda r, w, L, E: phi(shell_state.eos, E, L) * (r >= shell_state.r0_indicator),
        parity="even")
    assert check_kernelB(shell_grid, f0) > 1e-2


def test_minimal_basis(shell_grid):
    basis = build_kernel_basis(shell_grid, 1, 1, include_profile=False)
    assert basis.size == 1
    assert basis.gram.shape == (1, 1)
    assert basis.gram[0, 0] > 0
    assert basis.n_dropped == 0


def test_basis_gram_properties(shell_basis):
    G = shell_basis.gram
    assert np.max(np.abs(G - G.T)) < 1e-10 * np.max(np.abs(G))
    assert shell_basis.n_dropped < shell_basis.size
    assert np.isfinite(shell_basis.condition)


def test_basis_element_residuals(shell_basis):
    res = shell_basis.element_residuals()
    assert max(res) < 1e-6


def test_gram_stable_under_theta_doubling(shell_state, shell_support, shell_grid):
    from evstab.phase_space import PhaseGrid

    b1 = KernelBasis(shell_grid, 4, 4)
    g2 = PhaseGrid(shell_state, shell_support, n_theta=2 * shell_grid.n_theta,
                   n_L=len(shell_grid.L_nodes), n_E=shell_grid.E_nodes.shape[1])
    b2 = KernelBasis(g2, 4, 4)
    G1, G2 = b1.gram, b2.gram
    assert np.max(np.abs(G1 - G2)) < 1e-6 * np.max(np.abs(G1))


def test_projection_identity_on_kernel(shell_grid, shell_basis):
    f = shell_basis.elements[7]
    c = project_kerB(shell_basis, f)
    pf = shell_basis.combine(c)
    diff = PhaseFunction(grid=shell_grid, values=pf.values - f.values)
    assert diff.norm() < 1e-8 * f.norm()


def test_projection_idempotent(shell_grid, shell_basis):
    f = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: np.sin(30 * E) * np.cos(L / 3) + 0.3 * w**2)
    p1 = shell_basis.combine(project_kerB(shell_basis, f))
    p2 = shell_basis.combine(project_kerB(shell_basis, p1))
    diff = PhaseFunction(grid=shell_grid, values=p2.values - p1.values)
    assert diff.norm() < 1e-8 * p1.norm()


def test_projection_annihilates_odd(shell_grid, shell_basis):
    f = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: w * np.exp(-((E - 0.97) * 50) ** 2),
                               parity="odd")
    pf = shell_basis.combine(project_kerB(shell_basis, f))
    assert pf.norm() < 1e-8 * f.norm()


def test_discrete_B_skew_symmetry(shell_grid):
    f = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: w * np.exp(-((E - 0.971) * 60) ** 2),
                               parity="odd")
    h = PhaseFunction.from_rwl(shell_grid,
                               lambda r, w, L, E: np.exp(-((E - 0.973) * 70) ** 2)
                               * np.exp(-((L - 18) / 3) ** 2),
                               parity="even")
    Bf = b_apply(f)
    Bh = b_apply(h)
    defect = inner_product(Bf, h) + inner_product(f, Bh)
    scale = max(abs(inner_product(Bf, h)), abs(inner_product(f, Bh)))
    assert abs(defect) < 1e-6 * scale


def test_poincare_margin_positive(shell_grid):
    # ||B f|| / ||f|| stays above a positive margin on odd samples (reported,
    # not asserted against any reference value)
    margins = []
    for seed in range(4):
        rng = np.random.default_rng(seed + 40)
        a, b, c = rng.normal(size=3)

        def fn(r, w, L, E):
            return w * (a + b * (E - 0.97) * 40 + c * np.cos(L / 4.0)) \
                * np.exp(-((E - 0.971) * 50) ** 2)

        f = PhaseFunction.from_rwl(shell_grid, fn, parity="odd")
        margins.append(b_apply(f).norm() / f.norm())
    assert min(margins) > 0.0


def test_lambda_identities(shell_grid):
    f_odd = PhaseFunction.from_theta(
        shell_grid, lambda th, E, L: np.sin(2 * np.pi * th) * _bump(E, L),
        parity="odd",
        dtheta_fn=lambda th, E, L: 2 * np.pi * np.cos(2 * np.pi * th) * _bump(E, L))
    res = lambda_identity_residuals(shell_grid, f_odd)
    assert res["B"]["rel"] < 1e-5
    assert res["T"]["rel"] < 1e-5

    f_even = PhaseFunction.from_theta(
        shell_grid, lambda th, E, L: np.cos(2 * np.pi * th) * _bump(E, L),
        parity="even",
        dtheta_fn=lambda th, E, L: -2 * np.pi * np.sin(2 * np.pi * th) * _bump(E, L))
    res_e = lambda_identity_residuals(shell_grid, f_even)
    # both sides vanish for even f: the defect is absolute noise far below
    # the odd-case scale
    assert res_e["B"]["defect"] < 1e-10 * res["B"]["scale"]
