"""Discrete transport operator, the kernel-of-B lift, and the projection basis.

In angle variables the transport operator acts as -(1/T) d_theta, so its
discrete form is spectral differentiation on the uniform periodic theta grid
(exactly skew-symmetric against the trapezoid weights).  The kernel of the
full perturbation operator B consists of lifted functions

    k = g(E, L) + 4 pi |phi'| E e^(-lambda0-mu0) int_r^Rmax e^(3 lambda0+mu0) p_g s ds

generated by arbitrary smooth g(E, L); a finite tensor-Legendre generator
family (optionally augmented with the closed-form generator of the full
indicator profile) spans the discrete kernel, and the orthogonal projection
onto it is materialized through the pivoted-Cholesky-factorized Gram matrix.
"""

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.interpolate import CubicSpline
from scipy.linalg import lapack

from . import eos as eos_mod
from .errors import EvStabError, NumericalError, TransportImageError
from .phase_space import (PhaseFunction, PhaseGrid, SliceQuadrature,
                          radial_output_grid, source_terms, theta_transport_rwl)

_FLIP = {"even": "odd", "odd": "even", None: None}


# ---------------------------------------------------------------------------
# spectral theta-calculus


def _theta_derivative(values):
    n = values.shape[0]
    spec = np.fft.rfft(values, axis=0)
    k = np.arange(spec.shape[0])
    k[-1] = 0 if n % 2 == 0 else k[-1]   # drop the unpaired Nyquist mode
    spec *= 2j * np.pi * k.reshape(-1, *([1] * (values.ndim - 1)))
    return np.fft.irfft(spec, n=n, axis=0)


def _theta_antiderivative(values):
    """Zero-mean periodic antiderivative along theta."""
    n = values.shape[0]
    spec = np.fft.rfft(values, axis=0)
    k = np.arange(spec.shape[0], dtype=float)
    shape = (-1,) + (1,) * (values.ndim - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        spec = np.where(k.reshape(shape) > 0,
                        spec / (2j * np.pi * np.maximum(k, 1.0)).reshape(shape), 0.0)
    if n % 2 == 0:
        spec[-1] = 0.0
    return np.fft.irfft(spec, n=n, axis=0)


def transport_apply(f: PhaseFunction) -> PhaseFunction:
    """(T f)(theta, E, L) = -(1/T) d_theta f; reverses w-parity."""
    grid = f.grid
    vals = -_theta_derivative(f.values) / grid.T[None]
    out = PhaseFunction(grid=grid, values=vals, parity=_FLIP.get(f.parity))
    if f.dtheta_fn is not None:
        out.theta_fn = None
        out.rwl_fn = theta_transport_rwl(grid.state, f.dtheta_fn, grid.support)
    return out


def transport_inverse(f: PhaseFunction, mean_tol: float = 1e-10) -> PhaseFunction:
    """Explicit inverse of the transport operator on its image.

    Requires zero theta-mean per (E, L); otherwise f is not in the image and
    a :class:`TransportImageError` is raised.
    """
    grid = f.grid
    mean = np.mean(f.values, axis=0)
    scale = np.max(np.abs(f.values)) or 1.0
    if np.max(np.abs(mean)) > mean_tol * scale:
        raise TransportImageError(
            f"theta-mean {np.max(np.abs(mean)):.3e} exceeds {mean_tol:.1e} x scale: "
            "function is not in the image of the transport operator")
    vals = -grid.T[None] * _theta_antiderivative(f.values - mean[None])
    return PhaseFunction(grid=grid, values=vals, parity=_FLIP.get(f.parity))


def b_apply(f: PhaseFunction, sources=None) -> PhaseFunction:
    """B f = T f - 4 pi r |phi'| e^(2 mu0 + lambda0) (w p_f - (w^2/eps) j_f)."""
    grid = f.grid
    ss = grid.state
    out = transport_apply(f)
    if sources is None:
        sources = source_terms(f)
    p_sp = CubicSpline(sources.r, sources.p)
    j_sp = CubicSpline(sources.r, sources.j)

    def coupling(r, w, L, E):
        eps = E * np.exp(-ss.mu0(r))
        pref = 4.0 * np.pi * r * np.abs(eos_mod.phi_prime(ss.eos, E, L)) \
            * np.exp(2.0 * ss.mu0(r) + ss.lambda0(r))
        return pref * (w * p_sp(r) - w**2 / eps * j_sp(r))

    out.values = out.values - coupling(grid.R, grid.W, grid.L_grid, grid.E_grid)
    if out.rwl_fn is not None:
        t_rwl = out.rwl_fn
        out.rwl_fn = lambda r, w, L, E: t_rwl(r, w, L, E) - coupling(r, w, L, E)
    return out


# ---------------------------------------------------------------------------
# the kernel of B


def lift_to_kernelB(grid: PhaseGrid, g_fn, r_table=None) -> PhaseFunction:
    """Kernel element generated by g(E, L); even in w.

    ``g_fn`` must accept broadcast arrays (E, L).
    """
    elems, _ = _lift_batch(grid, lambda E, L: np.asarray(g_fn(E, L))[..., None],
                           r_table=r_table)
    return elems[0]


def _lift_batch(grid: PhaseGrid, gens_fn, r_table=None, materialize=True):
    """Lift a batched generator family; returns elements and radial tables.

    ``gens_fn(E, L)`` returns values with a trailing generator axis.  The
    radial tables of p_g, the E-moment u_g, and the lift integral
    G(r) = 4 pi int_r^Rmax e^(3 lambda0 + mu0) p_g s ds are shared with the
    radial reduction of the stability kernel.  Grid values of all elements
    are produced from one shared generator evaluation.
    """
    ss = grid.state
    if r_table is None:
        r_table = radial_output_grid(ss, 800)
    quad = SliceQuadrature(ss, r_table)
    moms = quad.moments(lambda r, w, L, E: gens_fn(E, L), which=("p", "u"),
                        even_in_w=True)
    p_tab = np.atleast_2d(moms["p"].T)       # (nb, nr)
    u_tab = np.atleast_2d(moms["u"].T)
    lam, mu = ss.lambda0(r_table), ss.mu0(r_table)
    w_int = np.exp(3.0 * lam + mu) * r_table
    nb = p_tab.shape[0]
    G_fns = []
    for i in range(nb):
        anti = CubicSpline(r_table, w_int * p_tab[i]).antiderivative()
        total = float(anti(r_table[-1]))

        def G_of_r(r, anti=anti, total=total):
            rc = np.clip(np.asarray(r, dtype=float), r_table[0], r_table[-1])
            return 4.0 * np.pi * (total - anti(rc))

        G_fns.append(G_of_r)

    def tail_prefactor(r, w, L, E):
        return np.abs(eos_mod.phi_prime(ss.eos, E, L)) * E \
            * np.exp(-ss.lambda0(r) - ss.mu0(r))

    elements = []
    if materialize:
        gen_vals = gens_fn(grid.E_grid, grid.L_grid)          # (nodes..., nb)
        pref = tail_prefactor(grid.R, grid.W, grid.L_grid, grid.E_grid)
        for i in range(nb):
            vals = gen_vals[..., i] + pref * G_fns[i](grid.R)

            def k_rwl(r, w, L, E, i=i, G_of_r=G_fns[i]):
                return gens_fn(E, L)[..., i] + tail_prefactor(r, w, L, E) * G_of_r(r)

            elements.append(PhaseFunction(grid=grid, values=vals, parity="even",
                                          rwl_fn=k_rwl))
    return elements, {"r": r_table, "p": p_tab, "u": u_tab, "G": G_fns}


def check_kernelB(grid: PhaseGrid, k: PhaseFunction, sources=None) -> float:
    """Discrete defect of the kernel equation of B for an even function.

    Zero (to grid tolerance) iff (1/T) d_theta k equals
    -4 pi R |phi'| e^((2 mu0 + lambda0)(R)) W p_k(R) on the grid.
    """
    ss = grid.state
    if sources is None:
        sources = source_terms(k)
    p_sp = CubicSpline(sources.r, sources.p)
    dk = _theta_derivative(k.values) / grid.T[None]
    coupling = 4.0 * np.pi * grid.R * np.abs(
        eos_mod.phi_prime(ss.eos, grid.E_grid, grid.L_grid)) \
        * np.exp(2.0 * ss.mu0(grid.R) + ss.lambda0(grid.R)) * grid.W * p_sp(grid.R)
    resid = dk + coupling
    scale = max(np.max(np.abs(dk)), np.max(np.abs(coupling)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(resid)) / scale)


# ---------------------------------------------------------------------------
# generator basis and the discrete projection


class KernelBasis:
    """Tensor-Legendre generator family lifted into the kernel of B.

    Degrees ``(n_E, n_L)`` count polynomials per direction; when
    ``include_profile`` is set, the closed-form generator of the full
    indicator profile, Phi'(1 - E/E0) (L - L0)_+^l E, joins the family (it
    makes the kernel's boundary behavior exactly representable).  Grid-based
    artifacts (lifted elements, Gram matrix, factorization) are built on
    first use; the radial tables shared with the reduced stability kernel
    are kept separately.
    """

    def __init__(self, grid: PhaseGrid, n_E: int = 8, n_L: int = 8,
                 include_profile: bool = True, r_table=None):
        self.grid = grid
        self.n_E = int(n_E)
        self.n_L = int(n_L)
        self.include_profile = bool(include_profile)
        sup = grid.support
        self.E_box = (float(np.min(grid.E_floor)), float(grid.state.E0_cut))
        self.L_box = (float(sup.L_lo), float(sup.L_max))
        self._r_table = r_table
        self._grid_data = None
        self._tables = None

    @property
    def size(self) -> int:
        return self.n_E * self.n_L + (1 if self.include_profile else 0)

    def refined(self, factor: int = 2) -> "KernelBasis":
        return KernelBasis(self.grid, factor * self.n_E, factor * self.n_L,
                           self.include_profile, r_table=self._r_table)

    def generators(self, E, L):
        """All generator values, trailing axis of length ``size``."""
        E = np.asarray(E, dtype=float)
        L = np.asarray(L, dtype=float)
        E, L = np.broadcast_arrays(E, L)
        x = 2.0 * (E - self.E_box[0]) / (self.E_box[1] - self.E_box[0]) - 1.0
        z = 2.0 * (L - self.L_box[0]) / (self.L_box[1] - self.L_box[0]) - 1.0
        V = npleg.legvander2d(x, z, [self.n_E - 1, self.n_L - 1])
        if self.include_profile:
            ss = self.grid.state
            scale = ss.eos.cutoff_energy / ss.eos.delta
            prof = scale * np.abs(eos_mod.phi_prime(ss.eos, E, L)) * E
            V = np.concatenate([V, prof[..., None]], axis=-1)
        return V

    # -- radial tables shared with the reduced kernel ----------------------

    def tables(self):
        if self._tables is None:
            _, tabs = _lift_batch(self.grid, self.generators, r_table=self._r_table)
            self._tables = tabs
        return self._tables

    # -- grid artifacts -----------------------------------------------------

    def grid_data(self):
        if self._grid_data is None:
            elements, tabs = _lift_batch(self.grid, self.generators,
                                         r_table=self._r_table)
            self._tables = tabs
            wts = self.grid.node_weights().ravel()
            V = np.stack([e.values.ravel() for e in elements])
            gram = (V * wts) @ V.T
            gram = 0.5 * (gram + gram.T)
            chol = _pivoted_cholesky(gram)
            self._grid_data = {"elements": elements, "V": V, "wts": wts,
                               "gram": gram, "chol": chol}
        return self._grid_data

    @property
    def elements(self):
        return self.grid_data()["elements"]

    @property
    def gram(self):
        return self.grid_data()["gram"]

    @property
    def n_dropped(self) -> int:
        return self.size - self.grid_data()["chol"].rank

    @property
    def condition(self) -> float:
        return self.grid_data()["chol"].condition

    def element_residuals(self):
        """check_kernelB defect of every lifted basis element.

        Reuses the cached radial pressure tables of the generators; the
        pressure of a lifted element follows from the generator pressure and
        the moment identity behind the lift.
        """
        tabs = self.tables()
        r = tabs["r"]
        grid = self.grid
        ss = grid.state
        m2 = ss.matter_indicator(r) * eos_mod.moment_phiprime_w2(ss.eos, r, ss.y(r))
        G_all = np.stack([G(r) for G in tabs["G"]])
        p_all = tabs["p"] + np.exp(-ss.lambda0(r)) * m2 * G_all
        pk_at_R = CubicSpline(r, p_all.T)(grid.R)          # (..., nb)
        pref = 4.0 * np.pi * grid.R * np.abs(
            eos_mod.phi_prime(ss.eos, grid.E_grid, grid.L_grid)) \
            * np.exp(2.0 * ss.mu0(grid.R) + ss.lambda0(grid.R)) * grid.W
        out = []
        for i, e in enumerate(self.elements):
            dk = _theta_derivative(e.values) / grid.T[None]
            coupling = pref * pk_at_R[..., i]
            scale = max(np.max(np.abs(dk)), np.max(np.abs(coupling)))
            out.append(float(np.max(np.abs(dk + coupling)) / scale) if scale else 0.0)
        return out

    def combine(self, c) -> PhaseFunction:
        data = self.grid_data()
        vals = (np.asarray(c, dtype=float) @ data["V"]).reshape(
            self.grid.n_theta, *self.grid.E_nodes.shape)
        out = PhaseFunction(grid=self.grid, values=vals, parity="even")
        fns = [e.rwl_fn for e in data["elements"]]
        out.rwl_fn = lambda r, w, L, E: sum(
            ci * fn(r, w, L, E) for ci, fn in zip(c, fns) if ci != 0.0)
        return out


class _PivotedCholesky:
    """Rank-revealing Cholesky P^T A P = L L^T with dropped-direction solves."""

    def __init__(self, factor, piv, rank):
        self.factor = factor
        self.piv = piv
        self.rank = rank
        d = np.diag(factor)[:rank]
        self.condition = float((d[0] / d[-1]) ** 2) if rank else np.inf

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        Bp = np.atleast_2d(b.T).T[self.piv]
        R = self.rank
        L = self.factor[:R, :R]
        from scipy.linalg import solve_triangular

        z = solve_triangular(L, Bp[:R], lower=True)
        y = solve_triangular(L.T, z, lower=False)
        xp = np.zeros_like(Bp)
        xp[:R] = y
        x = np.empty_like(xp)
        x[self.piv] = xp
        return x[:, 0] if single else x


def _pivoted_cholesky(gram, drop_rel: float = 1e-12) -> _PivotedCholesky:
    n = gram.shape[0]
    tol = drop_rel * np.trace(gram) / n
    c, piv, rank, info = lapack.dpstrf(gram, tol=tol, lower=1)
    if info < 0:
        raise NumericalError(f"pivoted Cholesky failed with info = {info}")
    if rank == 0:
        raise NumericalError("Gram matrix is numerically zero: degenerate basis; "
                             "reduce the generator degrees")
    c = np.tril(c)
    return _PivotedCholesky(c, piv - 1, rank)


def build_kernel_basis(grid: PhaseGrid, n_E: int = 8, n_L: int = 8,
                       include_profile: bool = True) -> KernelBasis:
    """Construct and factorize the discrete kernel basis."""
    basis = KernelBasis(grid, n_E, n_L, include_profile)
    basis.grid_data()
    return basis


def project_kerB(basis: KernelBasis, f: PhaseFunction):
    """Coefficients of the orthogonal projection of f onto the kernel basis."""
    data = basis.grid_data()
    b = data["V"] @ (data["wts"] * f.values.ravel())
    return data["chol"].solve(b)


# ---------------------------------------------------------------------------
# residual validators of the perturbed-metric identities


def lambda_identity_residuals(grid: PhaseGrid, f: PhaseFunction,
                              n_r: int = 200, order: int = 24) -> dict:
    """Numerical defect of the two lambda-source identities.

    Checks lambda_{B f} = -4 pi r e^(lambda0 + mu0) j_f and
    lambda_{e^(mu0+lambda0) T f} = -4 pi r e^(2 mu0 + 2 lambda0) j_f for a
    smooth angle-form test function with analytic theta-derivative; each
    entry reports the absolute sup defect, the scale of the compared
    quantities, and their ratio.  All moments share one slice-quadrature
    node set, on which the angle map is evaluated once.
    """
    from .phase_space import _signed_angle, radial_output_grid
    from scipy.interpolate import CubicSpline as _CS

    if f.theta_fn is None or f.dtheta_fn is None:
        raise EvStabError("lambda identity checks need an angle-form test function "
                          "with an analytic theta-derivative")
    ss = grid.state
    r = radial_output_grid(ss, n_r)
    quad = SliceQuadrature(ss, r, order, support=grid.support)
    th_pos, T = _signed_angle(ss, grid.support, quad._r3, quad.w, quad.L, quad.E)

    def both_signs(theta_fn):
        return (theta_fn(th_pos, quad.E, quad.L),
                theta_fn(1.0 - th_pos, quad.E, quad.L))

    def moments(v_plus, v_minus, which):
        out = {}
        for name in which:
            field = v_plus - v_minus if name == "j" else v_plus + v_minus
            out[name] = np.einsum("rwl,rwl->r", quad._kern[name], field)
        return out

    f_p, f_m = both_signs(f.theta_fn)
    st = moments(f_p, f_m, ("p", "j"))
    tf_p = -f.dtheta_fn(th_pos, quad.E, quad.L) / T
    tf_m = -f.dtheta_fn(1.0 - th_pos, quad.E, quad.L) / T

    p_sp = _CS(r, st["p"])
    j_sp = _CS(r, st["j"])
    phip = np.abs(eos_mod.phi_prime(ss.eos, quad.E, quad.L))
    pref = 4.0 * np.pi * quad._r3 * phip \
        * np.exp(2.0 * ss.mu0(quad._r3) + ss.lambda0(quad._r3))
    eps = quad.eps

    def coupling(w_signed):
        return pref * (w_signed * p_sp(quad._r3)
                       - w_signed**2 / eps * j_sp(quad._r3))

    bf_p = tf_p - coupling(quad.w)
    bf_m = tf_m - coupling(-quad.w)
    rho_bf = moments(bf_p, bf_m, ("rho",))["rho"]
    lam_Bf = _cumulative_lambda(ss, r, rho_bf)
    rhs1 = -4.0 * np.pi * r * np.exp(ss.lambda0(r) + ss.mu0(r)) * st["j"]
    out = {"B": _residual_entry(lam_Bf, rhs1)}

    fac = np.exp(ss.mu0(quad._r3) + ss.lambda0(quad._r3))
    rho_g2 = moments(fac * tf_p, fac * tf_m, ("rho",))["rho"]
    lam_g2 = _cumulative_lambda(ss, r, rho_g2)
    rhs2 = -4.0 * np.pi * r * np.exp(2.0 * (ss.lambda0(r) + ss.mu0(r))) * st["j"]
    out["T"] = _residual_entry(lam_g2, rhs2)
    return out


def _cumulative_lambda(ss, r, rho):
    anti = CubicSpline(r, rho * r**2).antiderivative()
    return 4.0 * np.pi * np.exp(2.0 * ss.lambda0(r)) / r * (anti(r) - anti(r[0]))


def _residual_entry(lhs, rhs):
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
    defect = float(np.max(np.abs(lhs - rhs)))
    return {"defect": defect, "scale": float(scale),
            "rel": defect / scale if scale > 0 else 0.0}
