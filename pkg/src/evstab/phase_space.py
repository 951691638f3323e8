"""Weighted phase-space Hilbert machinery on (theta, E, L) tensor grids.

Functions of phase space are represented by their values on a tensor grid:
a uniform periodic angle grid (trapezoid weights are spectrally accurate for
the 1-periodic smooth integrands) times a per-L Gauss-Legendre energy panel
times a Gauss-Legendre angular-momentum panel.  The inner product carries the
weight

    <f, g> = 4 pi^2 * iint T(E,L)/|phi'(E,L)| int_0^1 f g dtheta dE dL,

equivalent to the (r, w, L) form with weight exp(lambda0)/|phi'| through the
orbit-adapted change of variables.  Radial source terms (density, pressures,
momentum flux) of a phase-space function are computed by direct (w, L)
quadrature at fixed radius, which is the route independent of the equation
of state's reduced profile integrals.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import os

import numpy as np
from scipy.interpolate import CubicSpline

from . import eos as eos_mod
from .equilibria import SteadyState
from .errors import EvStabError, GridMismatchError
from .orbits import (SupportEL, orbit_radius_nodes, period, turning_points,
                     verify_single_well, _scan_wells)
from .quadrature import gauss_nodes

_DEFAULT_N_THETA = 384
_DEFAULT_N_L = 24
_DEFAULT_N_E = 32
_MOMENT_ORDER = 32   # Gauss order per direction of the (w, L) slice moments


def worker_count() -> int:
    """Worker-pool size; capped by the EV_STAB_THREADS environment variable."""
    cap = os.environ.get("EV_STAB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            pass
    return min(n, 8)


def radial_output_grid(ss: SteadyState, n: int = 400):
    """Support-covering radial nodes including the exact edges."""
    return np.concatenate([[ss.Rmin], ss.support_grid(n - 2), [ss.Rmax]])


class PhaseGrid:
    """Quadrature grid over [0,1) x Omega_0^{EL} tied to one steady state.

    Angle-dependent orbit tables (R, W at the theta nodes) are built lazily;
    the (E, L) panel with periods and weights is built eagerly and is all the
    radial reduction of the stability kernel ever needs.
    """

    def __init__(self, ss: SteadyState, support: SupportEL | None = None,
                 n_theta: int = _DEFAULT_N_THETA, n_L: int = _DEFAULT_N_L,
                 n_E: int = _DEFAULT_N_E):
        if n_theta % 2:
            raise EvStabError("n_theta must be even so that theta = 1/2 is a node")
        self.state = ss
        self.support = support if support is not None else verify_single_well(ss)
        self.n_theta = int(n_theta)
        self.theta = np.arange(n_theta) / n_theta

        L_nodes, L_w = gauss_nodes(n_L, self.support.L_lo, self.support.L_max)
        self.L_nodes = L_nodes
        self.L_w = L_w
        _, _, r_L, E_min = _scan_wells(ss, L_nodes)
        self.r_L = r_L
        self.E_floor = E_min
        E_nodes = np.empty((n_L, n_E))
        E_w = np.empty((n_L, n_E))
        for i in range(n_L):
            E_nodes[i], E_w[i] = gauss_nodes(n_E, E_min[i], ss.E0_cut)
        self.E_nodes = E_nodes
        self.E_w = E_w

        L_b = np.broadcast_to(L_nodes[:, None], E_nodes.shape)
        rm = np.empty_like(E_nodes)
        rp = np.empty_like(E_nodes)
        T = np.empty_like(E_nodes)

        def panel(i):
            rl_row = np.full(n_E, r_L[i])
            rm[i], rp[i] = turning_points(ss, E_nodes[i], L_b[i], r_L=rl_row)
            T[i] = period(ss, E_nodes[i], L_b[i], r_L=rl_row)

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            list(pool.map(panel, range(n_L)))
        self.r_minus, self.r_plus, self.T = rm, rp, T
        self.phi_prime_abs = np.abs(eos_mod.phi_prime(ss.eos, E_nodes, L_b))
        if np.any(self.phi_prime_abs <= 0):
            raise EvStabError("phi' vanishes on an interior (E, L) node")
        # (E, L)-panel weight of the Hilbert measure (the theta factor is 1/n)
        self.w_EL = 4.0 * np.pi**2 * (L_w[:, None] * E_w) * T / self.phi_prime_abs
        self._R = None
        self._W = None

    # -- lazy orbit tables -------------------------------------------------

    def _build_angle_tables(self):
        n_half = self.n_theta // 2 + 1
        theta_half = np.arange(n_half) / self.n_theta
        nL, nE = self.E_nodes.shape
        R_half = np.empty((n_half, nL, nE))

        def fill(i):
            Rh, _ = orbit_radius_nodes(
                self.state, self.E_nodes[i], np.full(nE, self.L_nodes[i]),
                theta_half, turning=(self.r_minus[i], self.r_plus[i]))
            R_half[:, i, :] = Rh.T

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            list(pool.map(fill, range(nL)))
        R = np.empty((self.n_theta, nL, nE))
        R[:n_half] = R_half
        R[n_half:] = R_half[1:-1][::-1]          # R(1 - theta) = R(theta)
        W2 = (self.E_nodes * np.exp(-self.state.mu0(R))) ** 2 - 1.0 \
            - self.L_nodes[:, None] / R**2
        W = np.sqrt(np.maximum(W2, 0.0))
        W[n_half:] *= -1.0                        # odd branch
        W[0] = 0.0
        W[self.n_theta // 2] = 0.0
        self._R, self._W = R, W

    @property
    def R(self):
        if self._R is None:
            self._build_angle_tables()
        return self._R

    @property
    def W(self):
        if self._W is None:
            self._build_angle_tables()
        return self._W

    @property
    def E_grid(self):
        return np.broadcast_to(self.E_nodes, (self.n_theta,) + self.E_nodes.shape)

    @property
    def L_grid(self):
        return np.broadcast_to(self.L_nodes[None, :, None],
                               (self.n_theta,) + self.E_nodes.shape)

    def node_weights(self):
        """Full quadrature weight per (theta, L, E) node of the H-measure."""
        return np.broadcast_to(self.w_EL / self.n_theta,
                               (self.n_theta,) + self.w_EL.shape)

    def mirror(self, values):
        """values evaluated at theta -> 1 - theta (index reflection)."""
        idx = (-np.arange(self.n_theta)) % self.n_theta
        return values[idx]


@dataclass
class PhaseFunction:
    """Values of a phase-space function on a PhaseGrid node set.

    ``rwl_fn(r, w, L, E)`` is the off-grid evaluator used by the radial
    moment quadratures; functions given in angle form may carry
    ``theta_fn(theta, E, L)`` instead (plus optionally its analytic
    theta-derivative for transport checks).
    """

    grid: PhaseGrid
    values: np.ndarray
    parity: str | None = None
    rwl_fn: object = None
    theta_fn: object = None
    dtheta_fn: object = None

    @classmethod
    def from_rwl(cls, grid, fn, parity=None):
        vals = fn(grid.R, grid.W, grid.L_grid, grid.E_grid)
        return cls(grid=grid, values=np.asarray(vals, dtype=float), parity=parity,
                   rwl_fn=fn)

    @classmethod
    def from_theta(cls, grid, theta_fn, parity=None, dtheta_fn=None):
        th = grid.theta[:, None, None]
        vals = theta_fn(th, grid.E_nodes[None], grid.L_nodes[None, :, None])
        vals = np.broadcast_to(vals, (grid.n_theta,) + grid.E_nodes.shape).copy()
        f = cls(grid=grid, values=vals, parity=parity, theta_fn=theta_fn,
                dtheta_fn=dtheta_fn)
        f.rwl_fn = _theta_form_rwl(grid.state, theta_fn, grid.support)
        return f

    def even_part(self):
        return PhaseFunction(grid=self.grid,
                             values=0.5 * (self.values + self.grid.mirror(self.values)),
                             parity="even")

    def odd_part(self):
        return PhaseFunction(grid=self.grid,
                             values=0.5 * (self.values - self.grid.mirror(self.values)),
                             parity="odd")

    def norm(self):
        return float(np.sqrt(max(inner_product(self, self), 0.0)))


def _signed_angle(ss, support, r, w, L, E):
    from .orbits import angle_and_period

    r, w, L, E = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                       for a in (r, w, L, E)))
    r_L = None
    if support is not None:
        r_L = np.interp(np.clip(L.ravel(), support.L_nodes[0], support.L_nodes[-1]),
                        support.L_nodes, support.r_L)
    th, T = angle_and_period(ss, r.ravel(), E.ravel(), L.ravel(), r_L=r_L, order=192)
    th = th.reshape(r.shape)
    return np.where(w < 0, 1.0 - th, th), T.reshape(r.shape)


def _theta_form_rwl(ss, theta_fn, support=None):
    """(r, w, L) evaluator of a function given in angle form."""

    def fn(r, w, L, E):
        th, _ = _signed_angle(ss, support, r, w, L, E)
        return theta_fn(th, np.asarray(E, dtype=float), np.asarray(L, dtype=float))

    return fn


def theta_transport_rwl(ss, dtheta_fn, support=None):
    """(r, w, L) evaluator of -(1/T) d_theta f for an angle-form function."""

    def fn(r, w, L, E):
        th, T = _signed_angle(ss, support, r, w, L, E)
        return -dtheta_fn(th, np.asarray(E, dtype=float), np.asarray(L, dtype=float)) / T

    return fn


def inner_product(f: PhaseFunction, g: PhaseFunction) -> float:
    """The weighted scalar product <f, g>_H by tensor quadrature."""
    if f.grid is not g.grid:
        raise GridMismatchError("phase functions live on different grids")
    return float(np.sum(f.grid.node_weights() * f.values * g.values))


@dataclass
class SourceTerms:
    """Radial moment tables of a phase-space function."""

    r: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    j: np.ndarray
    q: np.ndarray


class SliceQuadrature:
    """Gauss nodes of the (w, L) slice integrals at a batch of radii.

    The admissible slice at radius r is w^2 + L/r^2 < e^{2y(r)} - 1 with
    L > L0; nodes are tensor Gauss in w (nonnegative half, both momentum
    signs evaluated) times Gauss in L up to the w-dependent cap.  Node
    construction is the expensive part, so one instance is reused for the
    moments of many functions.
    """

    _KERNELS = ("rho", "p", "j", "q", "u")

    def __init__(self, ss: SteadyState, r, order: int = _MOMENT_ORDER,
                 support: SupportEL | None = None):
        self.state = ss
        self.r = np.atleast_1d(np.asarray(r, dtype=float))
        r = self.r
        y = ss.y(r)
        emu = np.exp(ss.mu0(r))
        cap = np.expm1(2.0 * y) - ss.eos.L0 / r**2
        self.active = (cap > 0) & (ss.matter_indicator(r) > 0)
        w_hi = np.sqrt(np.maximum(np.where(self.active, cap, 0.0), 0.0))
        wn, ww = gauss_nodes(order, np.zeros_like(w_hi), w_hi)            # (nr, nw)
        L_hi = np.maximum(r[:, None] ** 2 * (np.expm1(2.0 * y)[:, None] - wn**2),
                          ss.eos.L0)
        lo = np.full_like(L_hi, ss.eos.L0)
        if support is None:
            Ln, Lw = gauss_nodes(order, lo, L_hi)                         # (nr, nw, nL)
        else:
            # Angle-composed integrands have a corner layer at the L where
            # the radius equals the potential-minimum radius (the w -> 0
            # limit of the angle jumps between the orbit's two branches
            # there); splitting the L-panel at that corner restores smooth
            # per-panel integrands.
            L_star = np.interp(r, support.r_L, support.L_nodes,
                               left=support.L_nodes[0], right=support.L_nodes[-1])
            frac = (np.broadcast_to(L_star[:, None], L_hi.shape) - lo) \
                / np.maximum(L_hi - lo, 1e-300)
            split = lo + (L_hi - lo) * np.clip(frac, 1e-9, 1.0 - 1e-9)
            n1 = order // 2
            Ln1, Lw1 = gauss_nodes(n1, lo, split)
            Ln2, Lw2 = gauss_nodes(order - n1, split, L_hi)
            Ln = np.concatenate([Ln1, Ln2], axis=-1)
            Lw = np.concatenate([Lw1, Lw2], axis=-1)
        self.w = wn[..., None]
        self.L = Ln
        self.eps = np.sqrt(1.0 + self.w**2 + Ln / r[:, None, None] ** 2)
        self.E = emu[:, None, None] * self.eps
        self.wt = ww[..., None] * Lw
        self._r3 = np.broadcast_to(r[:, None, None], Ln.shape)
        pref = np.where(self.active, np.pi / r**2, 0.0)
        self._kern = {
            "rho": pref[:, None, None] * self.wt * self.eps,
            "p": pref[:, None, None] * self.wt * self.w**2 / self.eps,
            "j": pref[:, None, None] * self.wt * self.w,
            "q": pref[:, None, None] * self.wt * 0.5 * self.L
                 / (self._r3**2 * self.eps),
            "u": pref[:, None, None] * self.wt * self.E,
        }

    def moments(self, fn, which=("rho", "p", "j", "q"), even_in_w=False):
        """Moment tables of fn; fn may return a trailing batch axis.

        ``even_in_w`` skips the negative-momentum evaluation for functions
        known to be even in w (their odd moments vanish identically).
        """
        f_plus = np.asarray(fn(self._r3, self.w, self.L, self.E), dtype=float)
        if even_in_w:
            even = 2.0 * f_plus
            odd = np.zeros_like(f_plus)
        else:
            f_minus = np.asarray(fn(self._r3, -self.w, self.L, self.E), dtype=float)
            even = f_plus + f_minus
            odd = f_plus - f_minus
        out = {}
        for name in which:
            if name not in self._KERNELS:
                raise EvStabError(f"unknown moment {name!r}")
            field = odd if name == "j" else even
            out[name] = np.einsum("rwl,rwl...->r...", self._kern[name], field)
        return out


def slice_moments(ss: SteadyState, fn, r, which=("rho", "p", "j", "q"),
                  order: int = _MOMENT_ORDER):
    """Radial (w, L)-slice moments of ``fn`` at the radii ``r``.

    ``which`` selects among 'rho', 'p', 'j', 'q', and 'u' (the E-weighted
    moment (pi/r^2) iint E f dw dL).
    """
    return SliceQuadrature(ss, r, order).moments(fn, which)


def source_terms(f: PhaseFunction, r=None, order: int = _MOMENT_ORDER) -> SourceTerms:
    """Radial tables rho_f, p_f, j_f, q_f of a phase-space function.

    Requires an off-grid evaluator on ``f``; every constructor in this
    toolkit provides one.
    """
    ss = f.grid.state
    if f.rwl_fn is None:
        raise EvStabError("source terms need an off-grid evaluator (rwl_fn)")
    if r is None:
        r = radial_output_grid(ss)
    m = slice_moments(ss, f.rwl_fn, r, which=("rho", "p", "j", "q"), order=order)
    return SourceTerms(r=np.asarray(r, dtype=float), rho=m["rho"], p=m["p"],
                       j=m["j"], q=m["q"])


def lambda_field(f: PhaseFunction, r=None, sources: SourceTerms | None = None):
    """Metric perturbation lambda_f(r) induced by rho_f, vanishing at Rmin."""
    ss = f.grid.state
    if sources is None:
        sources = source_terms(f, r=r)
    r = sources.r
    anti = CubicSpline(r, sources.rho * r**2).antiderivative()
    lam = 4.0 * np.pi * np.exp(2.0 * ss.lambda0(r)) / r * (anti(r) - anti(r[0]))
    return r, lam


def hlr_identity_residual(ss: SteadyState, n: int = 400) -> float:
    """Sup-norm defect of the w^2-moment identity of |phi'|.

    The identity equates (pi/r^2) iint w^2 |phi'| dw dL with
    e^{-2 lambda0 - mu0} (lambda0' + mu0')/(4 pi r); it is exact for the
    ansatz, so the residual measures the quality of the phi'-moment
    quadratures and gates the kernel stage.
    """
    if not ss.has_matter:
        return 0.0
    r = ss.support_grid(n)
    y = ss.y(r)
    lhs = ss.matter_indicator(r) * eos_mod.moment_phiprime_w2(ss.eos, r, y)
    rhs = np.exp(-2.0 * ss.lambda0(r) - ss.mu0(r)) * ss.grav_prime_sum(r) / (4.0 * np.pi * r)
    scale = np.max(np.abs(rhs))
    return float(np.max(np.abs(lhs - rhs)) / scale)


def s4_bound(ss: SteadyState, n: int = 400) -> dict:
    """sup_r of int |phi'| dv, with a refinement probe.

    Finiteness of this bound is condition (S4); the pipeline reports the
    value and warns when it still grows under grid refinement.
    """
    if not ss.has_matter:
        return {"sup_phi_prime_integral": 0.0, "refinement_change": 0.0,
                "bounded": True}

    def bound(k):
        r = ss.support_grid(k)
        return float(np.max(ss.matter_indicator(r)
                            * eos_mod.moment_phiprime_abs(ss.eos, r, ss.y(r))))

    coarse, fine = bound(n), bound(2 * n)
    growth = abs(fine - coarse) / max(fine, 1e-300)
    return {"sup_phi_prime_integral": fine, "refinement_change": growth,
            "bounded": growth < 1e-3}
