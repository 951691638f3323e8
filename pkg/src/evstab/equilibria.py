"""Construction of static solutions, with or without a central black hole.

Both builders integrate the reduced equation for ``y = ln(E0) - mu0``,

    y'(r) = - [ (M + m(r))/r^2 + 4 pi r p(r) ] / [ 1 - 2 (M + m(r)) / r ],

with ``rho = G(r, y)`` and ``p = H(r, y)`` supplied by :mod:`evstab.eos`
(times the radial activation indicator in the shell case), and extract the
cut-off energy by matching to the exact vacuum solution at the first vacuum
radius instead of integrating to large radii.

Geometric units G = c = 1 throughout.
"""

from dataclasses import dataclass, field
import io
import json
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator, CubicSpline
from scipy.optimize import brentq

from . import eos as eos_mod
from .eos import EquationOfState, alpha_max
from .errors import ConfigurationError, EvStabError, NumericalError

STATE_FORMAT_VERSION = 1

_HORIZON_MARGIN = 1e-12  # abort integration when 1 - 2(M+m)/r falls below


# ---------------------------------------------------------------------------
# closed forms for the pure Schwarzschild effective potential


def schwarzschild_potential(M, L, r):
    """Psi^0_L(r) = sqrt(1 - 2M/r) * sqrt(1 + L/r^2) for r > 2M."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(1.0 - 2.0 * M / r) * np.sqrt(1.0 + L / r**2)


def schwarzschild_critical_radii(M, L):
    """Radii of the strict local maximum and minimum of Psi^0_L.

    Returns ``(s_L, r_L)`` with ``2M < s_L < r_L``, the two roots of
    ``M r^2 - L r + 3 M L = 0``.  Requires ``L > 12 M^2``.
    """
    if L <= 12.0 * M**2:
        raise ConfigurationError(
            f"L = {L} <= 12 M^2 = {12 * M**2}: the effective potential has no critical points"
        )
    disc = math.sqrt(L * L - 12.0 * M * M * L)
    r_L = (L + disc) / (2.0 * M)
    s_L = 3.0 * L / r_L  # Vieta: s_L * r_L = 3 L
    return s_L, r_L


def schwarzschild_level_radii(M, L, E):
    """The three radii where Psi^0_L equals E, ordered r0 < r_minus < r_plus.

    Requires ``L > 12 M^2`` and ``E`` strictly between the local minimum
    value ``Psi(r_L)`` and ``min(1, Psi(s_L))``.
    """
    s_L, r_L = schwarzschild_critical_radii(M, L)
    psi = lambda r: schwarzschild_potential(M, L, r) - E
    psi_min = schwarzschild_potential(M, L, r_L)
    psi_max = min(1.0, schwarzschild_potential(M, L, s_L))
    if not (psi_min < E < psi_max):
        raise ConfigurationError(
            f"E = {E} outside the admissible band ]{psi_min:.12g}, {psi_max:.12g}["
        )
    r0 = brentq(psi, 2.0 * M * (1.0 + 1e-14), s_L, xtol=1e-15, rtol=1e-15)
    r_minus = brentq(psi, s_L, r_L, xtol=1e-15, rtol=1e-15)
    hi = 2.0 * r_L
    while psi(hi) <= 0.0:
        hi *= 2.0
    r_plus = brentq(psi, r_L, hi, xtol=1e-15, rtol=1e-15)
    return r0, r_minus, r_plus


@dataclass(frozen=True)
class ShellParameters:
    """Admissible parameter choice for a matter shell around a black hole.

    ``r0`` (the activation radius) is fixed to the potential-maximum radius
    s_{L0}; the resulting static solution does not depend on ``r0``/``eta0``
    as long as ``r0 + eta0 < r_minus(E0, L0)``, which is checked here.
    """

    M: float
    L0: float
    E_intermediate: float
    eta0: float | None = None

    # derived radii, filled in __post_init__
    r0: float = field(init=False)
    s_L0: float = field(init=False)
    r_L0: float = field(init=False)
    r0_level: float = field(init=False)
    R_min0: float = field(init=False)
    R_max0: float = field(init=False)

    def __post_init__(self):
        problems = []
        if self.M <= 0:
            problems.append(f"M = {self.M} must be positive")
        elif self.L0 <= 12.0 * self.M**2:
            problems.append(f"L0 = {self.L0} must exceed 12 M^2 = {12 * self.M ** 2}")
        if problems:
            raise ConfigurationError(problems)
        s_L, r_L = schwarzschild_critical_radii(self.M, self.L0)
        r0_level, r_minus, r_plus = schwarzschild_level_radii(self.M, self.L0, self.E_intermediate)
        eta0 = self.eta0 if self.eta0 is not None else 0.5 * (r_minus - s_L)
        if not (s_L + eta0 < r_minus):
            raise ConfigurationError(
                f"r0 + eta0 = {s_L + eta0} must stay below r_minus = {r_minus}"
            )
        if eta0 <= 0:
            raise ConfigurationError(f"eta0 = {eta0} must be positive")
        object.__setattr__(self, "eta0", float(eta0))
        object.__setattr__(self, "r0", float(s_L))
        object.__setattr__(self, "s_L0", float(s_L))
        object.__setattr__(self, "r_L0", float(r_L))
        object.__setattr__(self, "r0_level", float(r0_level))
        object.__setattr__(self, "R_min0", float(r_minus))
        object.__setattr__(self, "R_max0", float(r_plus))

    @property
    def y_init(self) -> float:
        return math.log(math.sqrt(2.0) * self.E_intermediate)


# ---------------------------------------------------------------------------
# the steady-state record


class SteadyState:
    """Tabulated static solution plus evaluators for all derived fields.

    The tables of ``y`` and the quasi-local Vlasov mass ``m`` are the state;
    every other quantity (metric coefficients, matter fields, derivatives) is
    reconstructed from them through closed formulas, so that a state loaded
    from disk behaves identically to a freshly constructed one.
    """

    def __init__(self, *, mode, M, eos, r_grid, y, m, E0_cut, Rmin, Rmax,
                 M_vlasov, r0_indicator=0.0, shell=None):
        self.mode = mode
        self.M = float(M)
        self.eos = eos
        self.r_grid = np.asarray(r_grid, dtype=float)
        self.y_table = np.asarray(y, dtype=float)
        self.m_table = np.asarray(m, dtype=float)
        self.E0_cut = None if E0_cut is None else float(E0_cut)
        self.Rmin = None if Rmin is None else float(Rmin)
        self.Rmax = None if Rmax is None else float(Rmax)
        self.M_vlasov = float(M_vlasov)
        self.r0_indicator = float(r0_indicator)
        self.shell = shell
        if not np.all(np.diff(self.r_grid) > 0):
            raise NumericalError("radial grid must be strictly increasing")
        # C^2 interpolants: orbit quadratures need a smooth potential and a
        # derivative consistent with the tabulated values far below the
        # quadrature tolerances; support edges are exact grid nodes
        self._y = CubicSpline(self.r_grid, self.y_table, extrapolate=False)
        self._m = CubicSpline(self.r_grid, self.m_table, extrapolate=False)

    # -- basic evaluators --------------------------------------------------

    @property
    def has_matter(self) -> bool:
        return self.Rmin is not None and self.Rmax is not None and self.M_vlasov > 0

    @property
    def total_mass(self) -> float:
        return self.M + self.M_vlasov

    def y(self, r):
        r = np.asarray(r, dtype=float)
        lo, hi = self.r_grid[0], self.r_grid[-1]
        rc = np.clip(r, lo, hi)
        out = self._y(rc)
        # exact vacuum continuation beyond the table
        outside = r > hi
        if np.any(outside):
            y_inf = math.log(self.E0_cut) if self.E0_cut else self.y_table[-1]
            out = np.where(
                outside,
                y_inf - 0.5 * np.log1p(-2.0 * self.total_mass / np.maximum(r, hi)),
                out,
            )
        return out

    def m(self, r):
        r = np.asarray(r, dtype=float)
        rc = np.clip(r, self.r_grid[0], self.r_grid[-1])
        return np.where(r > self.r_grid[-1], self.M_vlasov, self._m(rc))

    def mu0(self, r):
        if not self.has_matter:  # exact vacuum metric, no table error
            r = np.asarray(r, dtype=float)
            if self.total_mass == 0.0:
                return np.zeros_like(r)
            return 0.5 * np.log1p(-2.0 * self.total_mass / r)
        return math.log(self.E0_cut) - self.y(r)

    def lambda0(self, r):
        r = np.asarray(r, dtype=float)
        return -0.5 * np.log1p(-2.0 * (self.M + self.m(r)) / r)

    def matter_indicator(self, r):
        r = np.asarray(r, dtype=float)
        return (r >= self.r0_indicator).astype(float)

    def rho0(self, r):
        if not self.has_matter:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.matter_indicator(r) * eos_mod.profile_G(self.eos, r, self.y(r))

    def p0(self, r):
        if not self.has_matter:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.matter_indicator(r) * eos_mod.profile_H(self.eos, r, self.y(r))

    def q0(self, r):
        if not self.has_matter:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.matter_indicator(r) * eos_mod.profile_q(self.eos, r, self.y(r))

    def mu0_prime(self, r):
        r = np.asarray(r, dtype=float)
        e2lam = np.exp(2.0 * self.lambda0(r))
        return e2lam * ((self.M + self.m(r)) / r**2 + 4.0 * np.pi * r * self.p0(r))

    def lambda0_prime(self, r):
        r = np.asarray(r, dtype=float)
        e2lam = np.exp(2.0 * self.lambda0(r))
        return e2lam * (4.0 * np.pi * r * self.rho0(r) - (self.M + self.m(r)) / r**2)

    def grav_prime_sum(self, r):
        """mu0' + lambda0' = 4 pi r e^(2 lambda0) (rho0 + p0), exact on support."""
        r = np.asarray(r, dtype=float)
        return 4.0 * np.pi * r * np.exp(2.0 * self.lambda0(r)) * (self.rho0(r) + self.p0(r))

    def energy(self, r, w, L):
        """Particle energy E(r, w, L) = e^(mu0) sqrt(1 + w^2 + L/r^2)."""
        r = np.asarray(r, dtype=float)
        return np.exp(self.mu0(r)) * np.sqrt(1.0 + np.asarray(w) ** 2 + np.asarray(L) / r**2)

    def support_grid(self, n=400):
        """Chebyshev-spaced radial nodes inside the matter support."""
        if not self.has_matter:
            raise EvStabError("state has no matter support")
        k = np.arange(1, n + 1)
        x = np.cos((2 * k - 1) * np.pi / (2 * n))[::-1]
        return 0.5 * (self.Rmin + self.Rmax) + 0.5 * (self.Rmax - self.Rmin) * x

    def __repr__(self):
        supp = f"[{self.Rmin:.4g}, {self.Rmax:.4g}]" if self.has_matter else "none"
        return (f"SteadyState(mode={self.mode!r}, M={self.M:.4g}, "
                f"M_vlasov={self.M_vlasov:.4g}, E0={self.E0_cut}, support={supp})")


# ---------------------------------------------------------------------------
# builders


def _chebyshev(a, b, n):
    k = np.arange(1, n + 1)
    x = np.cos((2 * k - 1) * np.pi / (2 * n))[::-1]
    return 0.5 * (a + b) + 0.5 * (b - a) * x


def _assemble_grid(pieces, lo, hi):
    g = np.concatenate([np.asarray(p, dtype=float) for p in pieces])
    g = g[(g >= lo) & (g <= hi)]
    g = np.unique(g)
    # drop nodes closer than float spacing allows
    keep = np.concatenate([[True], np.diff(g) > 1e-13 * np.maximum(1.0, g[1:])])
    return g[keep]


def solve_singularity_free(eos: EquationOfState, y0: float, n_support: int = 512,
                           r_extent: float = 3.0) -> SteadyState:
    """Integrate the reduced equation from the regular center outward.

    Returns the state with cut-off energy ``E0 = exp(y_inf)`` obtained by
    matching to the exterior Schwarzschild solution at the first vacuum
    radius.
    """
    if y0 <= 0:
        raise ConfigurationError(f"y0 = {y0} must be positive")
    if eos.delta == 0.0:
        # no matter at all: Minkowski space
        grid = np.linspace(1e-6, 10.0, 64)
        return SteadyState(mode="singfree", M=0.0, eos=eos, r_grid=grid,
                           y=np.full_like(grid, y0), m=np.zeros_like(grid),
                           E0_cut=None, Rmin=None, Rmax=None, M_vlasov=0.0)

    def rhs(r, u):
        y, m = u
        rho = eos_mod.profile_G(eos, r, y)
        p = eos_mod.profile_H(eos, r, y)
        denom = 1.0 - 2.0 * m / r
        if denom < _HORIZON_MARGIN:
            raise NumericalError(f"metric denominator vanished at r = {r:.8g}")
        yp = -(m / r**2 + 4.0 * np.pi * r * p) / denom
        return [yp, 4.0 * np.pi * r**2 * rho]

    def support_exit(r, u):
        return alpha_max(eos, r, u[0])

    support_exit.terminal = True
    support_exit.direction = -1

    r_start = 1e-8
    G0 = float(eos_mod.profile_G(eos, r_start, y0)) if eos.L0 == 0 else 0.0
    H0 = float(eos_mod.profile_H(eos, r_start, y0)) if eos.L0 == 0 else 0.0
    u0 = [y0 - 2.0 * np.pi * r_start**2 * (G0 / 3.0 + H0),
          4.0 * np.pi / 3.0 * G0 * r_start**3]
    sol = solve_ivp(rhs, (r_start, 1e5), u0, method="RK45", rtol=1e-10, atol=1e-13,
                    events=support_exit, dense_output=True, max_step=1.0)
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise NumericalError(f"support boundary not reached: {sol.message} "
                             f"(last radius {sol.t[-1]:.8g})")
    Rmax = float(sol.t_events[0][0])
    y_R, M_tot = sol.sol(Rmax)
    y_inf = y_R + 0.5 * math.log1p(-2.0 * M_tot / Rmax)
    if y_inf >= 0:
        raise NumericalError(f"y_inf = {y_inf} >= 0; no admissible cut-off energy")
    E0 = math.exp(y_inf)

    Rmin = 0.0 if eos.L0 == 0 else _locate_inner_edge(sol, eos, r_start, Rmax)
    grid = _assemble_grid(
        [sol.t, _chebyshev(max(Rmin, r_start), Rmax, n_support), [Rmax],
         np.geomspace(Rmax, r_extent * Rmax, 65)],
        r_start, r_extent * Rmax)
    inside = grid <= Rmax
    y_tab = np.empty_like(grid)
    m_tab = np.empty_like(grid)
    y_tab[inside], m_tab[inside] = sol.sol(grid[inside])
    y_tab[~inside] = y_inf - 0.5 * np.log1p(-2.0 * M_tot / grid[~inside])
    m_tab[~inside] = M_tot

    return SteadyState(mode="singfree", M=0.0, eos=eos.with_cutoff(E0), r_grid=grid,
                       y=y_tab, m=m_tab, E0_cut=E0, Rmin=Rmin, Rmax=Rmax,
                       M_vlasov=float(M_tot))


def _locate_inner_edge(sol, eos, r_lo, r_hi):
    """First radius where the ansatz activates (L0 > 0 vacuum core)."""
    f = lambda r: float(alpha_max(eos, r, sol.sol(r)[0]))
    rs = np.linspace(r_lo, r_hi, 4096)
    vals = np.array([f(r) for r in rs])
    idx = np.argmax(vals > 0)
    if idx == 0:
        return r_lo
    return brentq(f, rs[idx - 1], rs[idx], xtol=1e-13)


def build_shell(params: ShellParameters, eos: EquationOfState, delta: float) -> SteadyState:
    """Construct the static shell of amplitude ``delta`` around the black hole.

    The radial cut-off is represented implicitly: matter activates only for
    ``r >= r0`` and is switched off by the energy cut everywhere below the
    inner level radius, so the smooth cut-off function never needs to be
    evaluated.
    """
    M = params.M
    eos = eos.with_delta(delta)
    if eos.L0 != params.L0:
        eos = EquationOfState(family=eos.family, k=eos.k, l=eos.l, L0=params.L0,
                              delta=delta)
    r_lo = 2.0 * M * (1.0 + 1e-4)
    r_hi = params.R_max0

    # near the horizon y diverges like -0.5*ln(r - 2M); nodes geometric in
    # r - 2M keep the interpolation error flat there
    horizon_nodes = 2.0 * M + np.geomspace(r_lo - 2.0 * M, 2.0 * M, 129)

    if delta == 0.0:
        # pure Schwarzschild, formally tagged with the intermediate energy
        grid = _assemble_grid(
            [horizon_nodes, _chebyshev(4.0 * M, r_hi, 257),
             np.geomspace(r_hi, 3.0 * r_hi, 65)], r_lo, 3.0 * r_hi)
        y_tab = math.log(params.E_intermediate) - 0.5 * np.log1p(-2.0 * M / grid)
        return SteadyState(mode="shell", M=M, eos=eos.with_cutoff(params.E_intermediate),
                           r_grid=grid, y=y_tab, m=np.zeros_like(grid),
                           E0_cut=params.E_intermediate, Rmin=None, Rmax=None,
                           M_vlasov=0.0, r0_indicator=params.r0, shell=params)

    def rho_p(r, y):
        if r < params.r0:
            return 0.0, 0.0
        return (float(eos_mod.profile_G(eos, r, y)),
                float(eos_mod.profile_H(eos, r, y)))

    def rhs(r, u):
        y, m = u
        rho, p = rho_p(r, y)
        denom = 1.0 - 2.0 * (M + m) / r
        if denom < _HORIZON_MARGIN:
            raise NumericalError(f"2(M + m) -> r at r = {r:.8g}: horizon formation")
        yp = -((M + m) / r**2 + 4.0 * np.pi * r * p) / denom
        return [yp, 4.0 * np.pi * r**2 * rho]

    def support_exit(r, u):
        return float(alpha_max(eos, r, u[0])) if r >= params.r0 else -1.0

    support_exit.terminal = False
    support_exit.direction = -1

    sol = solve_ivp(rhs, (4.0 * M, r_hi), [params.y_init, 0.0], method="RK45",
                    rtol=1e-10, atol=1e-14, events=support_exit, dense_output=True,
                    max_step=(r_hi - 4.0 * M) / 64.0)
    if sol.status < 0:
        raise NumericalError(f"shell integration failed: {sol.message}")
    y_R, M_delta = sol.sol(r_hi)
    y_inf = y_R + 0.5 * math.log1p(-2.0 * (M + M_delta) / r_hi)
    E_delta = math.exp(y_inf)
    if not (0.0 < E_delta < 1.0):
        raise NumericalError(f"cut-off energy E = {E_delta} outside ]0, 1[")

    Rmin = params.R_min0
    Rmax = float(sol.t_events[0][0]) if len(sol.t_events[0]) else r_hi

    grid = _assemble_grid(
        [horizon_nodes, sol.t, [params.r0, Rmin, Rmax],
         _chebyshev(Rmin, Rmax, 512), np.geomspace(r_hi, 3.0 * r_hi, 65)],
        r_lo, 3.0 * r_hi)
    y_tab = np.empty_like(grid)
    m_tab = np.empty_like(grid)
    below = grid < 4.0 * M
    inside = (grid >= 4.0 * M) & (grid <= r_hi)
    above = grid > r_hi
    # y = y^0 below the shell (vacuum Schwarzschild of mass M)
    y_tab[below] = math.log(params.E_intermediate) - 0.5 * np.log1p(-2.0 * M / grid[below])
    m_tab[below] = 0.0
    y_tab[inside], m_tab[inside] = sol.sol(grid[inside])
    y_tab[above] = y_inf - 0.5 * np.log1p(-2.0 * (M + M_delta) / grid[above])
    m_tab[above] = M_delta

    return SteadyState(mode="shell", M=M, eos=eos.with_cutoff(E_delta), r_grid=grid,
                       y=y_tab, m=m_tab, E0_cut=E_delta, Rmin=Rmin, Rmax=Rmax,
                       M_vlasov=float(M_delta), r0_indicator=params.r0, shell=params)


# ---------------------------------------------------------------------------
# diagnostics and residual checks


def diagnostics(ss: SteadyState) -> dict:
    """ADM mass, rest mass, binding energy, and the compactness maximum."""
    if not ss.has_matter:
        return {"M_ADM": ss.M, "N_rest_mass": 0.0, "binding_energy": None,
                "max_2m_over_r": _max_compactness(ss)}
    r = ss.support_grid(800)
    y = ss.y(r)
    rho = ss.rho0(r)
    n = ss.matter_indicator(r) * eos_mod.profile_number_density(ss.eos, r, y)
    elam = np.exp(ss.lambda0(r))
    M_adm = ss.M + 4.0 * np.pi * PchipInterpolator(r, rho * r**2).antiderivative()(r[-1])
    N = 4.0 * np.pi * PchipInterpolator(r, n * elam * r**2).antiderivative()(r[-1])
    Eb = (N - M_adm) / N if N > 0 else None
    return {"M_ADM": float(M_adm), "N_rest_mass": float(N), "binding_energy": Eb,
            "max_2m_over_r": _max_compactness(ss)}


def _max_compactness(ss: SteadyState) -> float:
    # For a shell the horizon limit 2M/r -> 1 at r -> 2M is trivial; the
    # meaningful compactness maximum is taken from the matter inward edge on.
    r = ss.r_grid
    if ss.mode == "shell" and ss.has_matter:
        sel = r >= ss.Rmin
    else:
        sel = slice(None)
    return float(np.max(2.0 * (ss.M + ss.m_table[sel]) / r[sel]))


def equilibrium_residuals(ss: SteadyState) -> dict:
    """Sup-norm residuals of the static field equations and the TOV balance.

    Evaluated on the state's own grid nodes inside the matter support, with
    radial derivatives from spline fits through the tabulated nodes; the
    residuals measure the mutual consistency of the ODE solution, the stored
    tables, and the moment quadratures.  Each residual is normalized by the
    supremum of its dominant term.
    """
    if not ss.has_matter:
        return {"tov": 0.0, "field_eq_rho": 0.0, "field_eq_p": 0.0}
    pad = 1e-9 * (ss.Rmax - ss.Rmin)
    sel = (ss.r_grid >= ss.Rmin + pad) & (ss.r_grid <= ss.Rmax - pad)
    r = ss.r_grid[sel]
    y = ss.y_table[sel]
    rho = ss.matter_indicator(r) * eos_mod.profile_G(ss.eos, r, y)
    p = ss.matter_indicator(r) * eos_mod.profile_H(ss.eos, r, y)
    q = ss.matter_indicator(r) * eos_mod.profile_q(ss.eos, r, y)
    lam = -0.5 * np.log1p(-2.0 * (ss.M + ss.m_table[sel]) / r)
    mu = math.log(ss.E0_cut) - y
    mu_p = CubicSpline(r, mu)(r, 1)
    lam_p = CubicSpline(r, lam)(r, 1)
    p_prime = CubicSpline(r, p)(r, 1)

    e2lam = np.exp(-2.0 * lam)
    tov = p_prime + mu_p * (p + rho) + 2.0 / r * (p - q)
    tov_scale = np.max(np.abs(mu_p * (p + rho)))
    # the equations' characteristic term size; for a shell the metric terms
    # are O(1) while the matter term is O(delta)
    f1 = e2lam * (2.0 * r * lam_p - 1.0) + 1.0 - 8.0 * np.pi * r**2 * rho
    f1_scale = np.max(np.abs(e2lam * 2.0 * r * lam_p) + np.abs(1.0 - e2lam)
                      + 8.0 * np.pi * r**2 * rho)
    f2 = e2lam * (2.0 * r * mu_p + 1.0) - 1.0 - 8.0 * np.pi * r**2 * p
    f2_scale = np.max(np.abs(e2lam * 2.0 * r * mu_p) + np.abs(1.0 - e2lam)
                      + 8.0 * np.pi * r**2 * p)
    return {
        "tov": float(np.max(np.abs(tov)) / tov_scale),
        "field_eq_rho": float(np.max(np.abs(f1)) / f1_scale),
        "field_eq_p": float(np.max(np.abs(f2)) / f2_scale),
    }


# ---------------------------------------------------------------------------
# serialization: versioned JSON header followed by a CSV payload


def save_state(ss: SteadyState, path):
    header = {
        "format": "evstab-state",
        "version": STATE_FORMAT_VERSION,
        "mode": ss.mode,
        "M": ss.M,
        "E0_cut": ss.E0_cut,
        "Rmin": ss.Rmin,
        "Rmax": ss.Rmax,
        "M_vlasov": ss.M_vlasov,
        "r0_indicator": ss.r0_indicator,
        "eos": {"family": ss.eos.family, "k": ss.eos.k, "l": ss.eos.l,
                "L0": ss.eos.L0, "delta": ss.eos.delta},
        "shell": None if ss.shell is None else {
            "M": ss.shell.M, "L0": ss.shell.L0,
            "E_intermediate": ss.shell.E_intermediate, "eta0": ss.shell.eta0},
    }
    buf = io.StringIO()
    buf.write("#evstab-state " + json.dumps(header, sort_keys=True) + "\n")
    buf.write("r,y,mu0,lambda0,rho0,p0,q0,m\n")
    r = ss.r_grid
    cols = np.column_stack([r, ss.y_table, ss.mu0(r), ss.lambda0(r),
                            ss.rho0(r), ss.p0(r), ss.q0(r), ss.m_table])
    for row in cols:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_state(path) -> SteadyState:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#evstab-state "):
            raise NumericalError(f"{path}: not an evstab state file")
        header = json.loads(first[len("#evstab-state "):])
        if header.get("version") != STATE_FORMAT_VERSION:
            raise NumericalError(f"unsupported state version {header.get('version')}")
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",")
    cols = {n: data[:, i] for i, n in enumerate(names)}
    e = header["eos"]
    eos = EquationOfState(family=e["family"], k=e["k"], l=e["l"], L0=e["L0"],
                          delta=e["delta"])
    if header["E0_cut"] is not None:
        eos = eos.with_cutoff(header["E0_cut"])
    shell = None
    if header.get("shell"):
        s = header["shell"]
        shell = ShellParameters(M=s["M"], L0=s["L0"],
                                E_intermediate=s["E_intermediate"], eta0=s["eta0"])
    ss = SteadyState(mode=header["mode"], M=header["M"], eos=eos,
                     r_grid=cols["r"], y=cols["y"], m=cols["m"],
                     E0_cut=header["E0_cut"], Rmin=header["Rmin"], Rmax=header["Rmax"],
                     M_vlasov=header["M_vlasov"], r0_indicator=header["r0_indicator"],
                     shell=shell)
    _validate_loaded(ss, cols)
    return ss


def _validate_loaded(ss: SteadyState, cols):
    r = ss.r_grid
    compact = 2.0 * (ss.M + ss.m_table) / r
    if np.any(compact >= 1.0):
        raise NumericalError(
            f"state invariant violated on load: 2(M+m)/r reaches {np.max(compact):.6g} >= 1")
    lam = -0.5 * np.log1p(-compact)
    if np.max(np.abs(lam - cols["lambda0"])) > 1e-8 * (1.0 + np.max(np.abs(lam))):
        raise NumericalError("state invariant violated on load: lambda0 table is inconsistent "
                             "with the mass table")
    if ss.E0_cut is not None:
        mu = math.log(ss.E0_cut) - ss.y_table
        if np.max(np.abs(mu - cols["mu0"])) > 1e-8 * (1.0 + np.max(np.abs(mu))):
            raise NumericalError("state invariant violated on load: mu0 table is inconsistent "
                                 "with the y table")
