"""Effective-potential analysis and the action-angle layer.

For a fixed equilibrium every particle orbit is labelled by its energy E and
squared angular momentum L.  Provided the effective potential

    Psi_L(r) = exp(mu0(r)) * sqrt(1 + L / r^2)

has exactly one critical point (a minimum) inside each admissible radial
band I_L, the radial motion oscillates between two turning points and the
orbit can be parameterized by an angle variable theta in [0, 1).  This module
verifies that single-well property, locates turning points, evaluates the
radial period function and the angle map, and tabulates orbits; periods can
be cross-checked against direct integration of the characteristic system.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import PchipInterpolator

from .equilibria import SteadyState, schwarzschild_critical_radii
from .errors import EvStabError, OutOfSupportError, SingleWellViolation
from .quadrature import gauss_nodes

_PERIOD_ORDER = 96        # Gauss order of the desingularized period integral
_NEAR_CIRCULAR = 1e-4     # (r_plus - r_minus)/r_L below which the harmonic
                          # branch takes over
_SCAN_SAMPLES = 2048      # slope samples per I_L in the single-well scan


def effective_potential(ss: SteadyState, L, r):
    """Psi_L(r) = exp(mu0(r)) sqrt(1 + L/r^2)."""
    r = np.asarray(r, dtype=float)
    return np.exp(ss.mu0(r)) * np.sqrt(1.0 + np.asarray(L, dtype=float) / r**2)


def potential_slope(ss: SteadyState, L, r):
    """Sign-carrying factor of Psi_L'; Psi_L' = Psi_L * potential_slope."""
    r = np.asarray(r, dtype=float)
    L = np.asarray(L, dtype=float)
    return ss.mu0_prime(r) - L / (r**3 + r * L)


def _radial_band(ss: SteadyState):
    """Radial interval that can contain admissible orbits."""
    if ss.has_matter:
        return max(ss.Rmin, 1e-10), ss.Rmax
    if ss.mode == "shell" and ss.E0_cut is not None:
        # formal vacuum case: between the centrifugal barrier and far field
        s_L, _ = schwarzschild_critical_radii(ss.M, ss.eos.L0)
        return s_L * (1.0 + 1e-12), ss.r_grid[-1]
    raise EvStabError("state has no admissible orbit band")


@dataclass
class SupportEL:
    """Per-L geometry of the admissible (E, L) region, plus period bounds."""

    L_nodes: np.ndarray       # increasing L values with I_L nonempty
    r_L: np.ndarray           # potential-minimum radius per L
    E_min: np.ndarray         # Psi_L(r_L); E ranges over ]E_min, E0[
    IL_lo: np.ndarray
    IL_hi: np.ndarray
    E0: float
    L_lo: float
    L_max: float
    T_min: float
    T_max: float
    sufficient_condition: bool | None   # 2m/r <= 1/3 check, isotropic only
    formal: bool = False                # vacuum (delta = 0) band

    def E_range(self, L):
        e = np.interp(np.asarray(L, dtype=float), self.L_nodes, self.E_min)
        return e, self.E0


def _bisect(f, lo, hi, iters=80):
    """Vectorized bisection; f(lo) and f(hi) must have opposite signs."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = np.sign(f(lo))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        same = np.sign(f(mid)) == flo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def _L_upper_bound(ss: SteadyState, lo, hi):
    """Largest L for which min Psi_L over the band stays below E0."""
    r = np.linspace(lo, hi, 4096)
    emu = np.exp(ss.mu0(r))

    def min_gap(L):
        L = np.asarray(L, dtype=float)
        return np.min(emu * np.sqrt(1.0 + L[..., None] / r**2), axis=-1) - ss.E0_cut

    L_hi = max(2.0 * ss.eos.L0, 1.0)
    while min_gap(L_hi) < 0:
        L_hi *= 2.0
        if L_hi > 1e12:
            raise EvStabError("no finite angular-momentum bound found")
    L_lo = max(ss.eos.L0, 1e-12)
    if min_gap(L_lo) >= 0:
        raise OutOfSupportError("support is empty: no admissible L")
    return float(_bisect(min_gap, L_lo, L_hi, iters=60))


def _scan_wells(ss: SteadyState, L_nodes, samples=_SCAN_SAMPLES):
    """Batched well scan: I_L endpoints and the unique slope root per L.

    Raises :class:`SingleWellViolation` if some Psi_L has more than one
    critical point inside I_L, or if I_L is not connected.
    """
    lo, hi = _radial_band(ss)
    L_nodes = np.atleast_1d(np.asarray(L_nodes, dtype=float))
    r = np.linspace(lo, hi, samples)
    emu = np.exp(ss.mu0(r))
    mup = ss.mu0_prime(r)
    psi = emu * np.sqrt(1.0 + L_nodes[:, None] / r**2)
    slope = mup - L_nodes[:, None] / (r**3 + r * L_nodes[:, None])

    IL_lo = np.empty_like(L_nodes)
    IL_hi = np.empty_like(L_nodes)
    bracket_lo = np.empty_like(L_nodes)
    bracket_hi = np.empty_like(L_nodes)
    for i, Lv in enumerate(L_nodes):
        below = psi[i] < ss.E0_cut
        idx = np.nonzero(below)[0]
        if idx.size == 0:
            raise OutOfSupportError(f"I_L is empty for L = {Lv}")
        if np.any(np.diff(idx) != 1):
            raise SingleWellViolation(Lv, r[idx[np.nonzero(np.diff(idx) != 1)[0]]])
        gap = lambda x: effective_potential(ss, Lv, x) - ss.E0_cut
        IL_lo[i] = r[idx[0]] if idx[0] == 0 else float(_bisect(gap, r[idx[0] - 1], r[idx[0]]))
        IL_hi[i] = r[idx[-1]] if idx[-1] == samples - 1 else \
            float(_bisect(gap, r[idx[-1] + 1], r[idx[-1]]))
        sgn = np.sign(slope[i, idx])
        cross = np.nonzero(np.diff(sgn) != 0)[0]
        if cross.size != 1:
            radii = r[idx[cross]] if cross.size else []
            raise SingleWellViolation(Lv, radii)
        bracket_lo[i] = r[idx[cross[0]]]
        bracket_hi[i] = r[idx[cross[0] + 1]]

    r_L = _bisect(lambda x: potential_slope(ss, L_nodes, x), bracket_lo, bracket_hi)
    E_min = effective_potential(ss, L_nodes, r_L)
    return IL_lo, IL_hi, r_L, E_min


def critical_radius(ss: SteadyState, L):
    """Unique minimum radius r_L of Psi_L inside I_L."""
    scalar = np.ndim(L) == 0
    _, _, r_L, _ = _scan_wells(ss, L)
    return float(r_L[0]) if scalar else r_L


def verify_single_well(ss: SteadyState, n_L: int = 64, samples: int = _SCAN_SAMPLES,
                       n_E_periods: int = 10) -> SupportEL:
    """Scan the admissible L range for extra critical points of Psi_L.

    Raises :class:`SingleWellViolation` when some Psi_L has more than one
    critical point inside I_L.  On success returns the tabulated support
    geometry together with the observed period bounds (condition S2) and, for
    isotropic singularity-free states, the sufficient-condition check
    ``max 2m/r <= 1/3``.
    """
    lo, hi = _radial_band(ss)
    formal = not ss.has_matter
    L_lo = ss.eos.L0
    L_max = _L_upper_bound(ss, lo, hi)
    if L_max <= L_lo:
        raise OutOfSupportError("admissible L interval is empty")
    # linear backbone plus geometric refinement toward the collapse at L_max
    t = np.unique(np.concatenate([
        np.linspace(0.004, 0.9, n_L - n_L // 3),
        1.0 - np.geomspace(1e-4, 0.1, n_L // 3)]))
    L_nodes = L_lo + (L_max - L_lo) * t
    IL_lo, IL_hi, r_L, E_min = _scan_wells(ss, L_nodes, samples)

    sufficient = None
    if ss.mode == "singfree" and ss.eos.l == 0.0 and ss.eos.L0 == 0.0:
        sufficient = bool(np.max(2.0 * ss.m_table / ss.r_grid) <= 1.0 / 3.0)

    t_lo, t_hi = np.inf, 0.0
    if not formal:
        sel = range(0, len(L_nodes), max(1, len(L_nodes) // 16))
        for i in sel:
            gap = ss.E0_cut - E_min[i]
            if gap <= 0:
                continue
            E = E_min[i] + gap * np.linspace(0.02, 0.98, n_E_periods)
            T = period(ss, E, np.full_like(E, L_nodes[i]))
            t_lo = min(t_lo, float(np.min(T)))
            t_hi = max(t_hi, float(np.max(T)))

    return SupportEL(L_nodes=L_nodes, r_L=r_L, E_min=E_min, IL_lo=IL_lo,
                     IL_hi=IL_hi, E0=float(ss.E0_cut), L_lo=float(L_lo),
                     L_max=float(L_max), T_min=t_lo, T_max=t_hi,
                     sufficient_condition=sufficient, formal=formal)


def turning_points(ss: SteadyState, E, L, r_L=None, soft=False):
    """Radii r_minus < r_L < r_plus with Psi_L(r_pm) = E.

    ``(E, L)`` must lie inside the admissible region: Psi_L(r_L) < E < E0.
    With ``soft`` set, energies within roundoff of the band edges are clamped
    just inside instead of rejected (off-grid quadrature nodes can graze the
    edges); genuine violations still raise.
    """
    scalar = np.ndim(E) == 0 and np.ndim(L) == 0
    E, L = np.atleast_1d(np.asarray(E, dtype=float), np.asarray(L, dtype=float))
    E, L = np.broadcast_arrays(E, L)
    if r_L is None:
        _, _, r_L, E_floor = _scan_wells(ss, L)
    else:
        r_L = np.atleast_1d(np.asarray(r_L, dtype=float))
        E_floor = effective_potential(ss, L, r_L)
    if soft:
        tol = 1e-6 * ss.E0_cut
        if np.any(E < E_floor - tol) or np.any(E > ss.E0_cut + tol):
            soft = False
        else:
            pad = 1e-10 * ss.E0_cut
            lo = E_floor + pad
            hi = np.full_like(E_floor, ss.E0_cut - pad)
            mid = 0.5 * (E_floor + ss.E0_cut)
            collapsed = lo >= hi
            E = np.clip(E, np.where(collapsed, mid, lo), np.where(collapsed, mid, hi))
    if not soft and (np.any(E <= E_floor) or np.any(E >= ss.E0_cut)):
        bad = int(np.argmax((E <= E_floor) | (E >= ss.E0_cut)))
        raise OutOfSupportError(
            f"(E, L) = ({E[bad]}, {L[bad]}) outside the admissible band "
            f"]{E_floor[bad]:.12g}, {ss.E0_cut:.12g}[")

    lo_band, hi_band = _radial_band(ss)
    gap = lambda r: effective_potential(ss, L, r) - E
    # Psi_L >= E0 > E at the band edges, so the brackets below are valid
    r_minus = _bisect(gap, np.full_like(r_L, lo_band), r_L)
    hi = np.full_like(r_L, max(hi_band, ss.r_grid[-1]))
    for _ in range(100):
        short = gap(hi) <= 0
        if not np.any(short):
            break
        hi = np.where(short, 1.5 * hi, hi)
    r_plus = _bisect(gap, r_L, hi)
    if scalar:
        return float(r_minus[0]), float(r_plus[0])
    return r_minus, r_plus


def _psi_second_derivative(ss, L, r_L):
    h = 1e-5 * np.maximum(np.abs(r_L), 1.0)

    def psi_prime(r):
        return effective_potential(ss, L, r) * potential_slope(ss, L, r)

    return (psi_prime(r_L + h) - psi_prime(r_L - h)) / (2.0 * h)


def period(ss: SteadyState, E, L, order: int = _PERIOD_ORDER, return_flag: bool = False,
           r_L=None):
    """Radial period T(E, L) of the orbit through the well of Psi_L.

    The integrable inverse-square-root endpoint behavior is removed exactly
    by the substitution r = r_c + r_a sin(u); orbits narrower than the
    near-circular threshold switch to the harmonic-well formula instead
    (flagged when ``return_flag`` is set).
    """
    scalar = np.ndim(E) == 0 and np.ndim(L) == 0
    E, L = np.atleast_1d(np.asarray(E, dtype=float), np.asarray(L, dtype=float))
    E, L = np.broadcast_arrays(E, L)
    if r_L is None:
        _, _, r_L, _ = _scan_wells(ss, L)
    else:
        r_L = np.broadcast_to(np.asarray(r_L, dtype=float), E.shape)
    r_minus, r_plus = turning_points(ss, E, L, r_L=r_L)
    width = (r_plus - r_minus) / r_L
    T = np.empty_like(E)
    flag = width < _NEAR_CIRCULAR
    if np.any(flag):
        psi2 = _psi_second_derivative(ss, L[flag], r_L[flag])
        pref = np.exp(ss.lambda0(r_L[flag]) - ss.mu0(r_L[flag]))
        T[flag] = 2.0 * np.pi * pref * np.sqrt(E[flag] / psi2)
    if np.any(~flag):
        T[~flag] = _period_quadrature(ss, E[~flag], L[~flag],
                                      r_minus[~flag], r_plus[~flag], order)
    if scalar:
        return (float(T[0]), bool(flag[0])) if return_flag else float(T[0])
    return (T, flag) if return_flag else T


def _orbit_integrand(ss, E, L, r_minus, r_plus, u):
    """Period integrand after the sine substitution; bounded at both ends."""
    r_c = 0.5 * (r_plus + r_minus)
    r_a = 0.5 * (r_plus - r_minus)
    r = r_c[..., None] + r_a[..., None] * np.sin(u)
    psi = effective_potential(ss, L[..., None], r)
    rad = np.maximum((E[..., None] - psi) * (E[..., None] + psi), 0.0)
    f = np.exp(ss.lambda0(r) - ss.mu0(r)) * E[..., None] * r_a[..., None] * np.cos(u)
    return np.where(rad > 0, f / np.sqrt(np.where(rad > 0, rad, 1.0)), 0.0)


def _period_quadrature(ss, E, L, r_minus, r_plus, order):
    u, wu = gauss_nodes(order, -0.5 * np.pi, 0.5 * np.pi)
    return 2.0 * np.sum(wu * _orbit_integrand(ss, E, L, r_minus, r_plus, u), axis=-1)


def angle(ss: SteadyState, r, E, L, order: int = _PERIOD_ORDER,
          turning=None, T=None):
    """Angle variable theta(r, E, L) in [0, 1/2] for nonnegative momentum.

    The odd branch (w < 0) corresponds to 1 - theta.
    """
    scalar = np.ndim(r) == 0 and np.ndim(E) == 0 and np.ndim(L) == 0
    r, E, L = np.atleast_1d(np.asarray(r, dtype=float), np.asarray(E, dtype=float),
                            np.asarray(L, dtype=float))
    r, E, L = np.broadcast_arrays(r, E, L)
    r_minus, r_plus = turning if turning is not None else turning_points(ss, E, L)
    if T is None:
        T = period(ss, E, L, order=order)
    r_c = 0.5 * (r_plus + r_minus)
    r_a = 0.5 * (r_plus - r_minus)
    u_r = np.arcsin(np.clip((r - r_c) / r_a, -1.0, 1.0))
    u, wu = gauss_nodes(order, np.full_like(u_r, -0.5 * np.pi), u_r)
    integral = np.sum(wu * _orbit_integrand(ss, E, L, r_minus, r_plus, u), axis=-1)
    theta = np.clip(integral / T, 0.0, 0.5)
    return float(theta[0]) if scalar else theta


def angle_and_period(ss: SteadyState, r, E, L, r_L=None, order: int = _PERIOD_ORDER,
                     chunk: int = 200_000):
    """Batched (theta, T) evaluation sharing turning points and quadratures.

    ``r_L`` may be supplied (e.g. interpolated from a SupportEL scan) to skip
    the per-L well scan; accuracy of the bracket only requires
    Psi_L(r_L) < E.  Intended for large scattered point sets.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float)).ravel()
    E = np.atleast_1d(np.asarray(E, dtype=float)).ravel()
    L = np.atleast_1d(np.asarray(L, dtype=float)).ravel()
    r, E, L = np.broadcast_arrays(r, E, L)
    theta = np.empty_like(r)
    T = np.empty_like(r)
    for s in range(0, len(r), chunk):
        sl = slice(s, min(s + chunk, len(r)))
        rl = None if r_L is None else np.asarray(r_L, dtype=float).ravel()[sl]
        rm, rp = turning_points(ss, E[sl], L[sl], r_L=rl, soft=True)
        u, wu = gauss_nodes(order, -0.5 * np.pi, 0.5 * np.pi)
        f = _orbit_integrand(ss, E[sl], L[sl], rm, rp, u)
        T[sl] = 2.0 * np.sum(wu * f, axis=-1)
        r_c, r_a = 0.5 * (rp + rm), 0.5 * (rp - rm)
        u_r = np.arcsin(np.clip((r[sl] - r_c) / r_a, -1.0, 1.0))
        up, wup = gauss_nodes(order, np.full_like(u_r, -0.5 * np.pi), u_r)
        part = np.sum(wup * _orbit_integrand(ss, E[sl], L[sl], rm, rp, up), axis=-1)
        theta[sl] = np.clip(part / T[sl], 0.0, 0.5)
    return theta, T


@dataclass
class OrbitTable:
    """Angle-parameterized orbit of a single (E, L) pair."""

    E: float
    L: float
    r_minus: float
    r_plus: float
    T: float
    theta: np.ndarray     # nodes in [0, 1/2]
    R: np.ndarray
    W: np.ndarray


def orbit_radius_nodes(ss: SteadyState, E, L, theta_half, n_fine: int = 2048,
                       turning=None):
    """R(theta) for theta nodes in [0, 1/2], batched over (E, L) pairs.

    Accumulates the monotone map theta(u) on a fine grid in the
    desingularizing variable and inverts it per orbit.  ``E``/``L`` are
    1-d arrays; the result has shape (len(E), len(theta_half)).
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    L = np.atleast_1d(np.asarray(L, dtype=float))
    r_minus, r_plus = turning if turning is not None else turning_points(ss, E, L)
    u = np.linspace(-0.5 * np.pi, 0.5 * np.pi, n_fine + 1)
    f = _orbit_integrand(ss, E, L, r_minus, r_plus, u)
    # finite 0/0 limit of the desingularized integrand at the turning points
    r_a = 0.5 * (r_plus - r_minus)
    for j, r_t in ((0, r_minus), (-1, r_plus)):
        dpsi = np.abs(effective_potential(ss, L, r_t) * potential_slope(ss, L, r_t))
        f[:, j] = np.exp(ss.lambda0(r_t) - ss.mu0(r_t)) * np.sqrt(E * r_a / dpsi)
    cum = np.concatenate([np.zeros((len(E), 1)), cumulative_simpson(f, x=u, axis=-1)],
                         axis=-1)
    R = np.empty((len(E), len(theta_half)))
    for i in range(len(E)):
        theta_of_u = 0.5 * cum[i] / cum[i, -1]
        u_nodes = PchipInterpolator(theta_of_u, u)(theta_half)
        R[i] = 0.5 * (r_plus[i] + r_minus[i]) + 0.5 * (r_plus[i] - r_minus[i]) * np.sin(u_nodes)
    return R, (r_minus, r_plus)


def orbit_solution(ss: SteadyState, E, L, n_theta: int = 64,
                   n_fine: int = 4096) -> OrbitTable:
    """Tabulate R(theta), W(theta) on theta in [0, 1/2].

    W follows from energy conservation with the nonnegative branch on the
    outgoing half of the orbit.
    """
    E = float(E)
    L = float(L)
    theta_nodes = np.linspace(0.0, 0.5, n_theta)
    R, (r_minus, r_plus) = orbit_radius_nodes(ss, [E], [L], theta_nodes, n_fine)
    R = R[0]
    if not np.all(np.diff(R) > 0):
        raise EvStabError(f"non-monotone orbit inversion at (E, L) = ({E}, {L})")
    W2 = (E * np.exp(-ss.mu0(R))) ** 2 - 1.0 - L / R**2
    W = np.sqrt(np.maximum(W2, 0.0))
    if theta_nodes[0] == 0.0:
        W[0] = 0.0
    if theta_nodes[-1] == 0.5:
        W[-1] = 0.0
    T = period(ss, E, L)
    return OrbitTable(E=E, L=L, r_minus=float(r_minus[0]), r_plus=float(r_plus[0]),
                      T=float(T), theta=theta_nodes, R=R, W=W)


def characteristic_period(ss: SteadyState, E, L, rtol: float = 1e-10) -> float:
    """Period from direct integration of the characteristic system.

    Independent oracle for :func:`period`: starts at the inner turning point
    and integrates until the radial momentum returns to zero at the outer one.
    """
    E = float(E)
    L = float(L)
    r_minus, _ = turning_points(ss, E, L)

    def rhs(t, s):
        r, w = s
        eps = np.sqrt(1.0 + w**2 + L / r**2)
        fac = np.exp(ss.mu0(r) - ss.lambda0(r))
        return [fac * w / eps, fac * (L / (r**3 * eps) - ss.mu0_prime(r) * eps)]

    def outer_turn(t, s):
        return s[1]

    outer_turn.terminal = True
    outer_turn.direction = -1

    T_est = float(period(ss, E, L))
    sol = solve_ivp(rhs, (0.0, 5.0 * T_est), [r_minus, 0.0], method="DOP853",
                    rtol=rtol, atol=1e-12, events=outer_turn, first_step=T_est * 1e-6)
    if len(sol.t_events[0]) == 0:
        raise EvStabError(f"characteristic orbit did not close for (E, L) = ({E}, {L})")
    return 2.0 * float(sol.t_events[0][0])
