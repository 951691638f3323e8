"""Microscopic equations of state and the reduced radial profile functions.

The particle ansatz is

    f(x, v) = delta * Phi(1 - E / E0) * (L - L0)_+^l

with the energy profile ``Phi`` either a polytrope ``Phi(a) = a_+^k`` or the
King profile ``Phi(a) = (exp(a) - 1)_+``.  All macroscopic quantities of such
an ansatz reduce to one-dimensional integrals in the variable
``a = 1 - E/E0`` after the angular-momentum integral is carried out in closed
form; the two Beta-function constants

    c_l = int_0^1 s^l (1-s)^(-1/2) ds,     d_l = int_0^1 s^l (1-s)^(+1/2) ds

absorb the endpoint behavior of that reduction.  This module provides the
ansatz itself (``phi``, ``phi_prime``), the density/pressure profiles
``G(r, y)`` and ``H(r, y)`` driving the equilibrium equations, and the
remaining radial moments (tangential pressure, particle density, and the
moments of |d_E f| feeding the stability pipeline).

Here ``y = ln(E0) - mu0(r)`` so that ``E/E0 = exp(-y) * sqrt(1 + w^2 + L/r^2)``.
"""

from dataclasses import dataclass, replace
import warnings

import numpy as np
from scipy.special import beta as beta_fn

from .errors import ConfigurationError, BoundaryValueWarning
from .quadrature import gauss_nodes

FAMILIES = ("polytrope", "king")

_ALPHA_ORDER = 64  # fixed Gauss order of the reduced profile integrals


@dataclass(frozen=True)
class EquationOfState:
    """Parameter record of the microscopic ansatz.

    ``cutoff_energy`` is unknown until an equilibrium has been constructed;
    use :meth:`with_cutoff` to attach it.  ``delta`` is the overall amplitude
    (1 for singularity-free states, small for shells around a black hole).
    """

    family: str
    k: float = 1.0
    l: float = 0.0
    L0: float = 0.0
    delta: float = 1.0
    cutoff_energy: float | None = None

    def __post_init__(self):
        problems = []
        if self.family not in FAMILIES:
            problems.append(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.l < -0.5:
            problems.append(f"l = {self.l} violates l >= -1/2")
        if self.family == "polytrope" and not (0 <= self.k < self.l + 1.5):
            problems.append(f"polytrope requires 0 <= k < l + 3/2, got k = {self.k}, l = {self.l}")
        if self.L0 < 0:
            problems.append(f"L0 = {self.L0} must be nonnegative")
        if self.delta < 0:
            problems.append(f"delta = {self.delta} must be nonnegative")
        if self.cutoff_energy is not None and not (0 < self.cutoff_energy < 1):
            problems.append(f"cutoff_energy = {self.cutoff_energy} must lie in ]0, 1[")
        if problems:
            raise ConfigurationError(problems)

    def with_cutoff(self, E0: float) -> "EquationOfState":
        return replace(self, cutoff_energy=float(E0))

    def with_delta(self, delta: float) -> "EquationOfState":
        return replace(self, delta=float(delta))

    # -- energy profile ---------------------------------------------------

    def Phi(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        pos = alpha > 0
        if self.family == "polytrope":
            return np.where(pos, np.where(pos, alpha, 1.0) ** self.k, 0.0)
        return np.where(pos, np.expm1(np.where(pos, alpha, 0.0)), 0.0)

    def Phi_prime(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        pos = alpha > 0
        if self.family == "polytrope":
            if self.k == 1.0:
                return np.where(pos, 1.0, 0.0)
            return np.where(pos, self.k * np.where(pos, alpha, 1.0) ** (self.k - 1.0), 0.0)
        return np.where(pos, np.exp(np.where(pos, alpha, 0.0)), 0.0)

    def _Phi_prime_at_zero(self):
        # one-sided limit of Phi' as alpha -> 0+
        if self.family == "king":
            return 1.0
        if self.k == 1.0:
            return 1.0
        return 0.0 if self.k > 1.0 else np.inf

    # -- Beta-function constants of the L-reduction -----------------------

    @property
    def c_l(self) -> float:
        return float(beta_fn(self.l + 1.0, 0.5))

    @property
    def d_l(self) -> float:
        return float(beta_fn(self.l + 1.0, 1.5))

    @property
    def c_l1(self) -> float:
        # c_{l+1}; shows up in the tangential-pressure moment
        return float(beta_fn(self.l + 2.0, 0.5))

    def _require_cutoff(self) -> float:
        if self.cutoff_energy is None:
            raise ConfigurationError("cutoff_energy is unset; construct an equilibrium first")
        return self.cutoff_energy


def _angular_factor(eos, L):
    L = np.asarray(L, dtype=float)
    dL = L - eos.L0
    inside = dL > 0
    if eos.l == 0.0:
        return np.where(inside, 1.0, 0.0)
    return np.where(inside, np.where(inside, dL, 1.0) ** eos.l, 0.0)


def phi(eos: EquationOfState, E, L):
    """The ansatz value delta * Phi(1 - E/E0) * (L - L0)_+^l."""
    E0 = eos._require_cutoff()
    alpha = 1.0 - np.asarray(E, dtype=float) / E0
    return eos.delta * eos.Phi(alpha) * _angular_factor(eos, L)


def phi_prime(eos: EquationOfState, E, L):
    """d(phi)/dE; strictly negative inside the support, zero outside.

    At a point where ``E == E0`` exactly and Phi' jumps there, the one-sided
    (inner) limit is returned and a :class:`BoundaryValueWarning` is issued.
    """
    E0 = eos._require_cutoff()
    E = np.asarray(E, dtype=float)
    alpha = 1.0 - E / E0
    ang = _angular_factor(eos, L)
    out = -(eos.delta / E0) * eos.Phi_prime(alpha) * ang
    boundary = (alpha == 0.0) & (ang > 0)
    if np.any(boundary):
        limit = eos._Phi_prime_at_zero()
        if limit != 0.0:
            warnings.warn(
                "phi_prime evaluated at the cut-off energy; returning the one-sided limit",
                BoundaryValueWarning,
                stacklevel=2,
            )
            out = np.where(boundary, -(eos.delta / E0) * limit * ang, out)
    return out if out.ndim else float(out)


def alpha_max(eos: EquationOfState, r, y):
    """Upper limit of the reduced profile integrals; matter exists iff > 0."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    return 1.0 - np.exp(-y) * np.sqrt(1.0 + eos.L0 / r**2)


def _alpha_integral(eos, r, y, weight, power_shift):
    """int_0^amax W(alpha) * B(alpha)^(l + power_shift) dalpha, elementwise.

    B(alpha) = e^(2y) (1-alpha)^2 - 1 - L0/r^2 vanishes linearly at the upper
    limit; substituting alpha = amax * (1 - u^2) removes the fractional-power
    endpoint behavior before the fixed-order Gauss rule is applied.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    r, y = np.broadcast_arrays(r, y)
    amax = alpha_max(eos, r, y)
    out = np.zeros_like(amax)
    mask = amax > 0
    if not np.any(mask):
        return out
    rm, ym, am = r[mask], y[mask], amax[mask]
    u, wu = gauss_nodes(_ALPHA_ORDER, 0.0, 1.0)
    alpha = am[:, None] * (1.0 - u**2)
    one_m = 1.0 - alpha
    B = np.exp(2.0 * ym)[:, None] * one_m**2 - (1.0 + eos.L0 / rm**2)[:, None]
    B = np.maximum(B, 0.0)
    integrand = weight(alpha, one_m) * B ** (eos.l + power_shift)
    out[mask] = np.sum(integrand * (2.0 * am[:, None] * u * wu), axis=1)
    return out


def profile_G(eos: EquationOfState, r, y):
    """Energy density rho(r) = G(r, y(r)) of the ansatz, amplitude included."""
    pref = 2.0 * np.pi * eos.c_l * eos.delta
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi(a) * om**2, 0.5)
    return pref * r ** (2.0 * eos.l) * np.exp(3.0 * y) * val


def profile_H(eos: EquationOfState, r, y):
    """Radial pressure p(r) = H(r, y(r)) of the ansatz."""
    pref = 2.0 * np.pi * eos.d_l * eos.delta
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi(a), 1.5)
    return pref * r ** (2.0 * eos.l) * np.exp(y) * val


def profile_q(eos: EquationOfState, r, y):
    """Tangential pressure of the ansatz (equals H for isotropic states)."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    ic = _alpha_integral(eos, r, y, lambda a, om: eos.Phi(a), 0.5)
    id_ = _alpha_integral(eos, r, y, lambda a, om: eos.Phi(a), 1.5)
    pref = np.pi * eos.delta * r ** (2.0 * eos.l) * np.exp(y)
    return pref * (eos.L0 / r**2 * eos.c_l * ic + eos.c_l1 * id_)


def profile_number_density(eos: EquationOfState, r, y):
    """Particle density int f dv; feeds the rest-mass Casimir."""
    pref = 2.0 * np.pi * eos.c_l * eos.delta
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi(a) * om, 0.5)
    return pref * r ** (2.0 * eos.l) * np.exp(2.0 * y) * val


# -- moments of |phi'| ----------------------------------------------------
#
# These drive the stability pipeline: the w^2 moment is the left-hand side of
# the metric-derivative identity used as a quadrature gauge, the plain moment
# is the (S4) bound, and the eps^2 moment is the radial weight of the kernel's
# direct term.


def moment_phiprime_abs(eos: EquationOfState, r, y):
    """(pi/r^2) * iint |phi'| dw dL  =  int |phi'| dv."""
    E0 = eos._require_cutoff()
    pref = 2.0 * np.pi * eos.c_l * eos.delta / E0
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi_prime(a) * om, 0.5)
    return pref * r ** (2.0 * eos.l) * np.exp(2.0 * y) * val


def moment_phiprime_w2(eos: EquationOfState, r, y):
    """(pi/r^2) * iint w^2 |phi'| dw dL."""
    E0 = eos._require_cutoff()
    pref = 2.0 * np.pi * eos.d_l * eos.delta / E0
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi_prime(a) * om, 1.5)
    return pref * r ** (2.0 * eos.l) * np.exp(2.0 * y) * val


def moment_phiprime_eps2(eos: EquationOfState, r, y):
    """(pi/r^2) * iint (1 + w^2 + L/r^2) |phi'| dw dL.

    Multiplying by exp(2*mu0) gives int |phi'| E^2 dv.
    """
    E0 = eos._require_cutoff()
    pref = 2.0 * np.pi * eos.c_l * eos.delta / E0
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    val = _alpha_integral(eos, r, y, lambda a, om: eos.Phi_prime(a) * om**3, 0.5)
    return pref * r ** (2.0 * eos.l) * np.exp(4.0 * y) * val
