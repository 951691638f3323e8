"""Gauss-Legendre quadrature helpers used throughout the toolkit.

All quadratures in the pipeline are fixed-order Gauss rules; orders are part
of the run configuration, so results are deterministic.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _gauss_unit(n: int):
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


def gauss_nodes(n, a, b):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _gauss_unit(n)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    if np.ndim(half) == 0:
        return mid + half * x, half * w
    # broadcast: panels along the leading axes, nodes along the last one
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w
    return nodes, weights


def gauss_integrate(f, a, b, n=64):
    """Integrate a vectorized callable over [a, b] with an n-point rule."""
    x, w = gauss_nodes(n, a, b)
    return np.sum(w * f(x), axis=-1)


def uniform_theta_nodes(n):
    """Uniform periodic grid on [0, 1) used for angle-variable quadrature.

    The trapezoidal rule on this grid (equal weights 1/n) is spectrally
    accurate for smooth 1-periodic integrands.
    """
    return np.arange(n) / n
