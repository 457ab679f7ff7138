"""Composite quadrature weights on uniform grids.

The trapezoid rule with endpoint corrections derived from the Euler-Maclaurin
expansion (Gregory-type rules) keeps interior weights equal to one, which
makes convolutions cheap while reaching high order for smooth integrands.
"""

from functools import lru_cache

import numpy as np
from scipy import special


@lru_cache(maxsize=None)
def _end_corrections(q):
    """Corrections ``delta_i`` (``i < q``) added to unit weights at one end."""
    rows = np.vander(np.arange(q, dtype=float), q, increasing=True).T
    rhs = np.zeros(q)
    rhs[0] = -0.5
    for r in range(1, q, 2):
        rhs[r] = special.bernoulli(r + 1)[r + 1] / (r + 1)
    return np.linalg.solve(rows, rhs)


@lru_cache(maxsize=None)
def _newton_cotes(k):
    nodes = np.arange(k + 1, dtype=float)
    rows = np.vander(nodes, k + 1, increasing=True).T
    rhs = k ** np.arange(1, k + 2) / np.arange(1, k + 2)
    return np.linalg.solve(rows, rhs)


def uniform_weights(k, order=8):
    """Weights (unit spacing) for integrating samples ``f_0 .. f_k``.

    Parameters
    ----------
    k : int
        Number of intervals.
    order : int
        Number of corrected weights at each end; the rule integrates
        polynomials of degree ``order - 1`` exactly once ``k >= 2*order - 1``.
        Shorter ranges use closed Newton-Cotes weights (at most 8 intervals)
        or a reduced correction.

    Returns
    -------
    ndarray, shape (k+1,)
    """
    if k <= 0:
        return np.zeros(k + 1)
    if k <= min(order, 8):
        return _newton_cotes(k).copy()
    q = min(order, (k + 1) // 2)
    w = np.ones(k + 1)
    d = _end_corrections(q)
    w[:q] += d
    w[k - q + 1 :] += d[::-1]
    return w


def cumulative_convolution(kernel, f, dt, order=8):
    """``int_0^t_k kernel(t_k - u) f(u) du`` for every grid index ``k``."""
    n = len(f)
    out = np.zeros(n)
    for k in range(1, n):
        out[k] = dt * np.dot(uniform_weights(k, order), kernel[k::-1] * f[: k + 1])
    return out


def integrate_rows(values, dt, order=8, axis=0):
    """Integrate uniformly sampled values along ``axis`` over the full range."""
    values = np.moveaxis(np.asarray(values), axis, 0)
    w = uniform_weights(values.shape[0] - 1, order)
    return dt * np.tensordot(w, values, axes=(0, 0))
