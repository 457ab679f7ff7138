"""Two-time thermal covariance and the propagated-noise kernels derived from it.

The bath force enters phase space through the momentum row only, so the
noise-driven part of the coordinates is

    u(t) = int_0^t Phi(t - s) p_hat xi(s) ds,   p_hat = (0, 1).

On the grid the force is represented by its cell averages ``xi_c`` over
``[t_c, t_{c+1})``, whose covariance ``C_{|c-d|}`` is the triangle-weighted
average of the noise kernel (``KernelTable.nu_cell``).  With

    b_j = int_{(j-1) dt}^{j dt} Phi(s) p_hat ds = (int g, m (g_j - g_{j-1}))

the covariance is the exact bilinear form ``sigma(t_a, t_b) = sum b_{a-c} C_{c-d} b_{b-d}^T``,
which is also exactly what the Monte Carlo oracle samples.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import CovarianceError
from .opalg import derivative
from .propagator import phi_rel, phi_rel_row

X_HAT = np.array([1.0, 0.0])
P_HAT = np.array([0.0, 1.0])


def cell_integrals(f, fdot, dt):
    """Cell integrals of a sampled vector function and of its derivative.

    Parameters
    ----------
    f, fdot : ndarray, shape (n+1, 2)
        Samples of a smooth function and its derivative at grid times.

    Returns
    -------
    b, bdot : ndarray, shape (n+1, 2)
        Row ``j`` integrates over ``[(j-1) dt, j dt]`` (Hermite-corrected
        trapezoid for ``f``, exact difference for ``fdot``); row 0 is zero.
    """
    b = np.zeros_like(f)
    bdot = np.zeros_like(f)
    b[1:] = 0.5 * dt * (f[1:] + f[:-1]) + dt**2 / 12 * (fdot[:-1] - fdot[1:])
    bdot[1:] = f[1:] - f[:-1]
    return b, bdot


def response_samples(prop):
    """Samples of ``Phi p_hat`` and ``Phidot p_hat`` on the grid; two arrays of shape (n+1, 2)."""
    m = prop.model.mass
    f = np.stack([prop.g, m * prop.gdot], axis=1)
    fdot = np.stack([prop.gdot, m * prop.gddot], axis=1)
    return f, fdot


def cell_response(prop):
    """Cell integrals of ``Phi p_hat`` and ``Phidot p_hat``; see :func:`cell_integrals`."""
    m = prop.model.mass
    f, fdot = response_samples(prop)
    b, bdot = cell_integrals(f, fdot, prop.grid.dt)
    # the momentum component integrates exactly
    b[1:, 1] = m * (prop.g[1:] - prop.g[:-1])
    return b, bdot


def noise_response(prop):
    """Response tuple ``(b, bdot, f, fdot)`` of the bath force, for :func:`equal_time_cross`."""
    return (*cell_response(prop), *response_samples(prop))


def response_matrix(b):
    """Lower-triangular Toeplitz map from cell noise to grid coordinates.

    ``X[i][a, c] = b[a - c, i]`` for ``c < a``; shape (2, n+1, n).
    """
    n1 = b.shape[0]
    out = np.zeros((2, n1, n1 - 1))
    for i in range(2):
        col = b[:, i]
        out[i] = toeplitz(col, np.zeros(n1))[:, :-1]
    return out


@dataclass
class CovarianceTable:
    """Thermal covariance on the full two-time grid.

    Attributes
    ----------
    sigma : ndarray, shape (n+1, n+1, 2, 2)
        ``sigma[a, b] = sigma_T(t_a, t_b)``; ``sigma[b, a] == sigma[a, b].T``.
    sigma_dot : ndarray, shape (n+1, 2, 2)
        ``d/dt sigma_T(t, t)`` from differentiation under the integral.
    """

    grid: object
    sigma: np.ndarray
    sigma_dot: np.ndarray

    @property
    def equal_time(self):
        idx = np.arange(self.sigma.shape[0])
        return self.sigma[idx, idx]

    def min_eigenvalue_ratio(self):
        """Smallest eigenvalue of ``sigma(t,t)`` relative to its trace, over the grid."""
        et = self.equal_time[1:]
        ev = np.linalg.eigvalsh(et)[:, 0]
        tr = np.trace(et, axis1=1, axis2=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(tr > 0, ev / tr, 0.0)
        return float(ratio.min()) if ratio.size else 0.0


def bilinear(xa, c, xb):
    """``sum_{c,d} xa[i][a,c] C[c,d] xb[j][b,d]`` for all components; shape (A, B, 2, 2)."""
    out = np.empty((xa.shape[1], xb.shape[1], 2, 2))
    for i in range(2):
        left = xa[i] @ c
        for j in range(2):
            out[:, :, i, j] = left @ xb[j].T
    return out


def sigma_table(prop, kernels):
    """Two-time thermal covariance and its equal-time derivative.

    Parameters
    ----------
    prop : PropagatorTable
    kernels : KernelTable
        Must share the grid of ``prop``.

    Returns
    -------
    CovarianceTable
    """
    if kernels.grid != prop.grid:
        raise ValueError("kernel table and propagator table must share the grid")
    resp = noise_response(prop)
    cmat = toeplitz(kernels.nu_cell[: prop.grid.n])
    x = response_matrix(resp[0])
    sigma = bilinear(x, cmat, x)
    sigma = 0.5 * (sigma + np.swapaxes(np.swapaxes(sigma, 0, 1), 2, 3))
    _, sdot = equal_time_cross(resp, resp, kernels)
    return CovarianceTable(prop.grid, sigma, sdot)


def equal_time_cross(resp_a, resp_b, kernels):
    """Equal-time cross covariance of two noise responses and its time derivative.

    Each response is ``(b, bdot, f, fdot)``: cell integrals of the response
    function and of its derivative (see :func:`cell_integrals`) and grid
    samples of the response function and its derivative.  For
    ``u_a(t) = int_0^t f_a(t - s) xi(s) ds`` this returns ``E[u_a u_b^T]`` and
    its derivative, both of shape (n+1, 2, 2).
    """
    b_a, f_a = resp_a[0], resp_a[2]
    b_b, f_b = resp_b[0], resp_b[2]
    n = b_a.shape[0] - 1
    cmat = toeplitz(kernels.nu_cell[:n])
    xa, xb = response_matrix(b_a), response_matrix(b_b)
    cov = _diag_bilinear(xa, cmat, xb)
    dt = kernels.grid.dt
    deriv = hermite_double_integral(_hermite_nodes(resp_a, dt, 1), _hermite_nodes(resp_b, dt, 0), kernels)
    deriv += hermite_double_integral(_hermite_nodes(resp_a, dt, 0), _hermite_nodes(resp_b, dt, 1), kernels)
    beta_a = boundary_vector(resp_a, kernels)
    beta_b = boundary_vector(resp_b, kernels)
    deriv += np.einsum("i,aj->aij", f_a[0], beta_b) + np.einsum("ai,j->aij", beta_a, f_b[0])
    return cov, deriv


def _hermite_nodes(resp, dt, order):
    """Hermite nodal values of the response (``order=0``) or its derivative (``order=1``).

    Returns shape (n, 4, 2): per cell ``[v(t_{j-1}), v'(t_{j-1}), v(t_j), v'(t_j)]``.
    """
    f, fdot = resp[2], resp[3]
    if order == 0:
        val, slope = f, fdot
    else:
        val, slope = fdot, derivative(fdot, dt, 1, 0, accuracy=4)
    return np.stack([val[:-1], slope[:-1], val[1:], slope[1:]], axis=1)


def hermite_double_integral(nodes_a, nodes_b, kernels):
    """``J(t) = int_0^t int_0^t a(r) nu(r - r') b(r')^T dr dr'`` on the grid; shape (n+1, 2, 2).

    ``a`` and ``b`` are given by Hermite nodal values (see :func:`_hermite_nodes`);
    ``J`` grows by one row and one column of cell pairs per step.
    """
    w = kernels.nu_pair_moments
    n = nodes_a.shape[0]
    out = np.zeros((n + 1, 2, 2))
    if w is None:
        return out
    acc = np.zeros((2, 2))
    for a in range(1, n + 1):
        lags = a - np.arange(1, a + 1)  # lag of the new cell a against cells 1..a
        new_a = nodes_a[a - 1]
        acc += np.einsum("pi,lpq,lqk->ik", new_a, w[lags], nodes_b[:a])
        if a > 1:
            lag_old = lags[:-1]
            acc += np.einsum("jpi,jqp,qk->ik", nodes_a[: a - 1], w[lag_old], nodes_b[a - 1])
        out[a] = acc
    return out


def _diag_bilinear(xa, c, xb):
    out = np.empty((xa.shape[1], 2, 2))
    for i in range(2):
        left = xa[i] @ c
        for j in range(2):
            out[:, i, j] = np.einsum("ac,ac->a", left, xb[j])
    return out


def boundary_vector(resp, kernels):
    """Noise-response overlap ``int_0^t nu(r) f(r) dr`` per grid time; shape (n+1, 2).

    Uses the per-cell Hermite moments of the continuous kernel, so the
    zero-lag behaviour of ``nu`` is resolved rather than cell-averaged.  For
    white noise ``c delta(r)`` the endpoint delta contributes ``c f(0) / 2``.
    """
    _, _, f, fdot = resp
    out = np.zeros_like(f)
    if kernels.is_local:
        out[1:] = 0.5 * kernels.white_noise * f[0]
        return out
    mom = kernels.nu_moments
    if mom is None:
        return out
    cells = (
        mom[1:, 0, None] * f[:-1] + mom[1:, 1, None] * fdot[:-1]
        + mom[1:, 2, None] * f[1:] + mom[1:, 3, None] * fdot[1:]
    )
    out[1:] = np.cumsum(cells, axis=0)
    return out


def sigma_T(cov, t1, t2):
    """``sigma_T(t1, t2)`` (grid times or indices)."""
    i, j = _idx(cov, t1), _idx(cov, t2)
    return cov.sigma[i, j]


def sigma_dot(cov, t):
    return cov.sigma_dot[_idx(cov, t)]


def _idx(cov, t):
    return t if isinstance(t, (int, np.integer)) else cov.grid.index(t)


def check_psd(cov, tol=1e-10):
    """Raise :class:`CovarianceError` if any equal-time block is not PSD up to ``tol * trace``."""
    et = cov.equal_time
    ev = np.linalg.eigvalsh(et)[:, 0]
    tr = np.trace(et, axis1=1, axis2=2)
    bad = np.nonzero(ev < -tol * np.maximum(tr, 1e-300))[0]
    if bad.size:
        k = int(bad[0])
        raise CovarianceError(
            f"sigma_T(t,t) not positive semidefinite at t={cov.grid.t[k]:g} (eigenvalue {ev[k]:.3g})"
        )


def delta1_coeff(prop, cov, tau, t):
    """Coefficient row ``d = x_hat^T [Phi(tau,t) sigma(t,t) - sigma(tau,t)]``; shape (2,)."""
    i, k = _idx(cov, tau), _idx(cov, t)
    if i > k:
        raise ValueError("delta1_coeff needs tau <= t")
    if i == k:
        return np.zeros(2)
    return X_HAT @ (phi_rel(prop, i, k) @ cov.sigma[k, k] - cov.sigma[i, k])


def delta1_row(prop, cov, t):
    """``d(tau_i, t)`` for all grid ``tau_i <= t``; shape (k+1, 2)."""
    k = _idx(cov, t)
    rel = phi_rel_row(prop, k)
    out = np.einsum("iab,bc->iac", rel, cov.sigma[k, k])[:, 0, :] - cov.sigma[: k + 1, k, 0, :]
    out[k] = 0.0
    return out


def s_kernel(prop, cov, tau, t):
    """Variance kernel ``s(tau, t)`` (see :func:`s_row`)."""
    i, k = _idx(cov, tau), _idx(cov, t)
    if i > k:
        raise ValueError("s_kernel needs tau <= t")
    if i == k:
        return 0.0
    return float(s_row(prop, cov, k)[i])


def s_row(prop, cov, t):
    """``s(tau_i, t)`` for all grid ``tau_i <= t``.

    ``s = x^T [sigma(tau,tau) + A sigma(t,t) A^T] x - 2 x^T A sigma(t,tau) x`` with
    ``A = Phi(tau, t)``.  This equals the variance of
    ``x_hat^T (u(tau) - A u(t))``, the propagated noise seen at ``tau``.
    """
    k = _idx(cov, t)
    rel = phi_rel_row(prop, k)
    ax = rel[:, 0, :]  # x_hat^T A
    idx = np.arange(k + 1)
    own = cov.sigma[idx, idx, 0, 0]
    back = np.einsum("ia,ab,ib->i", ax, cov.sigma[k, k], ax)
    cross = np.einsum("ia,ia->i", ax, cov.sigma[k, : k + 1, :, 0])
    out = own + back - 2 * cross
    out[k] = 0.0
    return out
