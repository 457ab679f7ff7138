"""Green's function of the damped linear Langevin equation and phase-space propagators.

The Green's function solves

    g'' + omega^2 g + 2 int_0^t gamma(t - u) g'(u) du = 0,   g(0) = 0, g'(0) = 1/m,

and the homogeneous propagator maps initial phase-space coordinates to their
mean at time ``t``::

    Phi(t) = [[m g', g], [m^2 g'', m g']].

For nonlocal kernels the integro-differential equation is stepped with an
implicit trapezoid rule (product trapezoid for the memory term) on a ladder
of nested grids and Richardson-extrapolated down to the target grid.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BarycentricInterpolator

from .bath import damping_kernel, damping_kernel_derivative
from .quadrature import cumulative_convolution
from .errors import ConvergenceError, SingularPropagatorError, StepSizeError

log = logging.getLogger(__name__)

COND_LIMIT = 1e10
STEP_LIMIT = 0.1


@dataclass
class PropagatorTable:
    """Green's function derivatives and the propagator on a uniform grid.

    Attributes
    ----------
    grid : TimeGrid
    g, gdot, gddot, gdddot : ndarray, shape (n+1,)
        Green's function and its first three derivatives.
    phi, phidot : ndarray, shape (n+1, 2, 2)
        ``Phi(t)`` and its time derivative.
    richardson_delta : float
        Largest change in ``g`` between the last two extrapolation levels
        (zero for closed-form solutions).
    """

    model: object
    grid: object
    g: np.ndarray
    gdot: np.ndarray
    gddot: np.ndarray
    gdddot: np.ndarray
    phi: np.ndarray = None
    phidot: np.ndarray = None
    richardson_delta: float = 0.0

    def __post_init__(self):
        if self.phi is None:
            build_phi(self)
        self._inv = None

    @property
    def t(self):
        return self.grid.t

    @property
    def phi_inv(self):
        """``Phi(t)^-1`` for every grid time, with the conditioning guard applied."""
        if self._inv is None:
            cond = np.linalg.cond(self.phi)
            bad = np.nonzero(~(cond < COND_LIMIT))[0]
            inv = np.full_like(self.phi, np.nan)
            good = cond < COND_LIMIT
            inv[good] = np.linalg.inv(self.phi[good])
            self._inv = inv
            self._bad = bad
            self._cond = cond
        return self._inv

    def check_invertible(self, idx):
        self.phi_inv
        idx = np.atleast_1d(idx)
        bad = np.intersect1d(idx, self._bad)
        if bad.size:
            k = int(bad[0])
            raise SingularPropagatorError(self.grid.t[k], self._cond[k])

    @property
    def det(self):
        return np.linalg.det(self.phi)


def check_step(model, dt):
    """Raise :class:`StepSizeError` unless ``dt * fastest rate <= 0.1``."""
    rate = model.fastest_rate
    if dt * rate > STEP_LIMIT * (1 + 1e-12):
        raise StepSizeError(
            f"dt={dt:g} too large: dt*max(omega, gamma0, cutoff)={dt * rate:.3g} exceeds "
            f"{STEP_LIMIT}; use dt <= {STEP_LIMIT / rate:.3g}"
        )


def greens_function(model, grid, levels=3, tol=1e-4):
    """Green's function and propagator table for ``model`` on ``grid``.

    Parameters
    ----------
    model : SpectralModel
    grid : TimeGrid
    levels : int
        Number of nested grids (``dt, dt/2, ...``) used for Richardson
        extrapolation of the nonlocal solver.  Each level removes one even
        power of ``dt`` from the error.
    tol : float
        Convergence guard: the change between the last two extrapolation
        levels, relative to ``max|g|``, must stay below this.

    Returns
    -------
    PropagatorTable
    """
    check_step(model, grid.dt)
    if model.is_local or model.gamma0 == 0:
        g = _damped_oscillator(model, grid.t)
        return PropagatorTable(model, grid, *g)
    cols = []
    for lev in range(levels):
        fine = grid.refine(2**lev)
        g, v, a, j = _volterra_trapezoid(model, fine)
        cols.append(np.stack([g, v, a, j])[:, :: 2**lev])
    tableau = [cols]
    for order in range(1, levels):
        prev = tableau[-1]
        fac = 4.0**order
        tableau.append([(fac * prev[i + 1] - prev[i]) / (fac - 1) for i in range(len(prev) - 1)])
    best = tableau[-1][0]
    if levels > 1:
        second = tableau[-2][-1]
        delta = float(np.max(np.abs(best[0] - second[0])))
    else:
        delta = 0.0
    scale = float(np.max(np.abs(best[0])))
    if delta > tol * scale:
        raise ConvergenceError(
            f"Volterra solution not converged: extrapolation levels differ by {delta:.3g} "
            f"(> {tol:g} max|g|); reduce dt"
        )
    g, v, a, j = best
    g[0], v[0], a[0] = 0.0, 1.0 / model.mass, 0.0
    return PropagatorTable(model, grid, g, v, a, j, richardson_delta=delta)


def _volterra_trapezoid(model, grid):
    """Second-order implicit trapezoid solution of the Green's-function equation."""
    n, dt = grid.n, grid.dt
    w2 = model.omega**2
    gam = damping_kernel(model, grid.t)
    dgam = damping_kernel_derivative(model, grid.t)
    g = np.zeros(n + 1)
    v = np.zeros(n + 1)
    a = np.zeros(n + 1)
    v[0] = 1.0 / model.mass
    denom = 1 + dt**2 * w2 / 4 + dt**2 * gam[0] / 2
    for k in range(1, n + 1):
        # memory sum without the (unknown) v_k endpoint
        s = dt * (0.5 * gam[k] * v[0] + np.dot(gam[k - 1 : 0 : -1], v[1:k]))
        v[k] = (v[k - 1] + 0.5 * dt * a[k - 1] - 0.5 * dt * w2 * (g[k - 1] + 0.5 * dt * v[k - 1]) - dt * s) / denom
        g[k] = g[k - 1] + 0.5 * dt * (v[k - 1] + v[k])
        a[k] = -w2 * g[k] - 2 * (s + 0.5 * dt * gam[0] * v[k])
    # third derivative from the differentiated equation
    conv = trapezoid_convolution(dgam, v, dt)
    j = -w2 * v - 2 * (gam[0] * v + conv)
    return g, v, a, j


def trapezoid_convolution(kernel, f, dt):
    """``int_0^t_k kernel(t_k - u) f(u) du`` by the trapezoid rule for every ``k``."""
    n = len(f)
    full = np.convolve(kernel, f)[:n] * dt
    full -= 0.5 * dt * (kernel * f[0] + kernel[0] * f)
    full[0] = 0.0
    return full


def _damped_oscillator(model, t):
    """Closed-form ``g`` and derivatives for ``g'' + 2 gamma0 g' + omega^2 g = 0``."""
    m, g0, w = model.mass, model.gamma0, model.omega
    t = np.asarray(t, dtype=float)
    disc = complex(g0**2 - w**2)
    kappa = np.sqrt(disc)
    out = []
    if abs(kappa) < 1e-9 * max(w, g0, 1e-300):
        lam = -g0
        e = np.exp(lam * t)
        for k in range(4):
            out.append((lam**k * t + k * lam ** (k - 1) if k else t) * e / m)
        return out
    lp, lm = -g0 + kappa, -g0 - kappa
    ep, em = np.exp(lp * t), np.exp(lm * t)
    for k in range(4):
        out.append(((lp**k * ep - lm**k * em) / (m * (lp - lm))).real)
    return out


def build_phi(table):
    """Fill ``table.phi`` and ``table.phidot`` from the Green's-function derivatives."""
    m = table.model.mass
    g, v, a, j = table.g, table.gdot, table.gddot, table.gdddot
    phi = np.empty((len(g), 2, 2))
    phi[:, 0, 0] = m * v
    phi[:, 0, 1] = g
    phi[:, 1, 0] = m**2 * a
    phi[:, 1, 1] = m * v
    phid = np.empty_like(phi)
    phid[:, 0, 0] = m * a
    phid[:, 0, 1] = v
    phid[:, 1, 0] = m**2 * j
    phid[:, 1, 1] = m * a
    phi[0] = np.eye(2)
    table.phi = phi
    table.phidot = phid
    return table


def volterra_residual(table):
    """Residual of the Green's-function equation on the stored solution.

    The memory integral uses an end-corrected trapezoid rule of high order,
    independent of the second-order rule used by the solver.  Returned in
    units of ``m omega^2 max|g|``.
    """
    model = table.model
    if model.is_local:
        res = table.gddot + 2 * model.gamma0 * table.gdot + model.omega**2 * table.g
    else:
        dt = table.grid.dt
        gam = damping_kernel(model, table.t)
        mem = cumulative_convolution(gam, table.gdot, dt)
        # short ranges: interpolate g' through the first grid points instead
        npts = min(len(table.g), 17)
        nodes = table.t[:npts]
        poly = BarycentricInterpolator(nodes, table.gdot[:npts])
        x, w = np.polynomial.legendre.leggauss(24)
        for k in range(1, npts - 1):
            u = 0.5 * table.t[k] * (x + 1)
            mem[k] = 0.5 * table.t[k] * np.dot(w, damping_kernel(model, table.t[k] - u) * poly(u))
        res = table.gddot + model.omega**2 * table.g + 2 * mem
    scale = max(model.omega**2, 1e-300) * np.max(np.abs(table.g))
    return np.abs(res) / scale


def _index(table, time):
    return time if isinstance(time, (int, np.integer)) else table.grid.index(time)


def phi_rel(table, tau, t):
    """Relative propagator ``Phi(tau) Phi(t)^-1``.

    ``tau`` and ``t`` are grid times (floats) or grid indices (ints).
    """
    i, k = _index(table, tau), _index(table, t)
    if i == k:
        return np.eye(2)
    table.check_invertible(k)
    return table.phi[i] @ table.phi_inv[k]


def phi_rel_row(table, t):
    """``Phi(tau_i, t)`` for every grid ``tau_i <= t``; shape (k+1, 2, 2)."""
    k = _index(table, t)
    table.check_invertible(k)
    row = table.phi[: k + 1] @ table.phi_inv[k]
    row[k] = np.eye(2)
    return row


def phi_final(table, tau, tau_prime, t):
    """Final-value propagator ``theta(tau-tau') Phi(tau-tau') - Phi(tau,t) Phi(t-tau')``.

    ``theta(0) = 1``.
    """
    i, j, k = _index(table, tau), _index(table, tau_prime), _index(table, t)
    if not (0 <= i <= k and 0 <= j <= k):
        raise ValueError("phi_final needs 0 <= tau, tau' <= t")
    out = -phi_rel(table, i, k) @ table.phi[k - j]
    if i >= j:
        out = out + table.phi[i - j]
    return out


def phi_final_matrix(table, tau, t):
    """``Phi_f(tau, tau'_j)`` for all grid ``tau'_j <= t``; shape (k+1, 2, 2)."""
    i, k = _index(table, tau), _index(table, t)
    rel = phi_rel(table, i, k)
    out = -np.einsum("ab,jbc->jac", rel, table.phi[k::-1])
    out[: i + 1] += table.phi[i::-1]
    return out
