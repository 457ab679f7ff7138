"""Independent reference calculations used to validate the main pipeline.

* Monte Carlo: Gaussian bath-noise draws on the time grid
  (:func:`sample_noise`) and classical Langevin trajectories driven by them
  (:func:`integrate_langevin`, :func:`run_langevin`), with ensemble
  covariance estimators that report standard errors.
* Closed forms: numerical Laplace inversion of the Green's function
  (:func:`talbot_greens_function`) and the exact propagator of the
  Lorentz-cutoff model through its Markovian embedding
  (:func:`embedded_propagator`).
* Novikov averaging: continuous-time propagated-noise coefficients from
  the noise spectrum (:func:`propagated_noise_reference`).
* Operator identities: Wick-contraction enumeration of the propagated-noise
  moment operators (:func:`wick_delta`) and conditional Gaussian moments
  (:func:`conditional_gaussian_moment`).
* The covariance ODE of a Gaussian under a quadratic generator
  (:func:`covariance_ode`).

The noise is drawn as cell averages over ``[t_c, t_{c+1})`` with the
covariance ``KernelTable.nu_cell``, the same discretization the covariance
module integrates exactly, so Monte Carlo and quadrature differ only by
sampling error and the trajectory integrator's truncation error.

The Langevin equation is written with the velocity in the memory term,

    m x'' + V'(x) + 2 m int_0^t gamma(t - s) x'(s) ds + 2 m gamma(t) x(0) = xi(t),

which is the form whose homogeneous solution is the propagator ``Phi``.
"""

import logging
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .bath import Family, damping_kernel
from .errors import CovarianceError, NumericalError
from .opalg import DEFAULT_CAP, PhaseOp

log = logging.getLogger(__name__)

JITTER_LIMIT = 1e-10
DEFAULT_CHUNK = 4096
BLOWUP_LIMIT = 1e8


# -- noise sampling ----------------------------------------------------------------


@dataclass
class NoiseEnsemble:
    """Draws of the cell-averaged bath force.

    Attributes
    ----------
    grid : TimeGrid
    draws : ndarray, shape (n_samples, grid.n)
        ``draws[r, c]`` is the average of ``xi`` over ``[t_c, t_{c+1})`` in draw ``r``.
    seed : int or None
    """

    grid: object
    draws: np.ndarray
    seed: object = None

    @property
    def n_samples(self):
        return self.draws.shape[0]


def noise_factor(covariance):
    """Factor ``L`` with ``L L^T = C`` for a positive semidefinite covariance.

    Cholesky is tried first, with diagonal jitter raised in decades up to
    ``1e-10 trace(C)``; a semidefinite matrix falls back to the symmetric
    eigendecomposition with small negative eigenvalues clipped.

    Raises
    ------
    CovarianceError
        If ``C`` has an eigenvalue below ``-1e-10 trace(C)``.
    """
    c = np.asarray(covariance, dtype=float)
    trace = float(np.trace(c))
    if trace == 0:
        return np.zeros_like(c)
    if trace < 0:
        raise CovarianceError(f"noise covariance has negative trace {trace:.3g}")
    for level in (0.0, 1e-14, 1e-12, JITTER_LIMIT):
        try:
            return np.linalg.cholesky(c + level * trace * np.eye(len(c)))
        except np.linalg.LinAlgError:
            continue
    vals, vecs = np.linalg.eigh(c)
    if vals[0] < -JITTER_LIMIT * trace:
        raise CovarianceError(
            f"noise covariance is indefinite: eigenvalue {vals[0]:.3g} below "
            f"-{JITTER_LIMIT:g} x trace ({trace:.3g}); the kernel table is not a valid covariance"
        )
    log.info("noise covariance factored by eigendecomposition (min eigenvalue %.3g)", vals[0])
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _draw(factor, n, rng):
    white = rng.standard_normal((n, factor.shape[1]))
    return white @ factor.T


def sample_noise(kernels, grid, n, seed=None):
    """Draw ``n`` realizations of the cell-averaged bath force on ``grid``.

    Parameters
    ----------
    kernels : KernelTable
        Tabulated on ``grid``; its ``nu_cell`` defines the covariance.
    n : int
    seed : int, optional
        Seeds :func:`numpy.random.default_rng`; identical seeds give identical draws.
    """
    if kernels.grid != grid:
        raise ValueError("kernel table and noise grid differ")
    factor = noise_factor(kernels.noise_matrix())
    return NoiseEnsemble(grid, _draw(factor, n, np.random.default_rng(seed)), seed)


def noise_covariance_estimate(ensemble, pairs):
    """Sample covariance of the draws at cell pairs, with standard errors.

    Returns
    -------
    estimate, stderr : ndarray, shape (len(pairs),)
    """
    draws = ensemble.draws
    centered = draws - draws.mean(axis=0)
    est, err = [], []
    for i, j in pairs:
        prod = centered[:, i] * centered[:, j]
        est.append(prod.mean())
        err.append(prod.std(ddof=1) / np.sqrt(len(prod)))
    return np.array(est), np.array(err)


# -- Langevin trajectories -----------------------------------------------------------


def potential_force(model, vprime=None):
    """``V'(x)`` as a :class:`numpy.polynomial.Polynomial`.

    ``vprime`` may be a polynomial, a coefficient sequence ``(c0, c1, ...)``
    meaning ``sum c_k x^k``, or ``None`` for the harmonic force ``m omega^2 x``.
    """
    if vprime is None:
        return np.polynomial.Polynomial([0.0, model.mass * model.omega**2])
    if isinstance(vprime, np.polynomial.Polynomial):
        return vprime
    return np.polynomial.Polynomial(np.asarray(vprime, dtype=float))


@dataclass
class TrajectoryEnsemble:
    """Phase-space trajectories kept at selected grid indices.

    Attributes
    ----------
    indices : ndarray of int
        Grid indices of the kept times.
    times : ndarray
    z : ndarray, shape (n_samples, len(indices), 2)
        ``(x, p)`` per draw and kept time.
    seed : object
    """

    indices: np.ndarray
    times: np.ndarray
    z: np.ndarray
    seed: object = None

    @property
    def n_samples(self):
        return self.z.shape[0]

    def column(self, index):
        """Samples at grid index ``index``; shape (n_samples, 2)."""
        pos = np.nonzero(self.indices == index)[0]
        if not pos.size:
            raise KeyError(f"grid index {index} was not kept")
        return self.z[:, pos[0]]


def _initial_state(z0, n):
    z0 = np.asarray(z0, dtype=float)
    if z0.ndim == 1:
        z0 = np.broadcast_to(z0, (n, 2))
    if z0.shape != (n, 2):
        raise ValueError(f"initial state must have shape (2,) or ({n}, 2)")
    return z0[:, 0].copy(), z0[:, 1].copy()


def _guard(x, p, t):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise NumericalError(f"Langevin trajectory became non-finite at t={t:g}; reduce dt")
    if max(np.abs(x).max(), np.abs(p).max()) > BLOWUP_LIMIT:
        raise NumericalError(
            f"Langevin trajectory exceeded |z| > {BLOWUP_LIMIT:g} at t={t:g} (energy blow-up); reduce dt"
        )


def integrate_langevin(model, ensemble, z0=(0.0, 0.0), vprime=None, keep=None):
    """Integrate the Langevin equation for every noise draw.

    The Lorentz-cutoff family is integrated through its Markovian
    embedding with an auxiliary memory variable ``y`` (``y(0) = gamma(0) x(0)``
    carries the slip term), the local family with the initial momentum kick
    ``p(0+) = p(0) - 2 m gamma0 x(0)`` followed by an ordinary ODE; both by
    classical RK4 with the noise held at its cell average.  Other families use
    a second-order predictor-corrector with the memory integral by the
    product trapezoid rule.

    Parameters
    ----------
    model : SpectralModel
    ensemble : NoiseEnsemble
    z0 : array_like, shape (2,) or (n_samples, 2)
        Initial ``(x, p)``.
    vprime : polynomial spec, optional
        See :func:`potential_force`.
    keep : sequence of int, optional
        Grid indices to store (default: all).

    Returns
    -------
    TrajectoryEnsemble

    Raises
    ------
    NumericalError
        If a trajectory becomes non-finite or exceeds ``1e8`` (blow-up guard).
    """
    grid = ensemble.grid
    keep = np.arange(grid.n + 1) if keep is None else np.unique(np.asarray(keep, dtype=int))
    if keep.size and (keep.min() < 0 or keep.max() > grid.n):
        raise ValueError("kept indices must lie on the grid")
    force = potential_force(model, vprime)
    x, p = _initial_state(z0, ensemble.n_samples)
    xi = ensemble.draws
    if model.family is Family.OHMIC_LORENTZ and model.gamma0 > 0:
        out = _lorentz_rk4(model, force, grid, xi, x, p, keep)
    elif model.is_local or model.gamma0 == 0:
        out = _local_rk4(model, force, grid, xi, x, p, keep)
    else:
        out = _memory_trapezoid(model, force, grid, xi, x, p, keep)
    return TrajectoryEnsemble(keep, grid.t[keep], out, ensemble.seed)


def _store(out, keep, k, x, p):
    pos = np.searchsorted(keep, k)
    if pos < len(keep) and keep[pos] == k:
        out[:, pos, 0] = x
        out[:, pos, 1] = p


def _rk4(rhs, state, dt, xi):
    k1 = rhs(state, xi)
    k2 = rhs([s + 0.5 * dt * d for s, d in zip(state, k1)], xi)
    k3 = rhs([s + 0.5 * dt * d for s, d in zip(state, k2)], xi)
    k4 = rhs([s + dt * d for s, d in zip(state, k3)], xi)
    return [s + dt / 6 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4)]


def _lorentz_rk4(model, force, grid, xi, x, p, keep):
    m, lam = model.mass, model.cutoff
    gamma_zero = 0.5 * model.gamma0 * lam
    out = np.empty((len(x), len(keep), 2))
    _store(out, keep, 0, x, p)
    y = gamma_zero * x

    def rhs(state, f):
        xs, ps, ys = state
        return [ps / m, -force(xs) - 2 * m * ys + f, -lam * ys + gamma_zero * ps / m]

    state = [x, p, y]
    for k in range(grid.n):
        state = _rk4(rhs, state, grid.dt, xi[:, k])
        _store(out, keep, k + 1, state[0], state[1])
        if (k + 1) % 64 == 0:
            _guard(state[0], state[1], grid.t[k + 1])
    _guard(state[0], state[1], grid.t[-1])
    return out


def _local_rk4(model, force, grid, xi, x, p, keep):
    m, g0 = model.mass, model.gamma0
    out = np.empty((len(x), len(keep), 2))
    _store(out, keep, 0, x, p)
    p = p - 2 * m * g0 * x

    def rhs(state, f):
        xs, ps = state
        return [ps / m, -force(xs) - 2 * g0 * ps + f]

    state = [x, p]
    for k in range(grid.n):
        state = _rk4(rhs, state, grid.dt, xi[:, k])
        _store(out, keep, k + 1, state[0], state[1])
        if (k + 1) % 64 == 0:
            _guard(state[0], state[1], grid.t[k + 1])
    _guard(state[0], state[1], grid.t[-1])
    return out


def _memory_trapezoid(model, force, grid, xi, x, p, keep):
    m, dt, n = model.mass, grid.dt, grid.n
    gam = damping_kernel(model, grid.t)
    out = np.empty((len(x), len(keep), 2))
    _store(out, keep, 0, x, p)
    x0 = x.copy()
    vel = np.empty((len(x), n + 1))
    vel[:, 0] = p / m

    def memory(k, v_end):
        # trapezoid of int_0^{t_k} gamma(t_k - s) v(s) ds with v(t_k) = v_end
        if k == 0:
            return np.zeros_like(v_end)
        inner = vel[:, 1:k] @ gam[k - 1 : 0 : -1] if k > 1 else 0.0
        return dt * (inner + 0.5 * gam[k] * vel[:, 0] + 0.5 * gam[0] * v_end)

    def accel(k, xs, vs, f):
        return (-force(xs) + f) / m - 2 * memory(k, vs) - 2 * gam[k] * x0

    v = vel[:, 0].copy()
    for k in range(n):
        f = xi[:, k]
        a = accel(k, x, v, f)
        x_pred = x + dt * v
        v_pred = v + dt * a
        a_pred = accel(k + 1, x_pred, v_pred, f)
        x = x + 0.5 * dt * (v + v_pred)
        v = v + 0.5 * dt * (a + a_pred)
        vel[:, k + 1] = v
        _store(out, keep, k + 1, x, m * v)
        if (k + 1) % 64 == 0:
            _guard(x, v, grid.t[k + 1])
    _guard(x, v, grid.t[-1])
    return out


def run_langevin(model, kernels, n, seed, z0=(0.0, 0.0), vprime=None, keep=None,
                 initial=None, chunk=DEFAULT_CHUNK):
    """Sample and integrate ``n`` trajectories in chunks, keeping selected times.

    Draws are generated chunk by chunk from child seeds of
    ``numpy.random.SeedSequence(seed)``, so memory stays bounded and a given
    ``(seed, chunk)`` pair reproduces the ensemble bit for bit.

    Parameters
    ----------
    initial : tuple (mean, covariance), optional
        Draw the initial state from this Gaussian (from the same chunk
        generator, before the noise) instead of using the fixed ``z0``.
    """
    grid = kernels.grid
    factor = noise_factor(kernels.noise_matrix())
    children = np.random.SeedSequence(seed).spawn(int(np.ceil(n / chunk)))
    parts = []
    keep_idx = None
    for c, child in enumerate(children):
        size = min(chunk, n - c * chunk)
        rng = np.random.default_rng(child)
        start = z0
        if initial is not None:
            start = rng.multivariate_normal(initial[0], initial[1], size=size)
        ens = NoiseEnsemble(grid, _draw(factor, size, rng), seed)
        traj = integrate_langevin(model, ens, start, vprime, keep)
        parts.append(traj.z)
        keep_idx = traj.indices
    return TrajectoryEnsemble(keep_idx, grid.t[keep_idx], np.concatenate(parts), seed)


# -- ensemble statistics -------------------------------------------------------------


def cross_covariance(a, b):
    """Sample cross-covariance ``E[(a - <a>)(b - <b>)^T]`` with standard errors.

    Parameters
    ----------
    a, b : ndarray, shape (n_samples, d)

    Returns
    -------
    estimate, stderr : ndarray, shape (d, d)
        The standard error is that of the mean of the centered products.
    """
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    prod = da[:, :, None] * db[:, None, :]
    n = len(prod)
    return prod.sum(axis=0) / (n - 1), prod.std(axis=0, ddof=1) / np.sqrt(n)


def equal_time_covariance(traj, index):
    """Covariance of ``z(t)`` across the ensemble at a kept grid index, with standard errors."""
    z = traj.column(index)
    return cross_covariance(z, z)


def two_time_covariance(traj, index_a, index_b):
    """``Cov(z(t_a), z(t_b))`` across the ensemble, with standard errors."""
    return cross_covariance(traj.column(index_a), traj.column(index_b))


def ensemble_moments(traj, index):
    """Mean and covariance of ``z`` at a kept grid index."""
    z = traj.column(index)
    return z.mean(axis=0), np.cov(z, rowvar=False)


def propagated_noise_estimate(traj, prop, index_tau, index_t, w=(1.0, 0.0)):
    """Monte Carlo estimate of the propagated-noise coefficients ``d_w`` and ``s_w``.

    With ``eta = w^T (z(tau) - Phi(tau, t) z(t))`` (the deterministic parts
    cancel for linear dynamics), ``d_w = -Cov(eta, z(t))`` and
    ``s_w = Var(eta)``.

    Returns
    -------
    d, d_err : ndarray, shape (2,)
    s, s_err : float
    """
    from .propagator import phi_rel

    w = np.asarray(w, dtype=float)
    rel = phi_rel(prop, index_tau, index_t)
    z_tau, z_t = traj.column(index_tau), traj.column(index_t)
    eta = z_tau @ w - z_t @ (rel.T @ w)
    cov, err = cross_covariance(eta[:, None], z_t)
    centered = eta - eta.mean()
    sq = centered**2
    return -cov[0], err[0], float(sq.sum() / (len(sq) - 1)), float(sq.std(ddof=1) / np.sqrt(len(sq)))


# -- closed-form propagators ----------------------------------------------------------


def _laplace_damping_mp(model, s):
    g0, lam = mpmath.mpf(model.gamma0), mpmath.mpf(model.cutoff)
    if model.is_local:
        return g0
    if model.family is Family.OHMIC_LORENTZ:
        return g0 * lam / (2 * (s + lam))
    z = s / lam
    return g0 / mpmath.pi * (mpmath.ci(z) * mpmath.sin(z) - (mpmath.si(z) - mpmath.pi / 2) * mpmath.cos(z))


def talbot_greens_function(model, times, dps=30):
    """Green's function ``g(t)`` by Talbot inversion of its Laplace transform.

    ``g_hat(s) = (1/m) / (s^2 + 2 s gamma_hat(s) + omega^2)`` is inverted with
    :func:`mpmath.invertlaplace` at working precision ``dps`` digits.
    """
    m, w2 = mpmath.mpf(model.mass), mpmath.mpf(model.omega) ** 2

    def g_hat(s):
        return 1 / (m * (s**2 + 2 * s * _laplace_damping_mp(model, s) + w2))

    out = []
    with mpmath.workdps(dps):
        for t in np.atleast_1d(times):
            out.append(0.0 if t == 0 else float(mpmath.invertlaplace(g_hat, float(t), method="talbot")))
    return np.array(out)


def embedded_propagator(model, times):
    """Exact ``Phi(t)`` of the harmonic Lorentz-cutoff model via its three-variable embedding.

    The state ``(x, p, y)`` obeys a linear ODE with ``y(0) = gamma(0) x(0)``;
    the matrix exponential maps initial ``(x, p)`` to ``(x(t), p(t))``.

    Returns
    -------
    ndarray, shape (len(times), 2, 2)
    """
    if model.family is not Family.OHMIC_LORENTZ:
        raise ValueError("the three-variable embedding exists only for the Lorentz cutoff")
    m, lam, w = model.mass, model.cutoff, model.omega
    gamma_zero = 0.5 * model.gamma0 * lam
    gen = np.array(
        [[0.0, 1.0 / m, 0.0], [-m * w**2, 0.0, -2.0 * m], [0.0, gamma_zero / m, -lam]]
    )
    lift = np.array([[1.0, 0.0], [0.0, 1.0], [gamma_zero, 0.0]])
    return np.array([(expm(gen * t) @ lift)[:2] for t in np.atleast_1d(times)])


def _exponential_modes(model):
    """``Phi(s) p_hat = sum_k modes[:, k] exp(rates[k] s)`` for the harmonic Lorentz model."""
    m, lam, w = model.mass, model.cutoff, model.omega
    gamma_zero = 0.5 * model.gamma0 * lam
    gen = np.array(
        [[0.0, 1.0 / m, 0.0], [-m * w**2, 0.0, -2.0 * m], [0.0, gamma_zero / m, -lam]]
    )
    rates, vecs = np.linalg.eig(gen)
    weights = np.linalg.solve(vecs, np.array([0.0, 1.0, 0.0]))
    return rates, vecs[:2] * weights[None, :]


def propagated_noise_reference(model, tau, t, eps_max=1e5, panel=1.0, nodes=20):
    """Continuous-time ``d(tau, t)`` and ``s(tau, t)`` by Novikov averaging over the noise spectrum.

    The propagated noise ``eta = x_hat^T int_0^t Phi_f(tau, s) p_hat xi(s) ds``
    has ``s = Var(eta)`` and ``d = -Cov(eta, u(t))``.  Writing the noise
    correlation through its spectrum turns each double time integral into

        (1/pi) int_0^inf nu_tilde(eps) Re[A(eps) conj(B(eps))] d eps,

    where ``A`` and ``B`` are finite Fourier transforms of the response
    functions.  For the harmonic Lorentz-cutoff model the response is a sum of
    three exponentials (from the three-variable embedding), so the transforms
    are closed form; the frequency integral uses Gauss-Legendre panels up to
    ``eps_max`` (the integrand decays as ``eps^-3``).

    Returns
    -------
    d : ndarray, shape (2,)
    s : float
    """
    from .bath import noise_spectrum

    if model.family is not Family.OHMIC_LORENTZ or model.omega == 0:
        raise ValueError("the closed-form reference needs the harmonic Lorentz-cutoff model")
    rates, modes = _exponential_modes(model)
    phis = embedded_propagator(model, [tau, t])
    rel = phis[0] @ np.linalg.inv(phis[1])
    x, w = np.polynomial.legendre.leggauss(nodes)
    left = np.arange(0.0, eps_max, panel)
    eps = (left[:, None] + 0.5 * panel * (x[None, :] + 1)).ravel()
    weights = np.tile(0.5 * panel * w, len(left))
    ie = 1j * eps[:, None]

    def transform(length):
        # int_0^L exp(rate (L - u)) exp(i eps u) du for every rate
        return (np.exp(ie * length) - np.exp(rates[None, :] * length)) / (ie - rates[None, :])

    to_tau, to_t = transform(tau), transform(t)
    a_hat = to_tau @ modes[0] - to_t @ (rel[0] @ modes)
    b_hat = to_t @ modes.T
    spectral = weights * noise_spectrum(model, eps) / np.pi
    d = -spectral @ np.real(a_hat[:, None] * np.conj(b_hat))
    s = float(spectral @ np.abs(a_hat) ** 2)
    return d, s


# -- operator identities ------------------------------------------------------------------


def _matchings(items):
    """All partial pairings of ``items`` as lists of pairs."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for tail in _matchings(rest):
        yield tail
    for pos, partner in enumerate(rest):
        remaining = rest[:pos] + rest[pos + 1 :]
        for tail in _matchings(remaining):
            yield [(first, partner)] + tail


def wick_delta(d_vec, s, k, contraction_sign=1.0, cap=DEFAULT_CAP):
    """Propagated-noise moment operator by explicit Wick enumeration.

    Every partial pairing of ``k`` labelled noise factors contributes
    ``(sign s)^pairs (d . grad)^unpaired``.  This enumerates the pairings one
    by one, independently of the recursion used by the generator code.
    """
    grad = PhaseOp.gradient(d_vec, cap)
    out = PhaseOp.zero(cap)
    for pairing in _matchings(list(range(k))):
        pairs = len(pairing)
        term = PhaseOp.identity((contraction_sign * s) ** pairs, cap)
        for _ in range(k - 2 * pairs):
            term = term @ grad
        out = out + term
    return out


def conditional_gaussian_moment(k, z, c, v, e, nodes=40):
    """``E[eta^k | Z = z]`` for jointly Gaussian zero-mean ``(eta, Z)``.

    ``Var Z = v``, ``Var eta = e`` and ``Cov(eta, Z) = c``.  Evaluated by
    Gauss-Hermite quadrature over the conditional law
    ``N(c z / v, e - c^2 / v)``.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    mean = c * np.asarray(z, dtype=float) / v
    sd = np.sqrt(e - c**2 / v)
    vals = (mean[..., None] + sd * x) ** k
    return vals @ w / np.sqrt(2 * np.pi)


# -- covariance ODE ---------------------------------------------------------------------


def covariance_ode(H, D, grid, mean0, cov0, times, rtol=1e-10, atol=1e-12):
    """Mean and covariance of a Gaussian under ``dW/dt = grad^T H z W + grad^T D grad W``.

    Solves ``mean' = -H mean`` and ``cov' = -H cov - cov H^T + 2 D`` with the
    tabulated ``H``, ``D`` interpolated linearly between grid points.

    Parameters
    ----------
    H, D : ndarray, shape (n+1, 2, 2) or (2, 2)
    times : sequence of float

    Returns
    -------
    means : ndarray, shape (len(times), 2)
    covs : ndarray, shape (len(times), 2, 2)
    """
    H = np.asarray(H, dtype=float)
    D = np.asarray(D, dtype=float)
    if H.ndim == 2:
        H = np.broadcast_to(H, (grid.n + 1, 2, 2))
        D = np.broadcast_to(D, (grid.n + 1, 2, 2))

    def rhs(t, y):
        k = min(int(t / grid.dt), grid.n - 1)
        f = t / grid.dt - k
        hm = (1 - f) * H[k] + f * H[k + 1]
        dm = (1 - f) * D[k] + f * D[k + 1]
        mean = y[:2]
        cov = y[2:].reshape(2, 2)
        return np.concatenate([-hm @ mean, (-hm @ cov - cov @ hm.T + 2 * dm).ravel()])

    y0 = np.concatenate([np.asarray(mean0, dtype=float), np.asarray(cov0, dtype=float).ravel()])
    times = np.atleast_1d(np.asarray(times, dtype=float))
    sol = solve_ivp(
        rhs, (0.0, float(times.max())), y0, t_eval=times, rtol=rtol, atol=atol, max_step=grid.dt
    )
    if not sol.success:
        raise NumericalError(f"covariance ODE failed: {sol.message}")
    return sol.y[:2].T, sol.y[2:].T.reshape(-1, 2, 2)
