"""Bath spectral models, damping kernels and fluctuation-dissipation noise kernels.

Units are hbar = k_B = 1.  A model is fully described by its damping spectrum
``gamma_tilde(eps)``; the time-domain damping kernel enters the Langevin
equation as ``2 m (gamma * xdot)(t)`` and the symmetrized noise correlation
follows from

    nu_tilde(eps) = m * gamma_tilde(eps) * eps * coth(eps / 2T).

Three families are provided:

``local``
    Markovian damping.  The kernel is the symmetric delta ``2 gamma0 delta(t)``
    (so ``gamma_tilde = 2 gamma0``) and the equation of motion reduces to
    ``m xddot + 2 m gamma0 xdot + m omega^2 x = xi``.  The quantum noise of a
    delta kernel is UV divergent; only its classical white-noise limit
    ``nu(t) = 4 m gamma0 T delta(t)`` is supported.
``ohmic_lorentz``
    ``gamma_tilde = gamma0 Lambda^2 / (Lambda^2 + eps^2)``,
    ``gamma(t) = (gamma0 Lambda / 2) exp(-Lambda |t|)``.
``ohmic_exp``
    ``gamma_tilde = gamma0 exp(-|eps| / Lambda)``,
    ``gamma(t) = gamma0 Lambda / (pi (1 + Lambda^2 t^2))``.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import QuadratureError, SymbolicKernelError
from .grid import TimeGrid

log = logging.getLogger(__name__)

EPSABS = 1e-10
EPSREL = 1e-8
# thermal occupation beyond 50 T is below exp(-50)
THERMAL_CUTOFF = 50.0

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class Family(str, enum.Enum):
    LOCAL = "local"
    OHMIC_LORENTZ = "ohmic_lorentz"
    OHMIC_EXP = "ohmic_exp"


@dataclass(frozen=True)
class SpectralModel:
    """Bath and system parameters.

    Attributes
    ----------
    family : Family
        Damping-kernel family.
    gamma0 : float
        Damping strength (1/time).
    cutoff : float
        Spectral cutoff Lambda (1/time); ignored by the local family.
    temperature : float
        Bath temperature (energy units, k_B = 1).
    mass : float
        System mass.
    omega : float
        Renormalized system frequency.  The counterterm is absorbed into the
        bath coupling, so this is the only frequency that appears anywhere.
    """

    family: Family
    gamma0: float
    cutoff: float = 1.0
    temperature: float = 0.0
    mass: float = 1.0
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        bad = []
        if not self.gamma0 >= 0:
            bad.append("gamma0 must be >= 0")
        if not self.cutoff > 0:
            bad.append("cutoff must be > 0")
        if not self.temperature >= 0:
            bad.append("temperature must be >= 0")
        if not self.mass > 0:
            bad.append("mass must be > 0")
        if not self.omega >= 0:
            bad.append("omega must be >= 0")
        if bad:
            raise ValueError("; ".join(bad))

    @property
    def is_local(self):
        return self.family is Family.LOCAL

    @property
    def fastest_rate(self):
        """Largest model rate, used for step-size checks."""
        rates = [self.omega, self.gamma0]
        if not self.is_local:
            rates.append(self.cutoff)
        return max(rates)

    def describe(self):
        return (
            f"family={self.family.value} gamma0={self.gamma0:g} cutoff={self.cutoff:g} "
            f"T={self.temperature:g} m={self.mass:g} omega={self.omega:g}"
        )


def damping_spectrum(model, eps):
    """Fourier transform ``gamma_tilde(eps)`` of the damping kernel."""
    eps = np.abs(np.asarray(eps, dtype=float))
    g0, lam = model.gamma0, model.cutoff
    if model.family is Family.LOCAL:
        return np.full_like(eps, 2 * g0)
    if model.family is Family.OHMIC_LORENTZ:
        return g0 * lam**2 / (lam**2 + eps**2)
    return g0 * np.exp(-eps / lam)


def damping_kernel(model, t):
    """Time-domain damping kernel ``gamma(t)`` for ``t >= 0``."""
    if model.family is Family.LOCAL:
        raise SymbolicKernelError("delta kernel must be handled symbolically")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("damping kernel is tabulated for t >= 0 only")
    g0, lam = model.gamma0, model.cutoff
    if model.family is Family.OHMIC_LORENTZ:
        return 0.5 * g0 * lam * np.exp(-lam * t)
    return g0 * lam / (np.pi * (1 + (lam * t) ** 2))


def damping_kernel_derivative(model, t):
    """``d gamma / dt`` for ``t >= 0``."""
    if model.family is Family.LOCAL:
        raise SymbolicKernelError("delta kernel must be handled symbolically")
    t = np.asarray(t, dtype=float)
    g0, lam = model.gamma0, model.cutoff
    if model.family is Family.OHMIC_LORENTZ:
        return -0.5 * g0 * lam**2 * np.exp(-lam * t)
    u = lam * t
    return -2 * g0 * lam**2 * u / (np.pi * (1 + u**2) ** 2)


def laplace_damping(model, s):
    """One-sided Laplace transform ``gamma_hat(s)``; accepts complex ``s``."""
    s = np.asarray(s, dtype=complex)
    g0, lam = model.gamma0, model.cutoff
    if model.family is Family.LOCAL:
        return np.full_like(s, g0)
    if model.family is Family.OHMIC_LORENTZ:
        return 0.5 * g0 * lam / (s + lam)
    # int_0^inf exp(-z u) / (1 + u^2) du = Ci(z) sin z - (Si(z) - pi/2) cos z,
    # analytic in the plane cut along the negative real axis
    z = s / lam
    si, ci = special.sici(z)
    return g0 / np.pi * (ci * np.sin(z) - (si - np.pi / 2) * np.cos(z))


def noise_spectrum(model, eps):
    """Symmetrized noise spectrum ``nu_tilde(eps)``.

    For the local family this is the classical white-noise level
    ``2 m T gamma_tilde(0)``.
    """
    eps = np.abs(np.asarray(eps, dtype=float))
    m, temp = model.mass, model.temperature
    gt = damping_spectrum(model, eps)
    if model.is_local:
        return 2 * m * temp * gt
    return m * gt * _eps_coth(eps, temp, model.cutoff)


def _eps_coth(eps, temp, scale):
    """``eps * coth(eps / 2T)`` with the removable point at eps=0 filled in."""
    eps = np.abs(np.asarray(eps, dtype=float))
    if temp == 0:
        return eps
    small = eps < 1e-8 * max(temp, scale)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = eps / np.tanh(eps / (2 * temp))
    return np.where(small, 2 * temp, out)


def white_noise_level(model):
    """Weight ``c`` of ``nu(t) = c delta(t)`` for the local family."""
    if not model.is_local:
        raise ValueError("white-noise level is only defined for the local family")
    if model.temperature == 0:
        raise SymbolicKernelError("UV-divergent kernel requires cutoff")
    return 4 * model.mass * model.gamma0 * model.temperature


# -- noise kernel: pointwise routes -------------------------------------------


def noise_kernel(model, t, method="fourier"):
    """Noise kernel ``nu(t)``.

    Parameters
    ----------
    model : SpectralModel
    t : float
        Time lag; ``nu`` is even so the sign of ``t`` is irrelevant.
    method : {"fourier", "matsubara", "split"}
        ``fourier`` integrates ``(1/pi) int_0^inf nu_tilde(eps) cos(eps t)``
        directly with an oscillatory (QAWF) rule.  ``matsubara`` sums the
        Matsubara expansion of coth (Lorentz family, T > 0 only).  ``split``
        adds the closed-form zero-temperature kernel to a quadrature of the
        thermal excess and is what the tables use.

    Returns
    -------
    float
        ``inf`` at ``t = 0`` when the kernel is log-singular (Lorentz family).
    """
    t = abs(float(t))
    if model.is_local:
        white_noise_level(model)
        return np.inf if t == 0 else 0.0
    if model.gamma0 == 0:
        return 0.0
    if method == "fourier":
        return _noise_fourier(model, t)
    if method == "matsubara":
        return _noise_matsubara(model, t)
    if method == "split":
        return float(zero_point_kernel(model, t) + thermal_kernel(model, np.array([t]))[0])
    raise ValueError(f"unknown method {method!r}")


def _noise_fourier(model, t):
    def f(eps):
        return float(noise_spectrum(model, eps))

    if t == 0:
        if model.family is Family.OHMIC_LORENTZ:
            return np.inf
        val, err = integrate.quad(f, 0, np.inf, epsabs=EPSABS, epsrel=EPSREL, limit=500)
    else:
        val, err, *rest = integrate.quad(
            f, 0, np.inf, weight="cos", wvar=t, epsabs=EPSABS, limlst=200, limit=500,
            full_output=True,
        )
    tol = max(EPSABS, EPSREL * abs(val))
    if err > 100 * tol:
        raise QuadratureError(f"noise kernel quadrature did not converge at t={t}", err)
    return val / np.pi


def _noise_matsubara(model, t):
    if model.family is not Family.OHMIC_LORENTZ:
        raise NotImplementedError("Matsubara route is implemented for the Lorentz family")
    temp = model.temperature
    if temp <= 0:
        raise ValueError("Matsubara series needs T > 0")
    if t == 0:
        return np.inf
    m, g0, lam = model.mass, model.gamma0, model.cutoff
    nu1 = 2 * np.pi * temp
    a = lam / nu1
    n_terms = int(max(45.0 / (nu1 * t), 200 * a, 100)) + 1
    n = np.arange(1, n_terms + 1, dtype=float)
    vn = nu1 * n
    denom = lam**2 - vn**2
    near = np.abs(denom) < 1e-9 * lam**2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (lam * np.exp(-lam * t) - vn * np.exp(-vn * t)) / denom
    # removable point Lambda == nu_n: limit of the difference quotient
    terms = np.where(near, (1 - lam * t) * np.exp(-lam * t) / (2 * lam), terms)
    series = 2 * temp * g0 * lam**2 * np.sum(terms[::-1])
    # sum_{n>N} 1/(n^2 - a^2), leading two terms of the 1/n^2 expansion
    tail = special.polygamma(1, n_terms + 1) + a**2 * special.polygamma(3, n_terms + 1) / 6
    series -= 2 * temp * g0 * lam**3 * np.exp(-lam * t) * tail / nu1**2
    return m * (2 * temp * 0.5 * g0 * lam * np.exp(-lam * t) + series)


# -- noise kernel: vectorized split route -------------------------------------


def _k_lorentz(x):
    """``e^x E1(x) - e^-x Ei(x)`` (the T=0 Lorentz kernel shape)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    big = x > 600
    xs = x[~big]
    out[~big] = np.exp(xs) * special.exp1(xs) - np.exp(-xs) * special.expi(xs)
    xb = x[big]
    out[big] = -2 / xb**2 - 12 / xb**4 - 240 / xb**6
    return out


def zero_point_kernel(model, t):
    """Closed-form zero-temperature noise kernel ``(m/pi) int gamma_tilde |eps| cos``."""
    t = np.abs(np.asarray(t, dtype=float))
    m, g0, lam = model.mass, model.gamma0, model.cutoff
    if model.family is Family.OHMIC_LORENTZ:
        with np.errstate(divide="ignore"):
            out = m * g0 * lam**2 / (2 * np.pi) * _k_lorentz(lam * t)
        return np.where(t == 0, np.inf, out)
    if model.family is Family.OHMIC_EXP:
        a = 1 / lam
        return m * g0 / np.pi * (a**2 - t**2) / (a**2 + t**2) ** 2
    raise SymbolicKernelError("UV-divergent kernel requires cutoff")


def _zero_point_f2(model, u):
    """Second antiderivative ``int_0^u int_0^v nu_0`` of the zero-point kernel."""
    u = np.asarray(u, dtype=float)
    m, g0, lam = model.mass, model.gamma0, model.cutoff
    out = np.zeros_like(u)
    pos = u > 0
    x = lam * u[pos]
    if model.family is Family.OHMIC_LORENTZ:
        out[pos] = m * g0 / (2 * np.pi) * (_k_lorentz(x) + 2 * np.log(x) + 2 * np.euler_gamma)
    else:
        out[pos] = m * g0 / (2 * np.pi) * np.log1p(x**2)
    return out


def zero_point_cell_average(model, grid):
    """Triangle-weighted cell averages of the zero-point kernel.

    ``C_k = dt^-2 int_{-dt}^{dt} (dt - |u|) nu_0(k dt + u) du`` is the covariance
    of the noise averaged over two grid cells ``k`` apart.
    """
    dt, n = grid.dt, grid.n
    out = np.empty(n + 1)
    f2 = _zero_point_f2(model, np.array([dt, 2 * dt]))
    out[0] = 2 * f2[0] / dt**2
    if n >= 1:
        out[1] = (f2[1] - 2 * f2[0]) / dt**2
    if n >= 2:
        k = np.arange(2, n + 1)[:, None]
        # Gauss-Legendre on each half cell; the kernel is smooth away from 0
        left = k * dt + 0.5 * dt * (_GL_NODES - 1)
        right = k * dt + 0.5 * dt * (_GL_NODES + 1)
        wl = 0.5 * dt * _GL_WEIGHTS * (dt - 0.5 * dt * (1 - _GL_NODES))
        wr = 0.5 * dt * _GL_WEIGHTS * (dt - 0.5 * dt * (_GL_NODES + 1))
        out[2:] = (zero_point_kernel(model, left) @ wl + zero_point_kernel(model, right) @ wr) / dt**2
    return out


def _hermite_basis(y, dt):
    """Cubic Hermite basis on a cell of width ``dt`` (unit variable ``y``); shape (4, ...)."""
    return np.stack([
        2 * y**3 - 3 * y**2 + 1,
        dt * (y**3 - 2 * y**2 + y),
        -2 * y**3 + 3 * y**2,
        dt * (y**3 - y**2),
    ])


def noise_hermite_moments(model, grid, nodes=6):
    """Moments of the noise kernel against the cubic Hermite basis of every cell.

    Row ``j`` (``j >= 1``) holds ``int nu(r) h_i(r) dr`` over
    ``[(j-1) dt, j dt]`` for the basis ``h`` weighting ``f(t_{j-1})``,
    ``f'(t_{j-1})``, ``f(t_j)``, ``f'(t_j)``.  Contracting with samples of a
    smooth ``f`` gives ``int nu f`` to fourth order even where ``nu`` is
    log-singular at zero lag.  Shape (n+1, 4); row 0 is zero.
    """
    dt, n = grid.dt, grid.n
    out = np.zeros((n + 1, 4))
    if n == 0 or model.is_local or model.gamma0 == 0:
        return out
    x, w = np.polynomial.legendre.leggauss(nodes)
    y = 0.5 * (x + 1)
    r = (np.arange(n)[:, None] + y[None, :]) * dt
    basis = _hermite_basis(y, dt) * (0.5 * dt * w)
    vals = thermal_kernel(model, r.ravel()).reshape(r.shape)
    zp = zero_point_kernel(model, r[1:])
    vals[1:] += zp
    out[1:] = vals @ basis.T
    # first cell: integrate the (possibly log-singular) zero-point part adaptively
    for i in range(4):
        def integrand(rr, i=i):
            return float(zero_point_kernel(model, rr)) * _hermite_basis(rr / dt, dt)[i]

        val, _ = integrate.quad(integrand, 0.0, dt, epsabs=0.0, epsrel=1e-12, limit=200)
        out[1, i] += val
    return out


def _hermite_overlap(v, dt):
    """``K[i, j](v) = int h_i(y) h_j(y - v) dy`` over the overlap of two unit cells; shape (4, 4, len(v))."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    x, w = np.polynomial.legendre.leggauss(6)
    lo, hi = np.maximum(0.0, v), np.minimum(1.0, 1.0 + v)
    half = 0.5 * (hi - lo)
    y = lo[:, None] + half[:, None] * (x[None, :] + 1)
    a = _hermite_basis(y, dt)
    b = _hermite_basis(y - v[:, None], dt)
    return np.einsum("ivq,jvq,q,v->ijv", a, b, w, half)


def noise_hermite_pair_moments(model, grid, nodes=8):
    """Two-cell moments of the noise kernel against the cubic Hermite basis.

    ``W[k, i, j] = int int h_i(s) nu(s - s' + k dt) h_j(s') ds ds'`` with both
    variables ranging over one cell; lag ``-k`` is ``W[k].T``.  Contracting
    with Hermite nodal values of smooth response functions gives double
    integrals against the continuous kernel to fourth order.  Shape (n+1, 4, 4).
    """
    dt, n = grid.dt, grid.n
    out = np.zeros((n + 1, 4, 4))
    if model.gamma0 == 0:
        return out
    if model.is_local:
        y, w = np.polynomial.legendre.leggauss(4)
        y = 0.5 * (y + 1)
        basis = _hermite_basis(y, dt)
        out[0] = white_noise_level(model) * dt * 0.5 * np.einsum("iq,jq,q->ij", basis, basis, w)
        return out
    x, w = np.polynomial.legendre.leggauss(nodes)
    v = np.concatenate([0.5 * (x - 1), 0.5 * (x + 1)])  # both halves of (-1, 1)
    wv = np.concatenate([0.5 * w, 0.5 * w])
    overlap = _hermite_overlap(v, dt) * wv
    args = (np.arange(n + 1)[:, None] + v[None, :]) * dt
    vals = thermal_kernel(model, args.ravel()).reshape(args.shape)
    # the Lorentz zero-point kernel is log-singular at zero separation, reached by lags 0 and 1
    first_smooth = 2 if model.family is Family.OHMIC_LORENTZ else 0
    vals[first_smooth:] += zero_point_kernel(model, args[first_smooth:])
    out[:] = dt**2 * np.einsum("kv,ijv->kij", vals, overlap)
    for k in range(min(first_smooth, n + 1)):
        def integrand(vv, k=k):
            return float(zero_point_kernel(model, (k + vv) * dt)) * _hermite_overlap(vv, dt)[:, :, 0]

        for lo, hi in ((-1.0, 0.0), (0.0, 1.0)):
            val, _ = integrate.quad_vec(integrand, lo, hi, epsabs=0.0, epsrel=1e-11, limit=2000)
            out[k] += dt**2 * val
    return out


def thermal_kernel(model, t, cell_dt=None):
    """Thermal excess ``nu(t) - nu_0(t)``, vectorized over ``t``.

    With ``cell_dt`` the result is the triangle-weighted cell average (the
    spectrum is multiplied by ``sinc^2(eps dt / 2)``).
    """
    t = np.abs(np.asarray(t, dtype=float))
    temp = model.temperature
    if temp == 0 or model.gamma0 == 0:
        return np.zeros_like(t)
    m = model.mass
    g0t = damping_spectrum(model, 0.0)

    def integrand(eps):
        if eps == 0:
            base = 2 * m * temp * g0t
        else:
            base = 2 * m * damping_spectrum(model, eps) * eps / np.expm1(eps / temp)
        if cell_dt is not None:
            base = base * np.sinc(eps * cell_dt / (2 * np.pi)) ** 2
        return base * np.cos(eps * t) / np.pi

    upper = THERMAL_CUTOFF * temp
    scale = 2 * m * temp * float(g0t) * min(upper, 10 * model.cutoff) / np.pi
    val, err = integrate.quad_vec(
        integrand, 0.0, upper, epsabs=EPSABS * max(scale, 1.0), epsrel=EPSREL, limit=100000,
        norm="max",
    )
    if err > 100 * max(EPSABS * max(scale, 1.0), EPSREL * np.max(np.abs(val))):
        raise QuadratureError("thermal noise quadrature did not converge", err)
    log.debug("thermal kernel quadrature: error %.3g on [0, %.3g]", err, upper)
    return val


@dataclass
class KernelTable:
    """Damping and noise kernels sampled on a uniform grid (``t >= 0``).

    ``nu`` holds pointwise samples (``inf`` at ``t=0`` for log-singular
    kernels).  ``nu_cell`` holds the triangle-weighted cell averages that
    define the covariance of the grid-averaged noise used by every
    downstream stage.  For the local family ``gamma``/``nu`` are NaN and the
    delta weights are carried in ``delta_gamma`` / ``white_noise``.
    ``nu_moments`` and ``nu_pair_moments`` hold Hermite moments of the
    continuous kernel used for covariance derivatives
    (:func:`noise_hermite_moments`, :func:`noise_hermite_pair_moments`).
    """

    model: SpectralModel
    grid: TimeGrid
    gamma: np.ndarray
    nu: np.ndarray
    nu_cell: np.ndarray
    delta_gamma: float = 0.0
    white_noise: float = 0.0
    notes: list = field(default_factory=list)
    nu_moments: np.ndarray = None
    nu_pair_moments: np.ndarray = None

    @property
    def t(self):
        return self.grid.t

    @property
    def is_local(self):
        return self.model.is_local

    def noise_matrix(self):
        """Covariance ``C[k, l]`` of the cell-averaged noise (n x n Toeplitz)."""
        from scipy.linalg import toeplitz

        return toeplitz(self.nu_cell[: self.grid.n])


def kernel_table(model, grid):
    """Tabulate ``gamma``, ``nu`` and the cell-averaged noise on ``grid``."""
    n, dt = grid.n, grid.dt
    notes = []
    if model.is_local:
        c = white_noise_level(model) if model.gamma0 > 0 else 0.0
        nu_cell = np.zeros(n + 1)
        nu_cell[0] = c / dt
        return KernelTable(
            model, grid, np.full(n + 1, np.nan), np.full(n + 1, np.nan), nu_cell,
            delta_gamma=2 * model.gamma0, white_noise=c,
            notes=["local family: classical white-noise limit of the FDR"],
            nu_pair_moments=noise_hermite_pair_moments(model, grid),
        )
    t = grid.t
    gamma = damping_kernel(model, t)
    if model.gamma0 == 0:
        zeros = np.zeros(n + 1)
        return KernelTable(model, grid, gamma, zeros, zeros.copy())
    nu = zero_point_kernel(model, t) + thermal_kernel(model, t)
    nu_cell = zero_point_cell_average(model, grid) + thermal_kernel(model, t, cell_dt=dt)
    moments = noise_hermite_moments(model, grid)
    pair_moments = noise_hermite_pair_moments(model, grid)
    notes.append(
        f"noise: closed-form T=0 kernel + thermal quadrature on [0, {THERMAL_CUTOFF:g} T]; "
        "oscillatory tail handled by the closed form"
    )
    return KernelTable(model, grid, gamma, nu, nu_cell, notes=notes, nu_moments=moments,
        nu_pair_moments=pair_moments,
    )
