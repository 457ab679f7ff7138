"""Zeroth- and first-order generators of the reduced Wigner-function dynamics.

The zeroth-order generator is the exact linear one,

    L0(t) = grad^T H(t) z + grad^T D(t) grad,

with ``H = -Phidot Phi^-1`` and ``D = (H sigma + sigma H^T + sigmadot) / 2``.

A perturbation ``dL(t)`` is described by a :class:`ForcingSpec`.  Every kind
is reduced to terms ``c(t) (grad^T u)^d (w^T z)^b``.  Moving such a term
through the open-system propagation gives the two-time operator

    dLbar(tau, t) = c(tau) (grad^T Phi(t - tau) u)^d
                    sum_k C(b, k) (w^T Phi(tau, t) z)^(b-k) Delta_k(tau, t),

and the first-order generator is

    L1(t) = {d/dt - Ad[L0(t)]} int_0^t dLbar(tau, t) dtau.
"""

import enum
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .covariance import X_HAT, P_HAT
from .errors import ConfigError
from .opalg import DEFAULT_CAP, PhaseOp, commutator, derivative, fd_weights
from .propagator import phi_rel_row
from .quadrature import uniform_weights

log = logging.getLogger(__name__)

E_X = X_HAT
E_P = P_HAT


# -- zeroth order --------------------------------------------------------------


@dataclass
class MasterCoefficients:
    """Drift, diffusion and generators at one grid time."""

    t: float
    H: np.ndarray
    D: np.ndarray
    L0: PhaseOp
    L1: PhaseOp = None


@dataclass
class MasterTable:
    """HPZ-type coefficients on the whole grid.

    Attributes
    ----------
    H, D : ndarray, shape (n+1, 2, 2)
    L0 : PhaseOp
        Generator with coefficient arrays over the grid.
    """

    grid: object
    H: np.ndarray
    D: np.ndarray
    L0: PhaseOp = None

    def __post_init__(self):
        if self.L0 is None:
            self.L0 = build_L0(self.H, self.D)

    def at(self, t):
        k = t if isinstance(t, (int, np.integer)) else self.grid.index(t)
        return MasterCoefficients(self.grid.t[k], self.H[k], self.D[k], self.L0.at(k))


def hpz_table(prop, cov):
    """Drift ``H(t)`` and diffusion ``D(t)`` on every grid time.

    At ``t = 0`` the right limit of ``Phidot Phi^-1`` is used, which differs
    from ``Phidot(0)`` only for the local family (its slip kick makes
    ``Phi(0+) != Phi(0) = 1``).
    """
    n1 = len(prop.g)
    prop.check_invertible(np.arange(n1))
    H = -np.einsum("iab,ibc->iac", prop.phidot, prop.phi_inv)
    m = prop.model.mass
    right0 = np.array([[m * prop.gdot[0], prop.g[0]], [m**2 * prop.gddot[0], m * prop.gdot[0]]])
    H[0] = -prop.phidot[0] @ np.linalg.inv(right0)
    sig = cov.equal_time
    hs = np.einsum("iab,ibc->iac", H, sig)
    D = 0.5 * (hs + np.swapaxes(hs, 1, 2) + cov.sigma_dot)
    D = 0.5 * (D + np.swapaxes(D, 1, 2))
    D[0] = 0.0
    return MasterTable(prop.grid, H, D)


def hpz_coefficients(prop, cov, t):
    """:class:`MasterCoefficients` at a single grid time."""
    return hpz_table(prop, cov).at(t)


def build_L0(H, D, cap=DEFAULT_CAP):
    """``grad^T H z + grad^T D grad`` as a normal-ordered :class:`PhaseOp`.

    ``H`` and ``D`` may be single 2x2 matrices or stacks of shape (n, 2, 2).
    With derivatives to the left no reordering constant arises.
    """
    H = np.asarray(H, dtype=float)
    D = np.asarray(D, dtype=float)
    terms = {
        (1, 0, 1, 0): H[..., 0, 0],
        (1, 0, 0, 1): H[..., 0, 1],
        (0, 1, 1, 0): H[..., 1, 0],
        (0, 1, 0, 1): H[..., 1, 1],
        (2, 0, 0, 0): D[..., 0, 0],
        (0, 2, 0, 0): D[..., 1, 1],
        (1, 1, 0, 0): D[..., 0, 1] + D[..., 1, 0],
    }
    return PhaseOp(terms, cap)


# -- forcing specification -----------------------------------------------------


class ForcingKind(str, enum.Enum):
    EXTERNAL = "external"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"
    POLYNOMIAL = "polynomial"


@dataclass
class Term:
    """``coef(t) (grad^T u)^d (w^T z)^b`` with ``coef`` sampled on the grid."""

    d: int
    u: np.ndarray
    coef: np.ndarray
    b: int
    w: np.ndarray


@dataclass
class ForcingSpec:
    """Perturbation of the linear dynamics, sampled on the time grid.

    Attributes
    ----------
    kind : ForcingKind
    values : ndarray or list
        ``external``: force ``F``, shape (n+1, 2);  ``linear``: matrix ``K``,
        shape (n+1, 2, 2);  ``quadratic`` / ``cubic``: ``k1`` / ``k2``,
        shape (n+1,);  ``polynomial``: list of ``(d, b, F_db)`` with
        ``F_db`` of shape (n+1,), each meaning ``dp^d F_db x^b``.
    classical_characteristics_only : bool
        Drop the higher-derivative quantum-deformation companions of the
        quadratic and cubic kinds.
    """

    kind: ForcingKind
    values: object
    classical_characteristics_only: bool = False
    terms: list = field(init=False, repr=False)

    def __post_init__(self):
        self.kind = ForcingKind(self.kind)
        self.terms = self._expand()

    def _expand(self):
        kind, v = self.kind, self.values
        if kind is ForcingKind.EXTERNAL:
            f = np.asarray(v, dtype=float)
            if f.ndim != 2 or f.shape[1] != 2:
                raise ConfigError("external force must have shape (n+1, 2)")
            return [Term(1, E_X, -f[:, 0], 0, E_X), Term(1, E_P, -f[:, 1], 0, E_X)]
        if kind is ForcingKind.LINEAR:
            k = np.asarray(v, dtype=float)
            if k.ndim != 3 or k.shape[1:] != (2, 2):
                raise ConfigError("linear forcing must have shape (n+1, 2, 2)")
            basis = (E_X, E_P)
            return [Term(1, basis[i], k[:, i, j], 1, basis[j]) for i in range(2) for j in range(2)]
        if kind is ForcingKind.QUADRATIC:
            k1 = np.asarray(v, dtype=float)
            out = [Term(1, E_P, k1, 2, E_X)]
            if not self.classical_characteristics_only:
                out.append(Term(3, E_P, -k1 / 12, 0, E_X))
            return out
        if kind is ForcingKind.CUBIC:
            k2 = np.asarray(v, dtype=float)
            out = [Term(1, E_P, k2, 3, E_X)]
            if not self.classical_characteristics_only:
                out.append(Term(3, E_P, -k2 / 4, 1, E_X))
            return out
        out = []
        for d, b, f in v:
            if d < 1 and b < 1:
                raise ConfigError("polynomial terms need d >= 1 or b >= 1")
            out.append(Term(int(d), E_P, np.asarray(f, dtype=float), int(b), E_X))
        return out

    @property
    def max_degree(self):
        """Degree of the two-time operator (derivatives plus coordinates)."""
        return max(t.d + t.b for t in self.terms)


def local_operator(spec, t_index, cap=DEFAULT_CAP):
    """The one-time perturbation ``dL(t)`` at a grid index."""
    out = PhaseOp.zero(cap)
    for term in spec.terms:
        grad = PhaseOp.gradient(term.u, cap) ** term.d
        coord = PhaseOp.coordinate(term.w, cap) ** term.b
        out = out + term.coef[t_index] * (grad @ coord)
    return out


# -- propagated noise moments ----------------------------------------------------


def delta_k(d_vec, s, k, contraction_sign=1.0, cap=DEFAULT_CAP):
    """Propagated-noise moment operator of order ``k``.

    ``Delta_0 = 1``, ``Delta_1 = d . grad`` and
    ``Delta_k = Delta_1 Delta_(k-1) + sign (k-1) s Delta_(k-2)``.

    The default ``contraction_sign=+1`` is the Gaussian moment recursion:
    each pair contraction of the propagated noise contributes its variance
    ``s``.  ``contraction_sign=-1`` gives the Hermite-type recursion with
    ``-s`` (useful for comparing against expressions written that way).

    Parameters
    ----------
    d_vec : sequence of 2 coefficients (numbers or arrays)
    s : number or array
    k : int
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    ops = [PhaseOp.identity(1.0, cap)]
    if k == 0:
        return ops[0]
    d1 = PhaseOp.gradient(d_vec, cap)
    ops.append(d1)
    for j in range(2, k + 1):
        ops.append(d1 @ ops[j - 1] + (contraction_sign * (j - 1)) * s * ops[j - 2])
    return ops[k]


def _row_geometry(prop, cov, taus, k):
    """Propagators and covariances for source times ``taus`` and target index ``k``."""
    full = phi_rel_row(prop, k)
    rel = full[taus]
    back = prop.phi[k - taus]
    sig_tt = cov.sigma[k, k]
    sig_taut = cov.sigma[taus, k]
    sig_ttau = cov.sigma[k, taus]
    sig_tautau = cov.sigma[taus, taus]
    return rel, back, sig_tt, sig_taut, sig_ttau, sig_tautau


def noise_moments(prop, cov, taus, k, w):
    """``d_w(tau, t)`` (shape (m, 2)) and ``s_w(tau, t)`` (shape (m,)) for direction ``w``.

    ``d_w = w^T [Phi(tau,t) sigma(t,t) - sigma(tau,t)]`` and
    ``s_w = w^T [sigma(tau,tau) + A sigma(t,t) A^T] w - 2 w^T A sigma(t,tau) w``
    with ``A = Phi(tau, t)``.
    """
    taus = np.atleast_1d(taus)
    rel, back, sig_tt, sig_taut, sig_ttau, sig_tautau = _row_geometry(prop, cov, taus, k)
    wa = np.einsum("a,iab->ib", w, rel)
    d = wa @ sig_tt - np.einsum("a,iab->ib", w, sig_taut)
    s = (
        np.einsum("a,iab,b->i", w, sig_tautau, w)
        + np.einsum("ia,ab,ib->i", wa, sig_tt, wa)
        - 2 * np.einsum("ia,iab,b->i", wa, sig_ttau, w)
    )
    same = taus == k
    d[same] = 0.0
    s[same] = 0.0
    return d, s


def two_time_operator_at(spec, prop, cov, taus, t, contraction_sign=1.0, cap=DEFAULT_CAP):
    """Two-time operators ``dLbar(tau_i, t)`` for grid indices ``taus`` (coefficient arrays)."""
    k = t if isinstance(t, (int, np.integer)) else prop.grid.index(t)
    taus = np.atleast_1d(np.asarray(taus, dtype=int))
    if np.any(taus > k) or np.any(taus < 0):
        raise ValueError("two-time operator needs 0 <= tau <= t")
    rel, back, *_ = _row_geometry(prop, cov, taus, k)
    cache = {}
    out = PhaseOp.zero(cap)
    for term in spec.terms:
        key = tuple(term.w)
        if key not in cache:
            cache[key] = noise_moments(prop, cov, taus, k, term.w)
        dvec, s = cache[key]
        u_t = np.einsum("iab,b->ia", back, term.u)
        grad = PhaseOp.gradient((u_t[:, 0], u_t[:, 1]), cap) ** term.d
        w_t = np.einsum("a,iab->ib", term.w, rel)
        coord = PhaseOp.coordinate((w_t[:, 0], w_t[:, 1]), cap)
        inner = PhaseOp.zero(cap)
        for j in range(term.b + 1):
            dk = delta_k((dvec[:, 0], dvec[:, 1]), s, j, contraction_sign, cap)
            inner = inner + comb(term.b, j) * ((coord ** (term.b - j)) @ dk)
        out = out + term.coef[taus] * (grad @ inner)
    return out


def two_time_operator(spec, prop, cov, tau, t, contraction_sign=1.0, cap=DEFAULT_CAP):
    """Two-time operator ``dLbar(tau, t)`` at one grid pair, as a scalar :class:`PhaseOp`."""
    i = tau if isinstance(tau, (int, np.integer)) else prop.grid.index(tau)
    return two_time_operator_at(spec, prop, cov, [i], t, contraction_sign, cap).at(0)


# -- first order generator ------------------------------------------------------


def _stack(ops, n1):
    """Combine scalar operators (one per grid index) into one with array coefficients."""
    keys = sorted({k for op in ops for k in op.terms})
    terms = {}
    for key in keys:
        arr = np.zeros(n1)
        for idx, op in enumerate(ops):
            if key in op.terms:
                arr[idx] = op.terms[key]
        terms[key] = arr
    return PhaseOp(terms, max((op.cap for op in ops), default=DEFAULT_CAP))


def integrated_operator(spec, prop, cov, contraction_sign=1.0, cap=DEFAULT_CAP, order=8):
    """``I(t) = int_0^t dLbar(tau, t) dtau`` on every grid time (coefficient arrays over t)."""
    dt = prop.grid.dt
    n1 = len(prop.g)
    rows = [PhaseOp.zero(cap)]
    for k in range(1, n1):
        row = two_time_operator_at(spec, prop, cov, np.arange(k + 1), k, contraction_sign, cap)
        w = dt * uniform_weights(k, order)
        rows.append(row.map(lambda c: float(np.dot(w, c))))
    return _stack(rows, n1)


@dataclass
class FirstOrderTable:
    """First-order generator on the grid.

    Attributes
    ----------
    L1 : PhaseOp
        Coefficient arrays over the grid.
    integral : PhaseOp
        ``int_0^t dLbar(tau, t) dtau``.
    """

    grid: object
    L1: PhaseOp
    integral: PhaseOp

    def at(self, t):
        k = t if isinstance(t, (int, np.integer)) else self.grid.index(t)
        return self.L1.at(k)

    def drift(self):
        """First-derivative monomials of ``L1`` (``{key: array}``)."""
        return {k: c for k, c in self.L1.terms.items() if k[0] + k[1] == 1}


def build_L1(spec, prop, cov, master, contraction_sign=1.0, cap=DEFAULT_CAP):
    """First-order generator on every grid time.

    The time derivative of the integrated operator uses fourth-order finite
    differences (one-sided at the ends); ``Ad[L0]`` is the commutator with
    the zeroth-order generator.  At ``t = 0`` the result is ``dL(0)``.
    ``I(t_1)`` rests on a two-point trapezoid only, so the stencils for the
    first few times skip it (see :func:`_integral_derivative`).
    """
    integral = integrated_operator(spec, prop, cov, contraction_sign, cap)
    dt = prop.grid.dt
    n1 = len(prop.g)
    if n1 < 5:
        raise ValueError("build_L1 needs at least 5 grid points")
    dI = integral.map(lambda c: _integral_derivative(c, dt))
    L1 = dI - commutator(master.L0, integral)
    start = local_operator(spec, 0, cap)
    terms = {}
    for key in set(L1.terms) | set(start.terms):
        arr = np.array(L1.terms.get(key, np.zeros(n1)), dtype=float, copy=True)
        arr[0] = start.terms.get(key, 0.0)
        terms[key] = arr
    return FirstOrderTable(prop.grid, PhaseOp(terms, cap), integral)


def build_L1_inner(spec, prop, cov, master, t, contraction_sign=1.0, cap=DEFAULT_CAP):
    """First-order generator with the time derivative inside the tau-integral.

    ``L1(t) = dL(t) + int_0^t {d/dt - Ad[L0(t)]} dLbar(tau, t) dtau`` at grid
    index ``t``; the partial derivative in ``t`` at fixed ``tau`` uses
    fourth-order finite differences over neighbouring target times.
    """
    k = t if isinstance(t, (int, np.integer)) else prop.grid.index(t)
    n1 = len(prop.g)
    dt = prop.grid.dt
    if k == 0:
        return local_operator(spec, 0, cap)
    taus = np.arange(k + 1)
    # group source times by the stencil they can use
    groups = {}
    for i in taus:
        lo = max(k - 2, i)
        lo = min(lo, n1 - 5)
        groups.setdefault(lo, []).append(i)
    parts = []
    for lo, members in groups.items():
        members = np.array(members)
        targets = np.arange(lo, lo + 5)
        if targets[-1] >= n1 or np.any(members > lo):
            raise ValueError("not enough grid points after t for the inner-form derivative")
        w = _fd_row(targets - k)
        acc = PhaseOp.zero(cap)
        for tgt, wt in zip(targets, w):
            acc = acc + (wt / dt) * two_time_operator_at(spec, prop, cov, members, tgt, contraction_sign, cap)
        parts.append((members, acc))
    # reassemble the per-tau derivative operators into one array-coefficient operator
    keys = sorted({key for _, op in parts for key in op.terms})
    terms = {}
    for key in keys:
        arr = np.zeros(k + 1)
        for members, op in parts:
            if key in op.terms:
                arr[members] = op.terms[key]
        terms[key] = arr
    deriv = PhaseOp(terms, cap)
    current = two_time_operator_at(spec, prop, cov, taus, k, contraction_sign, cap)
    integrand = deriv - commutator(master.L0.at(k), current)
    w = dt * uniform_weights(k)
    integral = integrand.map(lambda c: float(np.dot(w, c)))
    return local_operator(spec, k, cap) + integral


_EARLY = np.array([0, 2, 3, 4, 5, 6])


def _integral_derivative(values, dt):
    """Time derivative of ``I(t)`` with the early stencils avoiding index 1.

    Every ``I(t_k)`` with ``k >= 2`` comes from a quadrature of at least fifth
    order, while ``I(t_1)`` is a plain trapezoid whose ``O(dt^3)`` error would
    turn into an ``O(dt^2)`` derivative error.
    """
    out = derivative(values, dt, 1, 0, accuracy=4)
    if len(values) > _EARLY[-1]:
        for k in (1, 2, 3):
            out[k] = fd_weights(_EARLY - k, 1) @ values[_EARLY] / dt
    return out


def _fd_row(offsets):
    return fd_weights(np.asarray(offsets, dtype=float), 1)
