"""Wigner-function evolution on a phase-space grid.

The generator is a normal-ordered :class:`~strongqbm.opalg.PhaseOp` whose
coefficients may vary in time; :func:`step` advances ``dW/dt = L W`` by one
explicit Runge-Kutta step and :func:`evolve` drives a whole run from a tabulated
generator, refining the step when the stability bound requires it.
"""

import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError, NumericalError, StabilityError
from .opalg import derivative, fd_weights

log = logging.getLogger(__name__)

WINDOW_REL = 1e-8
WINDOW_CELLS = 5
CFL_SAFETY = 0.25


class WindowWarning(UserWarning):
    """The Wigner function has not decayed near the edge of the window."""


@dataclass(frozen=True)
class WignerGrid:
    """Samples ``W(x_i, p_j)`` on a uniform phase-space grid.

    Attributes
    ----------
    x, p : ndarray
        Uniform axes (``nx`` and ``np`` points, window end points included).
    values : ndarray, shape (nx, np)
    time : float
    """

    x: np.ndarray
    p: np.ndarray
    values: np.ndarray
    time: float = 0.0

    @classmethod
    def from_window(cls, x_window, p_window, nx, np_, values=None, time=0.0):
        x = np.linspace(x_window[0], x_window[1], nx)
        p = np.linspace(p_window[0], p_window[1], np_)
        if values is None:
            values = np.zeros((nx, np_))
        return cls(x, p, np.asarray(values, dtype=float), time)

    @property
    def hx(self):
        return float(self.x[1] - self.x[0])

    @property
    def hp(self):
        return float(self.p[1] - self.p[0])

    @property
    def shape(self):
        return self.values.shape

    @property
    def x_window(self):
        return float(self.x[0]), float(self.x[-1])

    @property
    def p_window(self):
        return float(self.p[0]), float(self.p[-1])

    def with_values(self, values, time=None):
        return replace(self, values=values, time=self.time if time is None else time)

    def normalization(self):
        """``int int W dx dp`` as the cell sum ``hx hp sum W``.

        This is the quantity the zero-padded flux-form stencils conserve; for
        a density that has decayed at the window edge it agrees with the
        trapezoid rule.
        """
        return float(self.values.sum() * self.hx * self.hp)

    def moments(self):
        """Mean vector and covariance matrix of ``W`` (normalized by its integral)."""
        w = self.values
        norm = self.normalization()
        xx, pp = self.x[:, None], self.p[None, :]

        def integral(f):
            return float((f * w).sum() * self.hx * self.hp) / norm

        mean = np.array([integral(xx), integral(pp)])
        dx, dp = xx - mean[0], pp - mean[1]
        cov = np.array([[integral(dx * dx), integral(dx * dp)], [integral(dx * dp), integral(dp * dp)]])
        return mean, cov

    def marginal_excess_kurtosis(self):
        """Excess kurtosis of the ``x`` and ``p`` marginals."""
        out = []
        for axis, coords, other in ((1, self.x, self.p), (0, self.p, self.x)):
            marg = np.trapezoid(self.values, other, axis=axis)
            norm = np.trapezoid(marg, coords)
            mu = np.trapezoid(coords * marg, coords) / norm
            var = np.trapezoid((coords - mu) ** 2 * marg, coords) / norm
            m4 = np.trapezoid((coords - mu) ** 4 * marg, coords) / norm
            out.append(float(m4 / var**2 - 3.0))
        return tuple(out)

    def edge_ratio(self, cells=WINDOW_CELLS):
        """Largest ``|W|`` within ``cells`` of the boundary relative to ``max |W|``."""
        a = np.abs(self.values)
        top = a.max()
        if top == 0:
            return 0.0
        band = max(
            a[:cells].max(), a[-cells:].max(), a[:, :cells].max(), a[:, -cells:].max()
        )
        return float(band / top)

    def check_window(self, rel=WINDOW_REL, cells=WINDOW_CELLS):
        """Warn (:class:`WindowWarning`) if ``W`` has not decayed near the edges; returns adequacy."""
        ratio = self.edge_ratio(cells)
        if ratio > rel:
            warnings.warn(
                f"Wigner function reaches {ratio:.2e} of its maximum within {cells} cells of the "
                f"window edge at t={self.time:g}; enlarge the window",
                WindowWarning,
                stacklevel=2,
            )
            return False
        return True


def gaussian_density(x, p, mean, covariance):
    """Bivariate normal density on the outer product of ``x`` and ``p``."""
    cov = np.asarray(covariance, dtype=float)
    inv = np.linalg.inv(cov)
    dx = x[:, None] - mean[0]
    dp = p[None, :] - mean[1]
    quad = inv[0, 0] * dx**2 + 2 * inv[0, 1] * dx * dp + inv[1, 1] * dp**2
    return np.exp(-0.5 * quad) / (2 * np.pi * np.sqrt(np.linalg.det(cov)))


def init_gaussian(mean, covariance, x_window=None, p_window=None, nx=128, np_=128, time=0.0):
    """Gaussian Wigner function sampled on a grid.

    Parameters
    ----------
    mean : sequence of 2 floats
    covariance : (2, 2) array_like
        Symmetric positive definite.
    x_window, p_window : pair of floats, optional
        Default to ``mean +- 8`` standard deviations.
    nx, np_ : int
        Number of samples per axis.

    Raises
    ------
    ConfigError
        If the covariance is not SPD or a window does not cover ``mean +- 6`` standard deviations.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise ConfigError("covariance must be a symmetric 2x2 matrix")
    if np.any(np.linalg.eigvalsh(cov) <= 0):
        raise ConfigError("covariance must be positive definite")
    sd = np.sqrt(np.diag(cov))
    windows = []
    for axis, win in enumerate((x_window, p_window)):
        if win is None:
            win = (mean[axis] - 8 * sd[axis], mean[axis] + 8 * sd[axis])
        lo, hi = float(win[0]), float(win[1])
        if lo > mean[axis] - 6 * sd[axis] or hi < mean[axis] + 6 * sd[axis]:
            name = "x" if axis == 0 else "p"
            raise ConfigError(
                f"{name} window [{lo:g}, {hi:g}] does not cover mean +- 6 standard deviations "
                f"[{mean[axis] - 6 * sd[axis]:g}, {mean[axis] + 6 * sd[axis]:g}]"
            )
        windows.append((lo, hi))
    grid = WignerGrid.from_window(windows[0], windows[1], nx, np_, time=time)
    return grid.with_values(gaussian_density(grid.x, grid.p, mean, cov))


# -- time stepping -------------------------------------------------------------


def stable_step(op, wig):
    """Largest step allowed by the explicit stability bound for ``op`` on ``wig``.

    The bound is ``0.25 min(h^2 / max D, h / max |drift|)``, taken per axis and
    extended to a derivative ``dx^i dp^j`` as ``hx^i hp^j / max |c|``, where
    ``c`` is its coefficient function evaluated over the window.
    """
    xmax = max(abs(wig.x[0]), abs(wig.x[-1]))
    pmax = max(abs(wig.p[0]), abs(wig.p[-1]))
    strength = {}
    for (i, j, k, l), c in op.terms.items():
        if i + j == 0:
            continue
        mag = abs(float(c)) * xmax**k * pmax**l
        strength[(i, j)] = strength.get((i, j), 0.0) + mag
    bound = np.inf
    for (i, j), mag in strength.items():
        if mag > 0:
            bound = min(bound, wig.hx**i * wig.hp**j / mag)
    return CFL_SAFETY * bound


class MonomialMatrices:
    """Sparse matrices of the monomials ``dx^i dp^j x^k p^l`` on a fixed grid.

    Parameters
    ----------
    wig : WignerGrid
        Supplies the axes.
    accuracy : int
        Order of the central stencils.
    boundary : {"zero", "one-sided"}
        ``zero`` treats ``W`` as vanishing outside the window (central stencils
        truncated at the edges).  ``one-sided`` reproduces
        :func:`~strongqbm.opalg.apply_array`; its edge stencils give the
        discrete generator growing modes at inflow boundaries, so it is not
        suitable for long runs.
    """

    def __init__(self, wig, accuracy=4, boundary="zero"):
        if boundary not in ("zero", "one-sided"):
            raise ValueError(f"unknown boundary treatment {boundary!r}")
        self.x, self.p = wig.x, wig.p
        self.accuracy = accuracy
        self.boundary = boundary
        self._deriv = {}
        self._mono = {}

    def _derivative_matrix(self, axis, order):
        key = (axis, order)
        if key not in self._deriv:
            coords = self.x if axis == 0 else self.p
            n = len(coords)
            h = coords[1] - coords[0]
            if order == 0:
                mat = sparse.identity(n, format="csr")
            elif self.boundary == "zero":
                half = (order + self.accuracy - 1) // 2
                offsets = np.arange(-half, half + 1)
                weights = fd_weights(offsets, order) / h**order
                diagonals = [np.full(n - abs(o), w) for o, w in zip(offsets, weights)]
                mat = sparse.diags(diagonals, offsets, shape=(n, n), format="csr")
            else:
                dense = derivative(np.eye(n), h, order, 0, self.accuracy)
                mat = sparse.csr_matrix(dense)
            self._deriv[key] = mat
        return self._deriv[key]

    def matrix(self, key):
        if key not in self._mono:
            i, j, k, l = key
            dx = self._derivative_matrix(0, i)
            dp = self._derivative_matrix(1, j)
            weight = (self.x[:, None] ** k) * (self.p[None, :] ** l)
            self._mono[key] = (sparse.kron(dx, dp, format="csr") @ sparse.diags(weight.ravel())).tocsr()
        return self._mono[key]

    def apply(self, op, values):
        flat = values.ravel()
        out = np.zeros_like(flat)
        for key, c in op.terms.items():
            out += float(c) * (self.matrix(key) @ flat)
        return out.reshape(values.shape)


def step(wig, op, dt, op_next=None, accuracy=4, check=True, matrices=None, method="rk4"):
    """One explicit step of ``dW/dt = L W``.

    Parameters
    ----------
    wig : WignerGrid
    op : PhaseOp
        Generator at the start of the step (scalar coefficients).
    dt : float
    op_next : PhaseOp, optional
        Generator at the end of the step; defaults to ``op``.  ``rk4`` uses the
        average of the two at the midpoint.
    check : bool
        Enforce the stability bound of :func:`stable_step`.
    matrices : MonomialMatrices, optional
        Precomputed sparse monomials for this grid; built with zero-padded
        stencils when omitted.
    method : {"rk4", "heun"}
        Classical Runge-Kutta, or Heun's second-order method.  Heun amplifies
        central-differenced drift by ``sqrt(1 + theta^4 / 4)`` per step
        (``theta`` the Courant number), which compounds over long runs; RK4 is
        slightly dissipative on the imaginary axis up to ``2 sqrt(2)``.

    Raises
    ------
    StabilityError
        If ``dt`` exceeds the stability bound.
    NumericalError
        If the update produces a non-finite value (the first offending cell is named).
    """
    op_next = op if op_next is None else op_next
    if check:
        bound = min(stable_step(op, wig), stable_step(op_next, wig))
        if dt > bound:
            raise StabilityError(f"step {dt:g} exceeds the stability bound {bound:.3g}")
    if matrices is None:
        matrices = MonomialMatrices(wig, accuracy)
    apply = matrices.apply
    w0 = wig.values
    if method == "heun":
        k1 = apply(op, w0)
        k2 = apply(op_next, w0 + dt * k1)
        new = w0 + 0.5 * dt * (k1 + k2)
    elif method == "rk4":
        op_mid = 0.5 * (op + op_next)
        k1 = apply(op, w0)
        k2 = apply(op_mid, w0 + 0.5 * dt * k1)
        k3 = apply(op_mid, w0 + 0.5 * dt * k2)
        k4 = apply(op_next, w0 + dt * k3)
        new = w0 + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown method {method!r}")
    bad = ~np.isfinite(new)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise NumericalError(
            f"non-finite Wigner value at x={wig.x[i]:g}, p={wig.p[j]:g} (t={wig.time + dt:g})"
        )
    return wig.with_values(new, wig.time + dt)


def _interpolate(op, k, frac):
    """Generator between grid indices ``k`` and ``k+1`` by linear interpolation."""
    a, b = op.at(k), op.at(k + 1)
    if frac == 0:
        return a
    return a * (1 - frac) + b * frac


@dataclass
class EvolutionResult:
    """Snapshots and per-step diagnostics of a run."""

    snapshots: list
    times: np.ndarray
    normalization: np.ndarray
    substeps: int


def evolve(wig, generator, grid, stride=1, accuracy=4, t_end=None, method="rk4", boundary="zero"):
    """Evolve ``wig`` under a tabulated generator.

    Parameters
    ----------
    wig : WignerGrid
        Initial state at ``grid.t[0]``.
    generator : PhaseOp
        Coefficient arrays over ``grid`` (e.g. ``L0`` or ``L0 + L1``).
    grid : TimeGrid
    stride : int
        Keep a snapshot every ``stride`` grid steps (the initial state is always kept).
    t_end : float, optional
        Stop at this grid time (default: end of the grid).
    method : {"rk4", "heun"}
        Time stepper (see :func:`step`).
    boundary : {"zero", "one-sided"}
        Edge treatment (see :class:`MonomialMatrices`).

    Returns
    -------
    EvolutionResult
        Each grid step is split into equal substeps when the stability bound
        demands it; the coefficients are interpolated linearly in between.
    """
    last = grid.n if t_end is None else grid.index(t_end)
    dt = grid.dt
    bound = np.inf
    for k in sorted(set(range(0, last + 1, max(1, last // 20))) | {last}):
        bound = min(bound, stable_step(generator.at(k), wig))
    sub = max(1, int(np.ceil(dt / bound * 1.05))) if np.isfinite(bound) else 1
    h = dt / sub
    log.info("evolving %d grid steps with %d substeps each", last, sub)
    snaps = [wig]
    norms = [wig.normalization()]
    times = [wig.time]
    cur = wig
    mats = MonomialMatrices(wig, accuracy, boundary)
    for k in range(last):
        for s in range(sub):
            a = _interpolate(generator, k, s / sub)
            b = _interpolate(generator, k, (s + 1) / sub) if s + 1 < sub else generator.at(k + 1)
            cur = step(cur, a, h, b, accuracy=accuracy, check=False, matrices=mats, method=method)
        cur = cur.with_values(cur.values, grid.t[k + 1])
        norms.append(cur.normalization())
        times.append(cur.time)
        if (k + 1) % stride == 0 or k + 1 == last:
            snaps.append(cur)
    cur.check_window()
    return EvolutionResult(snaps, np.array(times), np.array(norms), sub)


# -- snapshot files -------------------------------------------------------------


def write_snapshot(wig, stem, header=None, coarse=None):
    """Write ``stem.bin`` (little-endian float64, C order) and the ``stem.txt`` sidecar.

    Parameters
    ----------
    header : dict, optional
        Extra ``key: value`` lines for the sidecar (e.g. the config hash).
    coarse : int, optional
        Also write ``stem.coarse.txt`` with every ``coarse``-th sample.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    wig.values.astype("<f8").tofile(stem.with_suffix(".bin"))
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    lines += [
        f"nx {wig.shape[0]}",
        f"np {wig.shape[1]}",
        f"x_window {float(wig.x[0])!r} {float(wig.x[-1])!r}",
        f"p_window {float(wig.p[0])!r} {float(wig.p[-1])!r}",
        f"time {float(wig.time)!r}",
        "dtype float64-le",
        "order C (x major)",
    ]
    stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    if coarse:
        sub = wig.values[::coarse, ::coarse]
        head = "\n".join(f"{k}: {v}" for k, v in (header or {}).items())
        np.savetxt(f"{stem}.coarse.txt", sub, fmt="%.8e", header=head)


def read_snapshot(stem):
    """Read a snapshot written by :func:`write_snapshot`."""
    stem = Path(stem)
    meta = {}
    for line in stem.with_suffix(".txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        key, *vals = line.split()
        meta[key] = vals
    nx, np_ = int(meta["nx"][0]), int(meta["np"][0])
    values = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").reshape(nx, np_)
    xw = tuple(float(v) for v in meta["x_window"])
    pw = tuple(float(v) for v in meta["p_window"])
    return WignerGrid.from_window(xw, pw, nx, np_, values, float(meta["time"][0]))
