"""Normal-ordered phase-space differential operators.

A :class:`PhaseOp` is a finite sum of monomials ``dx^i dp^j x^k p^l`` with all
derivatives standing to the left of all coordinates.  Coefficients may be
plain numbers (including :class:`fractions.Fraction`) or numpy arrays of a
common shape, in which case every operation acts elementwise and a single
``PhaseOp`` represents a whole time series of operators.
"""

from functools import lru_cache
from math import comb, perm

import numpy as np

from .errors import DegreeOverflowError, GridError

DEFAULT_CAP = 8
PRUNE_REL = 1e-14


def _mag(c):
    return float(np.max(np.abs(c))) if np.ndim(c) else float(abs(c))


class PhaseOp:
    """Normal-ordered operator ``sum c[i,j,k,l] dx^i dp^j x^k p^l``.

    Parameters
    ----------
    terms : dict, optional
        Map from ``(i, j, k, l)`` to coefficient.
    cap : int
        Maximum total degree ``i + j + k + l``.
    """

    __slots__ = ("terms", "cap")
    # let numpy arrays defer to PhaseOp's reflected operators
    __array_ufunc__ = None

    def __init__(self, terms=None, cap=DEFAULT_CAP):
        self.cap = cap
        self.terms = {}
        for key, c in (terms or {}).items():
            key = tuple(int(v) for v in key)
            if len(key) != 4 or min(key) < 0:
                raise ValueError(f"bad monomial key {key}")
            if sum(key) > cap:
                raise DegreeOverflowError(f"monomial {key} exceeds degree cap {cap}")
            self.terms[key] = self.terms.get(key, 0) + c
        self._canonicalize()

    # -- construction ------------------------------------------------------

    @classmethod
    def identity(cls, coeff=1.0, cap=DEFAULT_CAP):
        return cls({(0, 0, 0, 0): coeff}, cap)

    @classmethod
    def zero(cls, cap=DEFAULT_CAP):
        return cls({}, cap)

    @classmethod
    def monomial(cls, i, j, k, l, coeff=1.0, cap=DEFAULT_CAP):
        return cls({(i, j, k, l): coeff}, cap)

    @classmethod
    def gradient(cls, v, cap=DEFAULT_CAP):
        """First-order operator ``v[0] dx + v[1] dp`` (``v`` may hold arrays)."""
        return cls({(1, 0, 0, 0): v[0], (0, 1, 0, 0): v[1]}, cap)

    @classmethod
    def coordinate(cls, w, cap=DEFAULT_CAP):
        """Multiplication by ``w[0] x + w[1] p``."""
        return cls({(0, 0, 1, 0): w[0], (0, 0, 0, 1): w[1]}, cap)

    def _canonicalize(self):
        if not self.terms:
            return
        mags = {key: _mag(c) for key, c in self.terms.items()}
        top = max(mags.values())
        self.terms = {
            key: c for key, c in self.terms.items() if mags[key] > PRUNE_REL * top and mags[key] > 0
        }

    # -- inspection --------------------------------------------------------

    def __getitem__(self, key):
        return self.terms.get(tuple(key), 0.0)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(sorted(self.terms.items()))

    def keys(self):
        return sorted(self.terms)

    @property
    def degree(self):
        return max((sum(k) for k in self.terms), default=0)

    @property
    def derivative_order(self):
        return max((k[0] + k[1] for k in self.terms), default=0)

    def is_zero(self):
        return not self.terms

    def at(self, index):
        """Scalar operator from array coefficients at ``index``."""
        return PhaseOp(
            {k: (c[index] if np.ndim(c) else c) for k, c in self.terms.items()}, self.cap
        )

    def map(self, fn):
        """Apply ``fn`` to every coefficient."""
        return PhaseOp({k: fn(c) for k, c in self.terms.items()}, self.cap)

    def sector(self, predicate):
        """Sub-operator of monomials whose key satisfies ``predicate``."""
        return PhaseOp({k: c for k, c in self.terms.items() if predicate(k)}, self.cap)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, PhaseOp):
            other = PhaseOp.identity(other, self.cap)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return PhaseOp(out, max(self.cap, other.cap))

    __radd__ = __add__

    def __neg__(self):
        return PhaseOp({k: -c for k, c in self.terms.items()}, self.cap)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, PhaseOp):
            return product(self, scalar)
        return PhaseOp({k: c * scalar for k, c in self.terms.items()}, self.cap)

    def __rmul__(self, scalar):
        return PhaseOp({k: scalar * c for k, c in self.terms.items()}, self.cap)

    def __matmul__(self, other):
        return product(self, other)

    def __pow__(self, n):
        if n < 0:
            raise ValueError("negative powers are not defined")
        out = PhaseOp.identity(1.0, self.cap)
        for _ in range(n):
            out = product(out, self)
        return out

    def __eq__(self, other):
        if not isinstance(other, PhaseOp):
            return NotImplemented
        return self.keys() == other.keys() and all(
            np.array_equal(self.terms[k], other.terms[k]) for k in self.terms
        )

    def __repr__(self):
        n = len(self.terms)
        return f"PhaseOp({n} monomial{'s' if n != 1 else ''}, degree {self.degree})"

    def max_abs_difference(self, other):
        """Largest coefficient difference over the union of monomials."""
        diff = self - other
        return max((_mag(c) for c in diff.terms.values()), default=0.0)


def _reorder(k, i):
    """``z^k d^i`` in normal order: list of ``(r, coefficient)`` for ``d^(i-r) z^(k-r)``."""
    return [((-1) ** r * comb(i, r) * perm(k, r), r) for r in range(min(i, k) + 1)]


def product(a, b):
    """Composition ``a o b`` in normal order.

    Raises
    ------
    DegreeOverflowError
        If a resulting monomial exceeds the degree cap.
    """
    cap = max(a.cap, b.cap)
    out = {}
    for (i1, j1, k1, l1), c1 in a.terms.items():
        for (i2, j2, k2, l2), c2 in b.terms.items():
            if i1 + j1 + k1 + l1 + i2 + j2 + k2 + l2 > cap:
                raise DegreeOverflowError(
                    f"product of degree {i1 + j1 + k1 + l1} and {i2 + j2 + k2 + l2} exceeds cap {cap}"
                )
            c12 = c1 * c2
            for fx, r in _reorder(k1, i2):
                for fp, s in _reorder(l1, j2):
                    key = (i1 + i2 - r, j1 + j2 - s, k1 - r + k2, l1 - s + l2)
                    term = c12 * (fx * fp)
                    out[key] = out[key] + term if key in out else term
    return PhaseOp(out, cap)


def commutator(a, b):
    """``[a, b] = a o b - b o a``."""
    return product(a, b) - product(b, a)


# -- dump format ---------------------------------------------------------------


def dumps(op):
    """One line per monomial: ``coeff dx^i dp^j x^k p^l``, sorted by key."""
    lines = []
    for (i, j, k, l), c in op:
        if np.ndim(c):
            raise ValueError("only scalar operators can be dumped")
        lines.append(f"{float(c):.17g} dx^{i} dp^{j} x^{k} p^{l}")
    return "\n".join(lines) + ("\n" if lines else "")


def loads(text, cap=DEFAULT_CAP):
    terms = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        c, *mono = line.split()
        key = tuple(int(m.split("^")[1]) for m in mono)
        terms[key] = terms.get(key, 0.0) + float(c)
    return PhaseOp(terms, cap)


# -- application to functions --------------------------------------------------


def apply_polynomial(op, poly):
    """Apply a scalar operator to a polynomial ``{(k, l): coeff}`` exactly."""
    out = {}
    for (i, j, k, l), c in op.terms.items():
        for (a, b), pc in poly.items():
            a2, b2 = a + k, b + l
            if i > a2 or j > b2:
                continue
            coeff = c * pc * perm(a2, i) * perm(b2, j)
            key = (a2 - i, b2 - j)
            out[key] = out.get(key, 0) + coeff
    return {k: v for k, v in out.items() if v != 0}


def fd_weights(offsets, deriv):
    """Finite-difference weights for the ``deriv``-th derivative on integer ``offsets``."""
    return _fd_weights(tuple(float(o) for o in np.asarray(offsets).ravel()), int(deriv)).copy()


@lru_cache(maxsize=512)
def _fd_weights(offsets, deriv):
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    mat = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(mat, rhs)


def derivative(values, h, deriv, axis, accuracy=2):
    """Finite-difference derivative of ``values`` along ``axis``.

    Central stencils in the interior, one-sided stencils of the same order
    near the edges (no periodic wrap).
    """
    if deriv == 0:
        return values
    if accuracy not in (2, 4):
        raise ValueError("accuracy must be 2 or 4")
    f = np.moveaxis(values, axis, 0)
    npts = f.shape[0]
    half = (deriv + accuracy - 1) // 2
    width = deriv + accuracy
    if npts < max(2 * half + 1, width):
        raise GridError(
            f"derivative order {deriv} needs at least {max(2 * half + 1, width)} points, grid has {npts}"
        )
    out = np.empty_like(f)
    w = fd_weights(np.arange(-half, half + 1), deriv)
    acc = np.zeros_like(f[half : npts - half])
    for o, wk in zip(range(-half, half + 1), w):
        acc += wk * f[half + o : npts - half + o]
    out[half : npts - half] = acc
    for i in list(range(half)) + list(range(npts - half, npts)):
        start = min(max(i - half, 0), npts - width)
        offs = np.arange(start, start + width) - i
        out[i] = np.tensordot(fd_weights(offs, deriv), f[start : start + width], axes=(0, 0))
    return np.moveaxis(out / h**deriv, 0, axis)


def apply(op, wig, accuracy=2):
    """Apply a scalar operator to a :class:`~strongqbm.evolve.WignerGrid`.

    Coordinates multiply first, then derivatives act (normal order read right
    to left).  Returns a new grid with the same window and time stamp.
    """
    return wig.with_values(apply_array(op, wig.values, wig.x, wig.p, accuracy))


def apply_array(op, values, x, p, accuracy=2):
    """Apply a scalar operator to samples ``values[ix, ip]`` on axes ``x``, ``p``."""
    hx, hp = x[1] - x[0], p[1] - p[0]
    xx = x[:, None]
    pp = p[None, :]
    # group monomials by derivative pair so each stencil is applied once
    groups = {}
    for (i, j, k, l), c in op.terms.items():
        if np.ndim(c):
            raise ValueError("apply needs scalar coefficients; select a time with op.at(index)")
        groups.setdefault((i, j), []).append((k, l, c))
    out = np.zeros_like(values, dtype=float)
    for (i, j), mons in groups.items():
        inner = np.zeros_like(values, dtype=float)
        for k, l, c in mons:
            inner += c * (xx**k) * (pp**l) * values
        inner = derivative(inner, hx, i, 0, accuracy)
        inner = derivative(inner, hp, j, 1, accuracy)
        out += inner
    return out
