"""Consistency checks of the first-order generator against independent routes.

External force
    For ``dL = -grad^T F`` the first-order generator must be the pure drift
    ``-grad^T {F(t) + int_0^t [Phidot(t-tau) + H(t) Phi(t-tau)] F(tau) dtau}``,
    which vanishes beyond ``dL`` for local damping.
Linear force
    For ``dL = grad^T K z`` the perturbed propagator is
    ``Phi_1(t) = -int_0^t Phi(t - tau) K Phi(tau) dtau``; pushing it through
    the drift and diffusion formulas gives ``H_1`` and ``D_1`` without any
    operator algebra.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .covariance import cell_integrals, equal_time_cross, noise_response
from .master import ForcingSpec, build_L1
from .quadrature import uniform_weights

log = logging.getLogger(__name__)

DRIFT_KEYS = {(1, 0, 0, 0): 0, (0, 1, 0, 0): 1}
HOMOGENEOUS_KEYS = {(1, 0, 1, 0): (0, 0), (1, 0, 0, 1): (0, 1), (0, 1, 1, 0): (1, 0), (0, 1, 0, 1): (1, 1)}
DIFFUSION_KEYS = {(2, 0, 0, 0): ((0, 0), 1.0), (0, 2, 0, 0): ((1, 1), 1.0), (1, 1, 0, 0): ((0, 1), 0.5)}


def external_force_reference(force, prop, master):
    """Drift vector of the first-order generator for an external force.

    Returns ``v(t)`` (shape (n+1, 2)) with ``L1 = grad^T v``.
    """
    dt = prop.grid.dt
    n1 = len(prop.g)
    out = np.zeros((n1, 2))
    out[0] = -force[0]
    for k in range(1, n1):
        kern = prop.phidot[k::-1] + np.einsum("ab,ibc->iac", master.H[k], prop.phi[k::-1])
        integrand = np.einsum("iab,ib->ia", kern, force[: k + 1])
        out[k] = -force[k] - dt * uniform_weights(k) @ integrand
    return out


def operator_drift(l1_table):
    """Drift vector ``v`` with ``grad^T v`` the first-derivative, coordinate-free part of ``L1``."""
    n1 = len(l1_table.grid)
    out = np.zeros((n1, 2))
    for key, idx in DRIFT_KEYS.items():
        if key in l1_table.L1.terms:
            out[:, idx] = l1_table.L1.terms[key]
    return out


@dataclass
class LinearReference:
    """First-order drift and diffusion from the perturbed-propagator route."""

    phi1: np.ndarray
    phi1dot: np.ndarray
    H1: np.ndarray
    D1: np.ndarray
    sigma1: np.ndarray


def linear_force_reference(K, prop, kernels, cov, master):
    """``H_1`` and ``D_1`` for a constant momentum-row linear force ``K``.

    Parameters
    ----------
    K : ndarray, shape (2, 2)
        Constant matrix with a nonzero lower-left entry only (a spring
        shift); the perturbed propagator is then time-translation invariant.
    """
    K = np.asarray(K, dtype=float)
    if np.any(K[0] != 0) or K[1, 1] != 0:
        raise ValueError("the propagator route supports a constant spring shift K = [[0,0],[k,0]]")
    dt = prop.grid.dt
    n1 = len(prop.g)
    phi, phid = prop.phi, prop.phidot
    kphi = np.einsum("ab,ibc->iac", K, phi)
    phi1 = np.zeros((n1, 2, 2))
    phi1dot = np.zeros((n1, 2, 2))
    phi1dot[0] = -kphi[0]
    for k in range(1, n1):
        w = dt * uniform_weights(k)
        phi1[k] = -np.einsum("i,iab,ibc->ac", w, phi[k::-1], kphi[: k + 1])
        phi1dot[k] = -kphi[k] - np.einsum("i,iab,ibc->ac", w, phid[k::-1], kphi[: k + 1])
    H0 = master.H
    inv0 = prop.phi_inv
    H1 = -np.einsum("iab,ibc->iac", phi1dot + np.einsum("iab,ibc->iac", H0, phi1), inv0)
    # noise responses Phi_0 p_hat and Phi_1 p_hat
    resp0 = noise_response(prop)
    f1 = phi1[:, :, 1]
    f1dot = phi1dot[:, :, 1]
    b1, bd1 = cell_integrals(f1, f1dot, dt)
    resp1 = (b1, bd1, f1, f1dot)
    s10, s10dot = equal_time_cross(resp1, resp0, kernels)
    sigma1 = s10 + np.swapaxes(s10, 1, 2)
    sigma1dot = s10dot + np.swapaxes(s10dot, 1, 2)
    sig0 = cov.equal_time
    a = np.einsum("iab,ibc->iac", H1, sig0) + np.einsum("iab,ibc->iac", H0, sigma1)
    D1 = 0.5 * (a + np.swapaxes(a, 1, 2) + sigma1dot)
    D1[0] = 0.0
    return LinearReference(phi1, phi1dot, H1, D1, sigma1)


def operator_linear_coefficients(l1_table):
    """``H_1`` and ``D_1`` read off the homogeneous and diffusion sectors of ``L1``."""
    n1 = len(l1_table.grid)
    H1 = np.zeros((n1, 2, 2))
    D1 = np.zeros((n1, 2, 2))
    terms = l1_table.L1.terms
    for key, (i, j) in HOMOGENEOUS_KEYS.items():
        if key in terms:
            H1[:, i, j] = terms[key]
    for key, ((i, j), f) in DIFFUSION_KEYS.items():
        if key in terms:
            D1[:, i, j] = f * terms[key]
            D1[:, j, i] = f * terms[key]
    return H1, D1


def relative_error(a, b, skip=0, scale=None):
    """``max |a - b| / max |b|`` over grid indices from ``skip`` on.

    ``scale`` replaces ``max |b|`` when the reference vanishes identically.
    """
    a, b = np.asarray(a)[skip:], np.asarray(b)[skip:]
    if scale is None:
        scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a - b)))


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self):
        return bool(self.value < self.threshold)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


def consistency_suite(prop, kernels, cov, master, force=None, spring=0.5):
    """Run the external-force and linear-force checks on one model.

    Parameters
    ----------
    force : ndarray, shape (n+1, 2), optional
        External force samples; defaults to a smooth momentum-row drive.
    spring : float
        Strength of the constant spring shift used for the linear check.
    """
    grid = prop.grid
    if force is None:
        force = np.zeros((len(grid), 2))
        force[:, 1] = np.cos(1.3 * grid.t) + 0.5
    results = []
    ext = build_L1(ForcingSpec("external", force), prop, cov, master)
    drift = operator_drift(ext)
    ref = external_force_reference(force, prop, master)
    if prop.model.is_local:
        corr = np.max(np.abs(drift + force)) / np.max(np.abs(force))
        results.append(CheckResult("external force, local damping: correction / |F|", corr, 1e-6))
    else:
        results.append(CheckResult("external force drift vs closed form", relative_error(drift, ref), 1e-4))
    K = np.array([[0.0, 0.0], [spring, 0.0]])
    spec = ForcingSpec("linear", np.broadcast_to(K, (len(grid), 2, 2)).copy())
    lin = build_L1(spec, prop, cov, master)
    H1, D1 = operator_linear_coefficients(lin)
    lref = linear_force_reference(K, prop, kernels, cov, master)
    results.append(CheckResult("linear force H1 vs propagator route", relative_error(H1, lref.H1), 1e-4))
    if prop.model.is_local:
        # D1 vanishes for local damping; measure the mismatch against D0 instead
        scale = float(np.max(np.abs(master.D)))
        results.append(CheckResult("linear force D1 vs propagator route (relative to |D0|)",
                                   relative_error(D1, lref.D1, scale=scale), 1e-3))
    else:
        results.append(CheckResult("linear force D1 vs propagator route", relative_error(D1, lref.D1), 1e-3))
    return results
