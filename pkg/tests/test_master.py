"""Zeroth- and first-order generators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from conftest import build_stages
from strongqbm.master import (
    ForcingSpec,
    build_L0,
    build_L1,
    build_L1_inner,
    delta_k,
    hpz_coefficients,
    local_operator,
    two_time_operator,
)
from strongqbm.opalg import PhaseOp
from strongqbm.errors import ConfigError
from strongqbm.oracle import conditional_gaussian_moment, wick_delta
from strongqbm.propagator import phi_rel


def forcing(kind, n1, t):
    """Smooth sample forcing of each kind on a grid of length ``n1``."""
    if kind == "external":
        return ForcingSpec(kind, np.stack([0.3 * np.sin(t), 0.5 + np.cos(1.3 * t)], -1))
    if kind == "linear":
        k = np.zeros((n1, 2, 2))
        k[:, 1, 0] = 0.5 + 0.1 * t
        k[:, 0, 1] = 0.2
        return ForcingSpec(kind, k)
    if kind == "quadratic":
        return ForcingSpec(kind, 0.4 + 0.1 * np.sin(t))
    if kind == "cubic":
        return ForcingSpec(kind, 0.3 * np.cos(t))
    return ForcingSpec(kind, [(1, 2, 0.2 * np.ones(n1)), (2, 1, 0.1 * t), (1, 0, np.cos(t))])


KINDS = ["external", "linear", "quadratic", "cubic", "polynomial"]


def test_uncoupled_drift_is_the_hamiltonian_flow():
    stages = build_stages(gamma0=0.0, t_max=1.0, dt=0.01)
    expected = np.array([[0.0, -1.0], [4.0, 0.0]])
    assert np.max(np.abs(stages.master.H - expected)) < 1e-8
    assert np.max(np.abs(stages.master.D)) < 1e-12


def test_diffusion_starts_at_zero(benchmark):
    assert np.max(np.abs(benchmark.master.D[0])) < 1e-8


def test_drift_reproduces_the_propagator(benchmark):
    prop, H = benchmark.prop, benchmark.master.H
    resid = prop.phidot + np.einsum("iab,ibc->iac", H, prop.phi)
    assert np.max(np.linalg.norm(resid, axis=(1, 2)) / np.linalg.norm(prop.phidot, axis=(1, 2))) < 1e-6


def test_local_high_temperature_diffusion_limit():
    stages = build_stages(family="local", gamma0=0.5, temperature=20.0, t_max=5.0, dt=0.01)
    m, g0, T = 1.0, 0.5, 20.0
    assert stages.master.D[-1, 1, 1] == pytest.approx(2 * m * g0 * T, rel=0.01)
    assert abs(stages.master.D[-1, 0, 0]) < 0.01 * 2 * m * g0 * T


def test_single_time_coefficients_match_the_table(short_lorentz):
    coeffs = hpz_coefficients(short_lorentz.prop, short_lorentz.cov, 0.5)
    assert np.array_equal(coeffs.H, short_lorentz.master.H[50])
    assert coeffs.L0 == short_lorentz.master.L0.at(50)


def test_build_L0_example():
    op = build_L0(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [6.0, 7.0]]))
    assert op.terms == {
        (1, 0, 1, 0): 1.0, (1, 0, 0, 1): 2.0, (0, 1, 1, 0): 3.0, (0, 1, 0, 1): 4.0,
        (2, 0, 0, 0): 5.0, (0, 2, 0, 0): 7.0, (1, 1, 0, 0): 12.0,
    }


def test_forcing_validation():
    with pytest.raises(ConfigError):
        ForcingSpec("external", np.zeros((5, 3)))
    with pytest.raises(ConfigError):
        ForcingSpec("polynomial", [(0, 0, np.ones(5))])
    with pytest.raises(ValueError):
        ForcingSpec("sextic", np.ones(5))


def test_quantum_deformation_companions():
    n1 = 4
    quad = ForcingSpec("quadratic", np.ones(n1))
    assert local_operator(quad, 0).terms == {(0, 1, 2, 0): 1.0, (0, 3, 0, 0): -1 / 12}
    cubic = ForcingSpec("cubic", np.ones(n1))
    assert local_operator(cubic, 0).terms == {(0, 1, 3, 0): 1.0, (0, 3, 1, 0): -0.25}
    classical = ForcingSpec("cubic", np.ones(n1), classical_characteristics_only=True)
    assert local_operator(classical, 0).terms == {(0, 1, 3, 0): 1.0}


@pytest.mark.parametrize("kind", KINDS)
def test_two_time_operator_reduces_to_the_local_one_at_equal_times(short_lorentz, kind):
    spec = forcing(kind, len(short_lorentz.grid), short_lorentz.grid.t)
    for k in (1, 37, 100):
        op = two_time_operator(spec, short_lorentz.prop, short_lorentz.cov, k, k)
        assert op.keys() == local_operator(spec, k).keys()
        assert op.max_abs_difference(local_operator(spec, k)) < 1e-12


def test_external_two_time_operator_is_propagated_force(short_lorentz):
    grid, prop = short_lorentz.grid, short_lorentz.prop
    spec = forcing("external", len(grid), grid.t)
    tau, t = 30, 80
    force = spec.values[tau]
    op = two_time_operator(spec, prop, short_lorentz.cov, tau, t)
    expected = PhaseOp.gradient(-(prop.phi[t - tau] @ force))
    assert op.max_abs_difference(expected) < 1e-14


def test_linear_two_time_operator_example(short_lorentz):
    # grad^T K z  ->  grad^T Phi(t - tau) K [Phi(tau, t) z + Delta_1]
    grid, prop, cov = short_lorentz.grid, short_lorentz.prop, short_lorentz.cov
    spec = forcing("linear", len(grid), grid.t)
    tau, t = 40, 90
    K = spec.values[tau]
    back = prop.phi[t - tau]
    rel = phi_rel(prop, tau, t)
    op = two_time_operator(spec, prop, cov, tau, t)
    # homogeneous sector: grad^T back K rel z
    mat = back @ K @ rel
    for (a, b), key in {(0, 0): (1, 0, 1, 0), (0, 1): (1, 0, 0, 1), (1, 0): (0, 1, 1, 0), (1, 1): (0, 1, 0, 1)}.items():
        assert op[key] == pytest.approx(mat[a, b], abs=1e-13)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_recursion_matches_wick_enumeration(k, sign):
    d, s = (0.7, -1.3), 0.45
    assert delta_k(d, s, k, sign).max_abs_difference(wick_delta(d, s, k, sign)) < 1e-12


def test_delta_examples():
    d, s = (2.0, 3.0), 0.5
    grad = PhaseOp.gradient(d)
    assert delta_k(d, s, 0) == PhaseOp.identity()
    assert delta_k(d, s, 1) == grad
    assert delta_k(d, s, 2).max_abs_difference(grad @ grad + s) < 1e-15
    assert delta_k(d, s, 3).max_abs_difference(grad @ grad @ grad + 3 * s * grad) < 1e-15
    with pytest.raises(ValueError):
        delta_k(d, s, -1)


@settings(max_examples=30, deadline=None)
@given(
    c=st.floats(-1.0, 1.0),
    extra=st.floats(0.05, 2.0),
    v=st.floats(0.3, 3.0),
    k=st.integers(1, 4),
    z=st.floats(-2.0, 2.0),
)
def test_gaussian_recursion_reproduces_conditional_moments(c, extra, v, k, z):
    # For zero-mean jointly Gaussian (eta, Z):  E[eta^k delta(z - Z)] = Delta_k P(z)
    # with d = -Cov(eta, Z), s = Var(eta) and the + contraction sign.
    e = c**2 / v + extra
    op = delta_k((-c, 0.0), e, k, 1.0)
    total = 0.0
    for (i, j, kk, ll), coef in op.terms.items():
        assert j == kk == ll == 0
        # d^i/dz^i N(0, v)(z) / N(0, v)(z) = (-1)^i He_i(z / sqrt v) / v^(i/2)
        unit = np.zeros(i + 1)
        unit[i] = 1.0
        total += coef * (-1) ** i * hermite_e.hermeval(z / np.sqrt(v), unit) / v ** (i / 2)
    assert total == pytest.approx(float(conditional_gaussian_moment(k, z, c, v, e)), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_first_order_generator_has_divergence_form(short_lorentz, kind):
    grid = short_lorentz.grid
    spec = forcing(kind, len(grid), grid.t)
    table = build_L1(spec, short_lorentz.prop, short_lorentz.cov, short_lorentz.master)
    assert all(i + j >= 1 for i, j, _, _ in table.L1.keys())
    # the t = 0 value is the bare perturbation
    assert table.at(0) == local_operator(spec, 0)


def test_external_force_generator_is_a_pure_drift(short_lorentz):
    grid = short_lorentz.grid
    table = build_L1(forcing("external", len(grid), grid.t), short_lorentz.prop, short_lorentz.cov,
                     short_lorentz.master)
    assert set(table.L1.keys()) <= {(1, 0, 0, 0), (0, 1, 0, 0)}
    assert set(table.drift()) == set(table.L1.keys())


def test_external_force_has_no_correction_for_local_damping(short_local):
    grid = short_local.grid
    # a physical force acts on the momentum row only
    force = np.zeros((len(grid), 2))
    force[:, 1] = 0.5 + np.cos(1.3 * grid.t)
    table = build_L1(ForcingSpec("external", force), short_local.prop, short_local.cov, short_local.master)
    scale = np.max(np.abs(force))
    assert np.max(np.abs(table.L1.terms.get((1, 0, 0, 0), 0.0))) < 1e-6 * scale
    assert np.max(np.abs(table.L1.terms[(0, 1, 0, 0)] + force[:, 1])) < 1e-6 * scale


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_inner_and_outer_forms_agree(short_lorentz, kind):
    grid = short_lorentz.grid
    spec = forcing(kind, len(grid), grid.t)
    table = build_L1(spec, short_lorentz.prop, short_lorentz.cov, short_lorentz.master)
    for k in (30, 70):
        inner = build_L1_inner(spec, short_lorentz.prop, short_lorentz.cov, short_lorentz.master, k)
        outer = table.at(k)
        scale = max(abs(c) for c in outer.terms.values())
        assert inner.max_abs_difference(outer) / scale < 1e-4


def test_two_time_operator_needs_ordered_times(short_lorentz):
    spec = forcing("quadratic", len(short_lorentz.grid), short_lorentz.grid.t)
    with pytest.raises(ValueError):
        two_time_operator(spec, short_lorentz.prop, short_lorentz.cov, 50, 20)
