"""Damping and noise kernels of the bath families."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from strongqbm.bath import (
    SpectralModel,
    damping_kernel,
    damping_kernel_derivative,
    damping_spectrum,
    kernel_table,
    laplace_damping,
    noise_kernel,
    noise_spectrum,
    white_noise_level,
    zero_point_kernel,
)
from strongqbm.errors import SymbolicKernelError
from strongqbm.grid import TimeGrid

LORENTZ = SpectralModel("ohmic_lorentz", 2.0, cutoff=10.0, temperature=0.5, omega=2.0)
EXPCUT = SpectralModel("ohmic_exp", 2.0, cutoff=10.0, temperature=0.5, omega=2.0)
LOCAL = SpectralModel("local", 0.5, temperature=2.0, omega=2.0)


@pytest.mark.parametrize("model", [LORENTZ, EXPCUT], ids=["lorentz", "exp"])
def test_damping_kernel_integrates_to_gamma0_over_the_line(model):
    half, _ = integrate.quad(lambda t: float(damping_kernel(model, t)), 0, np.inf)
    assert 2 * half == pytest.approx(model.gamma0, rel=1e-9)


@pytest.mark.parametrize("model", [LORENTZ, EXPCUT], ids=["lorentz", "exp"])
@pytest.mark.parametrize("eps", [0.3, 4.0, 17.0])
def test_damping_spectrum_is_cosine_transform_of_kernel(model, eps):
    val, _ = integrate.quad(lambda t: float(damping_kernel(model, t)), 0, np.inf, weight="cos", wvar=eps)
    assert 2 * val == pytest.approx(float(damping_spectrum(model, eps)), rel=1e-7)


def test_lorentz_kernel_decays_to_zero():
    assert damping_kernel(LORENTZ, 5.0) < 1e-20
    assert damping_kernel(LORENTZ, 0.0) == pytest.approx(LORENTZ.gamma0 * LORENTZ.cutoff / 2)


@pytest.mark.parametrize("model", [LORENTZ, EXPCUT], ids=["lorentz", "exp"])
def test_kernel_derivative_matches_finite_difference(model):
    t, h = 0.37, 1e-5
    fd = (damping_kernel(model, t + h) - damping_kernel(model, t - h)) / (2 * h)
    assert damping_kernel_derivative(model, t) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("model", [LORENTZ, EXPCUT], ids=["lorentz", "exp"])
def test_laplace_transform_matches_quadrature(model):
    s = 1.7
    val, _ = integrate.quad(lambda t: float(damping_kernel(model, t)) * np.exp(-s * t), 0, np.inf)
    assert complex(laplace_damping(model, s)).real == pytest.approx(val, rel=1e-8)


def test_local_kernel_must_be_symbolic():
    with pytest.raises(SymbolicKernelError):
        damping_kernel(LOCAL, 0.1)


def test_local_quantum_noise_is_rejected():
    cold = SpectralModel("local", 0.5, temperature=0.0, omega=2.0)
    with pytest.raises(SymbolicKernelError, match="UV-divergent"):
        white_noise_level(cold)
    assert white_noise_level(LOCAL) == pytest.approx(4 * 0.5 * 2.0)


@pytest.mark.parametrize("bad", [dict(gamma0=-1.0), dict(cutoff=0.0), dict(temperature=-0.1), dict(mass=0.0)])
def test_model_validation(bad):
    params = dict(family="ohmic_lorentz", gamma0=1.0, cutoff=1.0, temperature=1.0, mass=1.0, omega=1.0)
    params.update(bad)
    with pytest.raises(ValueError):
        SpectralModel(**params)


@settings(max_examples=60, deadline=None)
@given(
    eps=st.floats(0.0, 1e4),
    temperature=st.floats(0.0, 100.0),
    family=st.sampled_from(["ohmic_lorentz", "ohmic_exp"]),
)
def test_noise_spectrum_is_nonnegative_and_even(eps, temperature, family):
    model = SpectralModel(family, 1.3, cutoff=7.0, temperature=temperature, omega=1.0)
    val = float(noise_spectrum(model, eps))
    assert val >= 0
    assert float(noise_spectrum(model, -eps)) == val


def test_noise_spectrum_low_frequency_limit():
    # eps coth(eps / 2T) -> 2T as eps -> 0
    assert float(noise_spectrum(LORENTZ, 0.0)) == pytest.approx(2 * LORENTZ.temperature * LORENTZ.gamma0)


@pytest.mark.parametrize("t", [0.05, 0.2, 0.7, 2.0])
def test_noise_kernel_routes_agree(t):
    fourier = noise_kernel(LORENTZ, t, "fourier")
    matsubara = noise_kernel(LORENTZ, t, "matsubara")
    split = noise_kernel(LORENTZ, t, "split")
    scale = abs(noise_kernel(LORENTZ, 0.05, "split"))
    assert abs(matsubara - fourier) < 1e-6 * scale
    assert abs(split - fourier) < 1e-6 * scale


def test_noise_kernel_is_even():
    assert noise_kernel(LORENTZ, -0.3, "split") == noise_kernel(LORENTZ, 0.3, "split")


def test_noise_kernel_log_singular_at_zero():
    assert noise_kernel(LORENTZ, 0.0) == np.inf


def test_zero_temperature_kernel_matches_fourier_route():
    cold = SpectralModel("ohmic_lorentz", 2.0, cutoff=10.0, temperature=0.0, omega=2.0)
    for t in (0.1, 0.5, 1.5):
        assert float(zero_point_kernel(cold, t)) == pytest.approx(noise_kernel(cold, t, "fourier"), rel=1e-6)


def test_exp_cutoff_routes_agree():
    for t in (0.1, 0.6):
        assert noise_kernel(EXPCUT, t, "split") == pytest.approx(noise_kernel(EXPCUT, t, "fourier"), rel=1e-6)


@pytest.mark.parametrize("ratio", [10.0, 100.0])
def test_classical_limit_error_shrinks_with_temperature(ratio):
    cold = SpectralModel("ohmic_lorentz", 2.0, cutoff=10.0, temperature=ratio * 10.0, omega=2.0)
    hot = SpectralModel("ohmic_lorentz", 2.0, cutoff=10.0, temperature=10 * ratio * 10.0, omega=2.0)
    times = np.array([0.01, 0.05, 0.2])

    def worst(model):
        nu = np.array([noise_kernel(model, t, "split") for t in times])
        classical = 2 * model.mass * model.temperature * damping_kernel(model, times)
        return np.max(np.abs(nu - classical)) / (2 * model.mass * model.temperature * damping_kernel(model, 0.0))

    assert worst(hot) < worst(cold)


def test_cell_averages_match_quadrature():
    grid = TimeGrid.from_tmax(0.5, 0.05)
    table = kernel_table(LORENTZ, grid)
    dt = grid.dt
    for k in (2, 5, 9):
        # covariance of two cell averages k cells apart: triangle-weighted kernel average
        val, _ = integrate.quad(
            lambda u: (1 - abs(u) / dt) / dt * noise_kernel(LORENTZ, k * dt + u, "split"), -dt, dt, points=[0.0]
        )
        assert table.nu_cell[k] == pytest.approx(val, rel=1e-6)


def test_noise_matrix_is_positive_semidefinite():
    grid = TimeGrid.from_tmax(1.0, 0.01)
    table = kernel_table(LORENTZ, grid)
    cov = table.noise_matrix()
    assert np.allclose(cov, cov.T)
    eig = np.linalg.eigvalsh(cov)
    assert eig.min() > -1e-10 * eig.max()


def test_local_table_is_white():
    grid = TimeGrid.from_tmax(0.5, 0.05)
    table = kernel_table(LOCAL, grid)
    assert table.nu_cell[0] == pytest.approx(white_noise_level(LOCAL) / grid.dt)
    assert np.all(table.nu_cell[1:] == 0)
    assert table.delta_gamma == pytest.approx(2 * LOCAL.gamma0)
