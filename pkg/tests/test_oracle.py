"""Independent reference calculations: noise sampling, Langevin ensembles, closed forms."""

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import build_stages
from strongqbm.covariance import delta1_coeff, s_kernel
from strongqbm.errors import CovarianceError, NumericalError
from strongqbm.oracle import (
    NoiseEnsemble,
    _matchings,
    covariance_ode,
    cross_covariance,
    embedded_propagator,
    ensemble_moments,
    equal_time_covariance,
    integrate_langevin,
    noise_covariance_estimate,
    noise_factor,
    potential_force,
    propagated_noise_estimate,
    run_langevin,
    sample_noise,
    talbot_greens_function,
    two_time_covariance,
)

FAMILIES = [
    dict(family="ohmic_lorentz"),
    dict(family="ohmic_exp"),
    dict(family="local", gamma0=0.5, temperature=2.0),
]
FAMILY_IDS = ["lorentz", "exp", "local"]


def test_noise_draws_have_the_tabulated_covariance():
    stages = build_stages(t_max=0.5, dt=0.01)
    ens = sample_noise(stages.kernels, stages.grid, 100_000, seed=7)
    assert ens.draws.shape == (100_000, stages.grid.n)
    cov = stages.kernels.noise_matrix()
    pairs = [(0, 0), (0, 1), (3, 5), (10, 10), (10, 30), (20, 21), (49, 0), (25, 40), (7, 7), (45, 44)]
    est, err = noise_covariance_estimate(ens, pairs)
    ref = np.array([cov[i, j] for i, j in pairs])
    assert np.all(np.abs(est - ref) < 5 * err)
    mean_err = np.abs(ens.draws.mean(axis=0)) / (ens.draws.std(axis=0) / np.sqrt(ens.n_samples))
    assert np.max(mean_err) < 5


def test_noise_draws_are_reproducible():
    stages = build_stages(t_max=0.5, dt=0.01)
    a = sample_noise(stages.kernels, stages.grid, 10, seed=3)
    b = sample_noise(stages.kernels, stages.grid, 10, seed=3)
    c = sample_noise(stages.kernels, stages.grid, 10, seed=4)
    assert np.array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


def test_noise_factor_rejects_indefinite_covariance():
    with pytest.raises(CovarianceError):
        noise_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_noise_factor_handles_singular_and_zero_covariance():
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    factor = noise_factor(singular)
    assert np.allclose(factor @ factor.T, singular, atol=1e-9)
    assert np.array_equal(noise_factor(np.zeros((3, 3))), np.zeros((3, 3)))


@pytest.mark.parametrize("params", FAMILIES, ids=FAMILY_IDS)
def test_noiseless_trajectories_follow_the_propagator(params):
    stages = build_stages(t_max=2.0, dt=0.005, **params)
    z0 = np.array([0.7, -0.4])
    ens = NoiseEnsemble(stages.grid, np.zeros((1, stages.grid.n)))
    traj = integrate_langevin(stages.model, ens, z0)
    expected = np.einsum("iab,b->ia", stages.prop.phi[traj.indices], z0)
    tol = 1e-3 if params["family"] == "ohmic_exp" else 1e-7
    assert np.max(np.abs(traj.z[0, 1:] - expected[1:])) < tol


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_trajectory_blow_up_is_reported():
    stages = build_stages(t_max=1.0, dt=0.01)
    ens = NoiseEnsemble(stages.grid, np.zeros((1, stages.grid.n)))
    # inverted quartic potential: the particle escapes to infinity in finite time
    with pytest.raises(NumericalError, match="blow-up|non-finite"):
        integrate_langevin(stages.model, ens, (3.0, 0.0), vprime=(0.0, 0.0, 0.0, -50.0))


def test_potential_force_forms():
    stages = build_stages(t_max=1.0, dt=0.01)
    assert potential_force(stages.model)(1.5) == pytest.approx(4.0 * 1.5)
    assert potential_force(stages.model, (0.0, 1.0, 0.0, 2.0))(2.0) == pytest.approx(2.0 + 16.0)


@pytest.mark.parametrize("params", FAMILIES, ids=FAMILY_IDS)
def test_langevin_ensemble_reproduces_two_time_covariance(params):
    stages = build_stages(t_max=1.0, dt=0.005, **params)
    keep = [stages.grid.index(t) for t in (0.25, 0.5, 1.0)]
    traj = run_langevin(stages.model, stages.kernels, 20_000, seed=11, keep=keep)
    for a, b in ((keep[0], keep[0]), (keep[1], keep[2]), (keep[0], keep[2]), (keep[2], keep[2])):
        est, err = two_time_covariance(traj, a, b)
        ref = stages.cov.sigma[a, b]
        assert np.all(np.abs(est - ref) <= 3 * err + 1e-12)


def test_gaussian_initial_state_matches_master_equation_moments():
    stages = build_stages(t_max=1.0, dt=0.005)
    mean0, cov0 = np.array([0.5, 0.0]), 0.25 * np.eye(2)
    keep = [stages.grid.index(1.0)]
    traj = run_langevin(stages.model, stages.kernels, 20_000, seed=5, keep=keep, initial=(mean0, cov0))
    means, covs = covariance_ode(stages.master.H, stages.master.D, stages.grid, mean0, cov0, [1.0])
    mean, cov = ensemble_moments(traj, keep[0])
    _, cov_err = equal_time_covariance(traj, keep[0])
    mean_err = np.sqrt(np.diag(cov) / traj.n_samples)
    assert np.all(np.abs(mean - means[0]) < 3 * mean_err)
    assert np.all(np.abs(cov - covs[0]) < 3 * cov_err)


def test_propagated_noise_estimates_match_quadrature():
    stages = build_stages(t_max=1.0, dt=0.005)
    i_tau, i_t = stages.grid.index(0.4), stages.grid.index(1.0)
    traj = run_langevin(stages.model, stages.kernels, 40_000, seed=21, keep=[i_tau, i_t])
    d, d_err, s, s_err = propagated_noise_estimate(traj, stages.prop, i_tau, i_t)
    assert np.all(np.abs(d - delta1_coeff(stages.prop, stages.cov, i_tau, i_t)) < 3 * d_err)
    assert abs(s - s_kernel(stages.prop, stages.cov, i_tau, i_t)) < 3 * s_err


def test_ensemble_chunks_are_reproducible():
    stages = build_stages(t_max=0.5, dt=0.01)
    keep = [10, 50]
    a = run_langevin(stages.model, stages.kernels, 300, seed=9, keep=keep, chunk=128)
    b = run_langevin(stages.model, stages.kernels, 300, seed=9, keep=keep, chunk=128)
    assert np.array_equal(a.z, b.z)
    assert a.z.shape == (300, 2, 2)
    with pytest.raises(KeyError):
        a.column(20)


def test_cross_covariance_example():
    a = np.array([[1.0], [2.0], [3.0], [4.0]])
    b = np.array([[2.0], [4.0], [6.0], [8.0]])
    est, _ = cross_covariance(a, b)
    assert est[0, 0] == pytest.approx(np.cov(a[:, 0], b[:, 0])[0, 1])


def test_embedding_and_laplace_inversion_agree(benchmark):
    times = np.array([0.1, 0.5, 1.0, 2.5, 5.0])
    assert np.allclose(embedded_propagator(benchmark.model, times)[:, 0, 1],
                       talbot_greens_function(benchmark.model, times), atol=1e-12)


@pytest.mark.parametrize("k, count", [(0, 1), (1, 1), (2, 2), (3, 4), (4, 10)])
def test_partial_pairing_counts(k, count):
    assert len(list(_matchings(list(range(k))))) == count


def test_covariance_ode_without_diffusion_is_linear_flow():
    stages = build_stages(gamma0=0.0, t_max=1.0, dt=0.01)
    H = np.array([[0.3, -1.0], [4.0, 0.1]])
    means, covs = covariance_ode(H, np.zeros((2, 2)), stages.grid, (1.0, 0.5), np.eye(2), [0.6])
    flow = expm(-0.6 * H)
    assert np.allclose(means[0], flow @ [1.0, 0.5], atol=1e-8)
    assert np.allclose(covs[0], flow @ flow.T, atol=1e-8)
