"""Finite-difference evolution of Wigner functions."""

import warnings

import numpy as np
import pytest

from strongqbm.errors import ConfigError, NumericalError, StabilityError
from strongqbm.evolve import (
    WignerGrid,
    WindowWarning,
    evolve,
    gaussian_density,
    init_gaussian,
    read_snapshot,
    stable_step,
    step,
    write_snapshot,
)
from strongqbm.grid import TimeGrid
from strongqbm.master import build_L0
from strongqbm.opalg import PhaseOp
from strongqbm.oracle import covariance_ode

OMEGA = 2.0
H_FREE = np.array([[0.0, -1.0], [OMEGA**2, 0.0]])


def constant_generator(H, D, grid):
    n1 = len(grid)
    return build_L0(np.broadcast_to(H, (n1, 2, 2)).copy(), np.broadcast_to(D, (n1, 2, 2)).copy())


def small_gaussian(mean=(0.5, 0.0), cov=((0.25, 0.0), (0.0, 0.25)), n=65, half_width=4.0):
    return init_gaussian(mean, cov, (-half_width, half_width), (-2 * half_width, 2 * half_width), n, n)


def test_initial_gaussian_moments():
    wig = init_gaussian((0.3, -0.2), [[0.5, 0.1], [0.1, 0.8]], nx=129, np_=129)
    assert wig.normalization() == pytest.approx(1.0, abs=1e-10)
    mean, cov = wig.moments()
    assert np.allclose(mean, [0.3, -0.2], atol=1e-10)
    assert np.allclose(cov, [[0.5, 0.1], [0.1, 0.8]], atol=1e-8)


def test_initial_gaussian_default_window_covers_eight_deviations():
    wig = init_gaussian((1.0, 0.0), [[0.25, 0.0], [0.0, 4.0]], nx=33, np_=33)
    assert wig.x_window == pytest.approx((1.0 - 4.0, 1.0 + 4.0))
    assert wig.p_window == pytest.approx((-16.0, 16.0))


@pytest.mark.parametrize(
    "cov, window, message",
    [
        ([[1.0, 2.0], [2.0, 1.0]], None, "positive definite"),
        ([[1.0, 0.5], [0.0, 1.0]], None, "symmetric"),
        ([[1.0, 0.0], [0.0, 1.0]], (-3.0, 3.0), "6 standard deviations"),
    ],
)
def test_initial_gaussian_errors(cov, window, message):
    with pytest.raises(ConfigError, match=message):
        init_gaussian((0.0, 0.0), cov, x_window=window)


def test_zero_generator_leaves_the_state_unchanged():
    wig = small_gaussian()
    out = step(wig, PhaseOp.zero(), 0.01)
    assert np.array_equal(out.values, wig.values)
    assert out.time == pytest.approx(0.01)


def test_single_step_conserves_normalization():
    wig = small_gaussian()
    op = build_L0(H_FREE, np.diag([0.0, 0.3]))
    out = step(wig, op, 0.002)
    assert abs(out.normalization() - wig.normalization()) < 1e-9


def test_stability_guard():
    wig = small_gaussian()
    op = build_L0(H_FREE, np.diag([0.0, 0.3]))
    bound = stable_step(op, wig)
    with pytest.raises(StabilityError):
        step(wig, op, 2 * bound)


def test_non_finite_values_are_reported():
    wig = small_gaussian()
    values = wig.values.copy()
    values[30, 40] = np.nan
    with pytest.raises(NumericalError, match="non-finite"):
        step(wig.with_values(values), build_L0(H_FREE, np.zeros((2, 2))), 1e-3)


def test_undamped_mean_rotates():
    grid = TimeGrid.from_tmax(np.pi / 4, np.pi / 4 / 200)
    wig = small_gaussian(mean=(1.0, 0.0), n=97, half_width=5.0)
    result = evolve(wig, constant_generator(H_FREE, np.zeros((2, 2)), grid), grid, stride=200)
    mean, cov = result.snapshots[-1].moments()
    # quarter period of omega = 2: x -> cos(2t), p -> -2 sin(2t)
    assert np.allclose(mean, [0.0, -2.0], atol=1e-3)
    assert np.allclose(cov, [[0.0625, 0.0], [0.0, 1.0]], atol=1e-3)


def test_gaussian_state_follows_the_covariance_ode():
    H = np.array([[0.0, -1.0], [OMEGA**2, 0.6]])
    D = np.array([[0.0, 0.05], [0.05, 0.4]])
    grid = TimeGrid.from_tmax(1.0, 0.005)
    wig = small_gaussian(n=97, half_width=5.0)
    result = evolve(wig, constant_generator(H, D, grid), grid, stride=100)
    means, covs = covariance_ode(H, D, grid, (0.5, 0.0), 0.25 * np.eye(2), result.times[::100])
    for snap, mean, cov in zip(result.snapshots, means, covs):
        m, c = snap.moments()
        assert np.max(np.abs(m - mean)) < 1e-3
        assert np.max(np.abs(c - cov)) < 1e-3
    assert np.max(np.abs(result.normalization - 1.0)) < 1e-8
    assert max(abs(k) for k in result.snapshots[-1].marginal_excess_kurtosis()) < 1e-2


def test_negative_values_are_not_clipped():
    wig = small_gaussian(n=81, half_width=5.0)
    xx = wig.x[:, None]
    values = wig.values * (1 - 4 * (xx - 0.5) ** 2)
    wig = wig.with_values(values)
    assert wig.values.min() < 0
    grid = TimeGrid.from_tmax(0.05, 0.005)
    result = evolve(wig, constant_generator(H_FREE, np.diag([0.0, 0.2]), grid), grid)
    final = result.snapshots[-1]
    assert final.values.min() < 0
    assert abs(final.normalization() - wig.normalization()) < 1e-9


def test_evolution_substeps_when_the_grid_step_is_too_coarse():
    grid = TimeGrid.from_tmax(0.2, 0.1)
    wig = small_gaussian()
    result = evolve(wig, constant_generator(H_FREE, np.diag([0.0, 0.2]), grid), grid)
    assert result.substeps > 1
    assert len(result.normalization) == len(grid)


def test_window_warning():
    # a narrow window cuts the Gaussian off one cell inside the left edge
    grid = WignerGrid.from_window((-1.6, 4.0), (-3.0, 3.0), 41, 41)
    wig = grid.with_values(gaussian_density(grid.x, grid.p, np.zeros(2), 0.25 * np.eye(2)))
    with pytest.warns(WindowWarning, match="enlarge the window"):
        assert not wig.check_window()
    roomy = small_gaussian(n=81, half_width=5.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert roomy.check_window()


def test_snapshot_roundtrip(tmp_path):
    wig = small_gaussian().with_values(small_gaussian().values, 1.25)
    write_snapshot(wig, tmp_path / "snap", header={"config_hash": "abc"}, coarse=4)
    back = read_snapshot(tmp_path / "snap")
    assert np.array_equal(back.values, wig.values)
    assert np.array_equal(back.x, wig.x)
    assert np.array_equal(back.p, wig.p)
    assert back.time == 1.25
    assert (tmp_path / "snap.coarse.txt").read_text().startswith("# config_hash: abc")
    assert (tmp_path / "snap.bin").stat().st_size == 8 * wig.values.size


def test_grid_geometry():
    grid = WignerGrid.from_window((-1.0, 1.0), (-2.0, 2.0), 5, 9)
    assert grid.hx == pytest.approx(0.5)
    assert grid.hp == pytest.approx(0.5)
    assert grid.shape == (5, 9)
