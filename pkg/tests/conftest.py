"""Shared fixtures: cached linear-model pipelines and the acceptance report."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pytest

from strongqbm.bath import SpectralModel, kernel_table
from strongqbm.covariance import sigma_table
from strongqbm.grid import TimeGrid
from strongqbm.master import hpz_table
from strongqbm.propagator import greens_function

ACCEPTANCE_LINES = {}


@dataclass
class Stages:
    """Kernels, propagator, covariance and HPZ table for one linear model."""

    model: SpectralModel
    grid: TimeGrid
    kernels: object
    prop: object
    cov: object
    master: object


@lru_cache(maxsize=None)
def build_stages(family="ohmic_lorentz", gamma0=2.0, temperature=0.5, t_max=5.0, dt=0.005,
                 cutoff=10.0, omega=2.0, mass=1.0):
    """Run the linear pipeline once per parameter set (cached across tests)."""
    model = SpectralModel(family, gamma0, cutoff=cutoff, temperature=temperature, mass=mass, omega=omega)
    grid = TimeGrid.from_tmax(t_max, dt)
    kernels = kernel_table(model, grid)
    prop = greens_function(model, grid)
    cov = sigma_table(prop, kernels)
    master = hpz_table(prop, cov)
    return Stages(model, grid, kernels, prop, cov, master)


@pytest.fixture(scope="session")
def benchmark():
    """Benchmark Lorentz-cutoff model: gamma0=2, Lambda=10, T=0.5, t_max=5, dt=0.005."""
    return build_stages()


@pytest.fixture(scope="session")
def short_lorentz():
    """Short strongly damped Lorentz run for operator-level tests."""
    return build_stages(t_max=1.0, dt=0.01)


@pytest.fixture(scope="session")
def short_local():
    """Short local-damping run."""
    return build_stages(family="local", gamma0=0.5, temperature=2.0, t_max=1.0, dt=0.01)


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, title, passed, detail):
        status = "PASS" if passed else "FAIL"
        line = f"{status} criterion {number:2d} {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def max_relative(a, b):
    """``max |a - b| / max |b|``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
