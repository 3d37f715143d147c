# pylint: disable=redefined-outer-name
"""Shared fixtures: catalog specs, grids and simulated samples."""

import numpy as np
import pytest

from analysis.nonparam import Grid
from analysis.oracle import DgpSpec, QuadratureConfig, population_curves, sample


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    """Keep joblib in-process so tests do not spawn worker pools."""
    monkeypatch.setenv('EIV_THREADS', '1')


@pytest.fixture
def gaussian_spec():
    return DgpSpec.from_catalog('gaussian_symmetric')


@pytest.fixture
def qc():
    return QuadratureConfig()


@pytest.fixture
def pop_grid():
    """[-1, 2] in steps of 0.05; contains 0.5 and 1.0 exactly."""
    return Grid(np.round(np.linspace(-1.0, 2.0, 61), 10))


@pytest.fixture
def pop_curves(gaussian_spec, pop_grid, qc):
    def build(tau, spec=None):
        spec = spec or gaussian_spec
        return population_curves(spec.with_tau(tau), pop_grid, qc)
    return build


@pytest.fixture
def simulated(gaussian_spec):
    """4000 draws from the symmetric Gaussian model at tau = 0.2."""
    return sample(gaussian_spec, 4000, seed=11)


@pytest.fixture
def sample_csv(tmp_path, simulated):
    path = tmp_path / 'data.csv'
    simulated.to_frame().to_csv(path, index=False)
    return path
