"""Shared fixtures: a compute-friendly 1-d setup (n = 1024, box = 100)
reused across the unit tests; the acceptance suite builds the full desk
scale itself."""

from __future__ import annotations

import numpy as np
import pytest

from nlslab.grid import Grid
from nlslab.pipeline import build_pipeline
from nlslab.potentials import poschl_teller
from nlslab.spectrum import discrete_spectrum


@pytest.fixture(scope="session")
def grid1d():
    return Grid(1, 1024, 100.0)


@pytest.fixture(scope="session")
def pt_spectrum(grid1d):
    return discrete_spectrum(poschl_teller(grid1d, nu=1.3), k=2)


@pytest.fixture(scope="session")
def pipe_single(pt_spectrum):
    """One branch window around mu = 0.05 with modes, NF and FGR."""
    return build_pipeline(pt_spectrum, 1.0, np.array([0.04, 0.05, 0.06]))


@pytest.fixture(scope="session")
def pipe_sweep(pt_spectrum):
    """A delta-sweep across a decade of the bifurcation offset."""
    offsets = np.array([1e-3, 2.5e-3, 5e-3, 1e-2])
    return build_pipeline(pt_spectrum, 1.0, offsets)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
