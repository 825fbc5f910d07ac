from __future__ import annotations

import numpy as np
import pytest

from fraclab.geometry import Geometry, Label, make_nodeset
from fraclab.grid import Grid
from fraclab.pdo import ForwardProblem, PDOCoefficients, gaussian_coefficient

S = 0.7


@pytest.fixture
def rng():
    return np.random.default_rng(20260117)


@pytest.fixture(scope="module")
def grid1d():
    return Grid(1, 128, 2.0)


@pytest.fixture(scope="module")
def geometry1d(grid1d):
    geometry = Geometry(grid1d)
    geometry.register(make_nodeset(grid1d, "ball", 0.0, radius=1.0, label=Label.OMEGA.value))
    geometry.register(make_nodeset(grid1d, "ball", -1.5, radius=0.4, label=Label.W1.value))
    geometry.register(make_nodeset(grid1d, "ball", 1.5, radius=0.4, label=Label.W2.value))
    return geometry


@pytest.fixture(scope="module")
def omega1d(geometry1d):
    return geometry1d.omega


@pytest.fixture(scope="module")
def coeffs1d(omega1d):
    """a_0 and a_1 Gaussians, the standard m = 1 pair."""
    return PDOCoefficients(
        omega1d.grid,
        1,
        {
            (0,): gaussian_coefficient(omega1d, 0.3, 0.15, 1.0),
            (1,): gaussian_coefficient(omega1d, -0.2, 0.15, 0.5),
        },
    )


@pytest.fixture(scope="module")
def problem1d(grid1d, omega1d, coeffs1d):
    return ForwardProblem(grid1d, S, coeffs1d, omega1d)


@pytest.fixture(scope="module")
def zero_problem1d(grid1d, omega1d):
    return ForwardProblem(grid1d, S, PDOCoefficients.zero(grid1d, 1), omega1d)
