from __future__ import annotations

import numpy as np
import pytest
import scipy.fft

from fraclab.errors import GridError, IllConditionedError
from fraclab.geometry import make_nodeset, mollifier, monomial_cutoff
from fraclab.grid import Grid, GridFunction
from fraclab.spectral import (
    apply_symbol,
    bessel_potential,
    bessel_sup_norm,
    dense_matrix,
    derivative,
    frac_laplacian,
    fractional_symbol,
    l2_norm,
    pairing,
    random_smooth_field,
    sobolev_norm,
)

GRIDS = [Grid(1, 256, 2.0), Grid(2, 64, 2.0)]


def rel(a: GridFunction, b: GridFunction) -> float:
    return float(np.max(np.abs(a.values - b.values)) / np.max(np.abs(b.values)))


def plane_wave(grid: Grid) -> tuple[GridFunction, float]:
    k = np.array([3, 2][: grid.n]) * np.pi / grid.L
    wave = GridFunction.from_callable(grid, lambda *x: np.cos(sum(ki * xi for ki, xi in zip(k, x))))
    return wave, float(np.sum(k**2))


@pytest.mark.parametrize("grid", GRIDS, ids=["1d", "2d"])
@pytest.mark.parametrize("s", [0.3, 0.7, 1.5])
def test_plane_wave_eigenfunction(grid, s):
    wave, xi2 = plane_wave(grid)
    assert rel(frac_laplacian(wave, s), wave * xi2**s) <= 1e-12
    assert rel(bessel_potential(wave, -s), wave * (1 + xi2) ** (-s / 2)) <= 1e-12


@pytest.mark.parametrize("grid", GRIDS, ids=["1d", "2d"])
def test_symbol_composition(grid, rng):
    u = random_smooth_field(grid, rng, 0.2)
    s = 0.7
    assert rel(frac_laplacian(frac_laplacian(u, s / 2), s / 2), frac_laplacian(u, s)) <= 1e-10
    assert rel(bessel_potential(bessel_potential(u, 1.0), 1.0), bessel_potential(u, 2.0)) <= 1e-10
    assert rel(bessel_potential(bessel_potential(u, 0.4), -1.1), bessel_potential(u, -0.7)) <= 1e-10
    assert rel(bessel_potential(bessel_potential(u, s), -s), u) <= 1e-12


@pytest.mark.parametrize("grid", GRIDS, ids=["1d", "2d"])
def test_self_adjoint_multipliers(grid, rng):
    u = random_smooth_field(grid, rng, 0.2)
    v = random_smooth_field(grid, rng, 0.3)
    lhs, rhs = pairing(frac_laplacian(u, 0.7), v), pairing(u, frac_laplacian(v, 0.7))
    assert lhs == pytest.approx(rhs, rel=1e-10)
    lhs, rhs = pairing(bessel_potential(u, -0.7), v), pairing(u, bessel_potential(v, -0.7))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_derivative_commutes_with_fractional_laplacian(rng):
    grid = GRIDS[0]
    u = random_smooth_field(grid, rng, 0.2)
    a = derivative(frac_laplacian(u, 0.7), (1,))
    b = frac_laplacian(derivative(u, (1,)), 0.7)
    assert rel(a, b) <= 1e-10


def test_derivative_of_wave():
    grid = Grid(1, 64, 2.0)
    k = 5 * np.pi / grid.L
    u = GridFunction.from_callable(grid, lambda x: np.sin(k * x))
    du = GridFunction.from_callable(grid, lambda x: k * np.cos(k * x))
    assert rel(derivative(u, (1,)), du) <= 1e-12
    assert derivative(u, (0,)) is u


@pytest.mark.parametrize("alpha", [(0,), (1,)])
def test_derivative_of_localized_monomial_on_plateau(alpha):
    grid = Grid(1, 256, 2.0)
    plateau = make_nodeset(grid, "ball", 0.0, radius=0.5)
    v = monomial_cutoff(alpha, plateau, cutoff_width=1.0)
    dv = derivative(v, alpha)
    assert np.max(np.abs(dv.values[plateau.mask] - 1.0)) <= 1e-6


def test_parseval(rng):
    grid = GRIDS[1]
    u = random_smooth_field(grid, rng, 0.2)
    v = random_smooth_field(grid, rng, 0.2)
    axes = grid.axes
    u_hat = scipy.fft.fftn(u.values, axes=axes)
    v_hat = scipy.fft.fftn(v.values, axes=axes)
    spectral = np.sum(u_hat * np.conj(v_hat))
    expected = grid.cell_volume * spectral.real / grid.size
    assert pairing(u, v) == pytest.approx(expected, rel=1e-12)
    assert l2_norm(u) ** 2 == pytest.approx(pairing(u, u), rel=1e-14)


def test_sobolev_norm_monotone_in_order(rng):
    u = random_smooth_field(GRIDS[0], rng, 0.1)
    norms = [sobolev_norm(u, r) for r in (-1.0, -0.3, 0.0, 0.5, 1.0, 2.0)]
    assert all(a <= b for a, b in zip(norms, norms[1:]))
    assert norms[2] == pytest.approx(l2_norm(u), rel=1e-14)


def test_plane_wave_norm_matches_direct_sum():
    grid = Grid(1, 64, 2.0)
    wave, xi2 = plane_wave(grid)
    r = 1.3
    # ‖cos‖² = h Σ cos² = L on the lattice
    expected = (1 + xi2) ** (r / 2) * np.sqrt(grid.L)
    assert sobolev_norm(wave, r) == pytest.approx(expected, rel=1e-12)
    assert bessel_sup_norm(wave, r) == pytest.approx((1 + xi2) ** (r / 2), rel=1e-12)


def test_bump_norms_converge_under_refinement():
    for r in (0.0, 1.0, 2.0, 3.0):
        coarse = sobolev_norm(mollifier(Grid(1, 512, 2.0), 0.0, 0.8), r)
        fine = sobolev_norm(mollifier(Grid(1, 1024, 2.0), 0.0, 0.8), r)
        assert abs(coarse - fine) <= 0.01 * fine


def test_random_smooth_field(rng):
    grid = GRIDS[0]
    support = (np.abs(grid.axis) < 0.5).astype(float)
    u = random_smooth_field(grid, rng, 0.2, support=support, amplitude=3.0)
    assert u.max_abs() == pytest.approx(3.0)
    assert not np.any(u.values[support == 0])
    again = random_smooth_field(grid, np.random.default_rng(5), 0.2)
    twin = random_smooth_field(grid, np.random.default_rng(5), 0.2)
    assert np.array_equal(again.values, twin.values)


def test_dense_matrix_matches_operator(rng):
    grid = Grid(1, 32, 2.0)
    symbol = fractional_symbol(grid, 0.7)
    matrix = dense_matrix(grid, lambda b: apply_symbol(grid, b, symbol), batch=7)
    u = random_smooth_field(grid, rng, 0.3)
    assert np.allclose(matrix @ u.flat, frac_laplacian(u, 0.7).flat, rtol=0, atol=1e-12)


def test_dense_matrix_size_limit():
    with pytest.raises(IllConditionedError, match="dense operator"):
        dense_matrix(Grid(2, 128, 1.0), lambda b: b)


def test_invalid_orders(rng):
    u = random_smooth_field(GRIDS[0], rng)
    with pytest.raises(GridError):
        frac_laplacian(u, -0.5)
    with pytest.raises(GridError):
        bessel_potential(u, np.inf)
    with pytest.raises(GridError, match="multi-index"):
        derivative(u, (1, 0))
