"""
Discrete Fourier symbol calculus on the periodic grid.

All multipliers act as F^{-1}(σ(ξ) F u) with scipy's n-dimensional FFT over the
trailing axes, so any number of leading batch axes can be carried along.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np
import scipy.fft

from .errors import GridError, IllConditionedError
from .grid import Grid, GridFunction, require_same_grid
from .lab_vars import DENSE_MAX_GRID
from .utils import MultiIndex, chunks

logger = logging.getLogger("fraclab.spectral")


def fractional_symbol(grid: Grid, s: float) -> np.ndarray:
    """|ξ|^{2s}; the zero mode maps to 0 for s > 0 and to 1 for s = 0."""
    return np.power(grid.xi_squared, s)


def bessel_symbol(grid: Grid, r: float) -> np.ndarray:
    """⟨ξ⟩^r = (1 + |ξ|²)^{r/2}."""
    return np.power(1.0 + grid.xi_squared, 0.5 * r)


def apply_symbol(grid: Grid, values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier to ``values`` of shape (..., N, [N]); returns the real part."""
    axes = grid.axes
    spectrum = scipy.fft.fftn(values, axes=axes)
    return scipy.fft.ifftn(spectrum * symbol, axes=axes).real


def frac_laplacian(u: GridFunction, s: float) -> GridFunction:
    """(-Δ)^s u."""
    if not np.isfinite(s) or s < 0:
        raise GridError(f"fractional order must be finite and >= 0, got {s}")
    if s == 0:
        return u
    return GridFunction(u.grid, apply_symbol(u.grid, u.values, fractional_symbol(u.grid, s)))


def bessel_potential(u: GridFunction, r: float) -> GridFunction:
    """J^r u = F^{-1}(⟨ξ⟩^r û)."""
    if not np.isfinite(r):
        raise GridError(f"Bessel order must be finite, got {r}")
    if r == 0:
        return u
    return GridFunction(u.grid, apply_symbol(u.grid, u.values, bessel_symbol(u.grid, r)))


def l2_norm(u: GridFunction) -> float:
    return float(np.sqrt(u.grid.cell_volume * np.sum(u.values**2)))


def sobolev_norm(u: GridFunction, r: float) -> float:
    """‖u‖_{H^r} = ‖J^r u‖_{L²}."""
    return l2_norm(bessel_potential(u, r))


def sup_norm(u: GridFunction) -> float:
    """Grid maximum; a lower bound for the continuum L^∞ norm."""
    return u.max_abs()


def bessel_sup_norm(u: GridFunction, r: float) -> float:
    """Grid version of the H^{r,∞} norm, max |J^r u|."""
    return sup_norm(bessel_potential(u, r))


def _check_alpha(grid: Grid, alpha) -> MultiIndex:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != grid.n:
        raise GridError(f"multi-index {alpha} does not match dimension {grid.n}")
    if any(a < 0 for a in alpha):
        raise GridError(f"multi-index {alpha} has a negative entry")
    return alpha


def derivative(u: GridFunction, alpha) -> GridFunction:
    """Plain partial derivative ∂^α u, spectral symbol (iξ)^α."""
    alpha = _check_alpha(u.grid, alpha)
    if not any(alpha):
        return u
    return GridFunction(
        u.grid, apply_symbol(u.grid, u.values, u.grid.derivative_symbol(alpha))
    )


def derivative_values(grid: Grid, values: np.ndarray, alpha: MultiIndex) -> np.ndarray:
    """Batched ∂^α on raw arrays with trailing grid axes."""
    if not any(alpha):
        return values
    return apply_symbol(grid, values, grid.derivative_symbol(alpha))


def pairing(u: GridFunction, v: GridFunction) -> float:
    """Bilinear duality pairing h^n Σ u v (no conjugation)."""
    grid = require_same_grid(u, v)
    return float(grid.cell_volume * np.sum(u.values * v.values))


def random_smooth_field(
    grid: Grid,
    rng: np.random.Generator,
    length_scale: float = 0.25,
    support: np.ndarray | None = None,
    amplitude: float = 1.0,
) -> GridFunction:
    """Seeded band-limited random field with spectrum damped by exp(-|ξ|²ℓ²/2).

    If a smooth ``support`` weight (e.g. a cutoff) is given the field is multiplied by it.
    The result is scaled to grid maximum ``amplitude``.
    """
    noise = rng.standard_normal(grid.shape)
    damp = np.exp(-0.5 * grid.xi_squared * length_scale**2)
    values = apply_symbol(grid, noise, damp)
    if support is not None:
        values = values * support
    peak = np.max(np.abs(values))
    if peak > 0:
        values = amplitude * values / peak
    return GridFunction(grid, values)


def dense_matrix(
    grid: Grid, operator: Callable[[np.ndarray], np.ndarray], batch: int = 256
) -> np.ndarray:
    """Matrix of a linear map on grid fields.

    Column k is ``operator`` applied to node k's indicator.

    ``operator`` must accept arrays with one leading batch axis.
    """
    if grid.size > DENSE_MAX_GRID:
        raise IllConditionedError(
            f"dense operator needs N^n <= {DENSE_MAX_GRID}, got {grid.size}; "
            f"use a power-iteration estimate instead"
        )
    matrix = np.empty((grid.size, grid.size))
    for cols in chunks(range(grid.size), batch):
        unit = np.zeros((len(cols), grid.size))
        unit[np.arange(len(cols)), np.arange(cols.start, cols.stop)] = 1.0
        image = operator(unit.reshape(len(cols), *grid.shape))
        matrix[:, cols.start : cols.stop] = image.reshape(len(cols), -1).T
    return matrix
