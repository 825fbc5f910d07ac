"""
Periodic grids on the torus [-L, L)^n and the real fields sampled on them.

The torus stands in for R^n: every Fourier multiplier used downstream is
exact on this discrete space, at the price of wrap-around interactions that
the geometry module keeps at a distance.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import GridError
from .lab_vars import DUMP_MAGIC
from .utils import MultiIndex

logger = logging.getLogger("fraclab.grid")

_HEADER = struct.Struct("<4sqqd")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid.

    Args:
        n (int): spatial dimension, 1 or 2
        N (int): points per axis, even and at least 16
        L (float): half box-length; nodes sit at x_j = -L + j h with h = 2L / N
    """

    n: int
    N: int
    L: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise GridError(f"dimension n must be 1 or 2, got {self.n}")
        if self.N < 16 or self.N % 2:
            raise GridError(f"N must be even and >= 16, got {self.N}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise GridError(f"half box-length L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def axes(self) -> tuple[int, ...]:
        """Trailing array axes holding the spatial dimensions."""
        return tuple(range(-self.n, 0))

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates as an (N^n, n) array in row-major order."""
        return np.stack([c.ravel() for c in self.coords], axis=1)

    @cached_property
    def freqs(self) -> np.ndarray:
        """Per-axis frequencies ξ_k = πk/L in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.freqs] * self.n), indexing="ij"))

    @cached_property
    def xi_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def _derivative_factors(self) -> tuple[np.ndarray, ...]:
        # iξ_j with the Nyquist mode zeroed so odd derivatives stay real and skew-adjoint
        factors = []
        for k in self.wavenumbers:
            f = 1j * k
            f[np.isclose(np.abs(k), np.pi / self.h)] = 0.0
            factors.append(f)
        return tuple(factors)

    def derivative_symbol(self, alpha: MultiIndex) -> np.ndarray:
        symbol = np.ones(self.shape, dtype=complex)
        for factor, a in zip(self._derivative_factors, alpha):
            if a:
                symbol = symbol * factor**a
        return symbol

    def periodic_delta(self, x: np.ndarray, c: float) -> np.ndarray:
        """Signed periodic offset x - c folded into [-L, L)."""
        period = 2.0 * self.L
        return (x - c + self.L) % period - self.L

    def distance_to(self, center) -> np.ndarray:
        """Periodic Euclidean distance of every node to ``center``."""
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.n,))
        sq = sum(self.periodic_delta(x, c) ** 2 for x, c in zip(self.coords, center))
        return np.sqrt(sq)

    def nearest_node(self, point) -> tuple[int, ...]:
        point = np.broadcast_to(np.asarray(point, dtype=float), (self.n,))
        return tuple(int(round((p + self.L) / self.h)) % self.N for p in point)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real field sampled on a :class:`Grid`; values are stored read-only in row-major order."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            if values.size != self.grid.size:
                raise GridError(
                    f"field has {values.size} values, grid {self.grid} needs {self.grid.size}"
                )
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise GridError("field contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> GridFunction:
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> GridFunction:
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_callable(cls, grid: Grid, func: Callable[..., np.ndarray]) -> GridFunction:
        """Sample ``func(*coords)`` on the grid."""
        return cls(grid, np.broadcast_to(func(*grid.coords), grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _coerce(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise GridError(f"grid mismatch: {self.grid} vs {other.grid}")
            return other.values
        return other

    def __add__(self, other) -> GridFunction:
        return GridFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other) -> GridFunction:
        return GridFunction(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other) -> GridFunction:
        return GridFunction(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other) -> GridFunction:
        return GridFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> GridFunction:
        return GridFunction(self.grid, self.values / other)

    def __neg__(self) -> GridFunction:
        return GridFunction(self.grid, -self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __repr__(self) -> str:
        return f"GridFunction({self.grid}, max|u|={self.max_abs():.3e})"


def require_same_grid(*fields: GridFunction) -> Grid:
    grid = fields[0].grid
    for u in fields[1:]:
        if u.grid != grid:
            raise GridError(f"grid mismatch: {grid} vs {u.grid}")
    return grid


def write_dump(path: str | Path, u: GridFunction) -> Path:
    """Binary dump: magic, n, N (int64), L (float64), then N^n float64, little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = u.grid
    with path.open("wb") as f:
        f.write(_HEADER.pack(DUMP_MAGIC, grid.n, grid.N, float(grid.L)))
        f.write(u.flat.astype("<f8").tobytes())
    logger.debug(f"Wrote grid dump {path}")
    return path


def read_dump(path: str | Path) -> GridFunction:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise GridError(f"{path}: truncated header")
    magic, n, N, L = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise GridError(f"{path}: bad magic {magic!r}, expected {DUMP_MAGIC!r}")
    grid = Grid(int(n), int(N), float(L))
    payload = raw[_HEADER.size :]
    if len(payload) != 8 * grid.size:
        raise GridError(f"{path}: payload holds {len(payload) // 8} values, expected {grid.size}")
    return GridFunction(grid, np.frombuffer(payload, dtype="<f8"))
