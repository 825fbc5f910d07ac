"""
Node sets for Ω, W₁, W₂, smooth bumps and cutoff-localized monomials.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import GeometryError, GridError
from .grid import Grid, GridFunction
from .lab_vars import CUTOFF_WIDTH_CELLS, SEPARATION_CELLS
from .utils import MultiIndex

logger = logging.getLogger("fraclab.geometry")


class Label(str, Enum):
    OMEGA = "Omega"
    W1 = "W1"
    W2 = "W2"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Index subset of the grid.

    Args:
        grid (Grid): host grid
        mask (np.ndarray): boolean mask of shape ``grid.shape``
        label (str): one of ``Omega``, ``W1``, ``W2``, ``custom``
        margin (float): guaranteed distance to the other labelled sets (set on registration)
        shape (str): ``ball``, ``box`` or ``custom`` (no analytic description)
        center (tuple): shape centre
        radius (float, optional): ball radius
        half_widths (tuple, optional): box half-widths per axis
    """

    grid: Grid
    mask: np.ndarray
    label: str = Label.CUSTOM.value
    margin: float = 0.0
    shape: str = "custom"
    center: tuple[float, ...] = ()
    radius: float | None = None
    half_widths: tuple[float, ...] | None = None

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise GridError(f"mask shape {mask.shape} does not match grid {self.grid.shape}")
        if not mask.any():
            raise GeometryError(f"node set {self.label!r} is empty")
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def indices(self) -> np.ndarray:
        """Flat (row-major) node indices."""
        return np.flatnonzero(self.mask.ravel())

    @property
    def points(self) -> np.ndarray:
        return self.grid.points[self.indices]

    def indicator(self) -> GridFunction:
        return GridFunction(self.grid, self.mask.astype(float))

    def contains(self, mask: np.ndarray) -> bool:
        return not np.any(np.asarray(mask, dtype=bool) & ~self.mask)

    def distance(self, other: NodeSet) -> float:
        """Minimum periodic distance between the nodes of the two sets (0 if they overlap)."""
        if np.any(self.mask & other.mask):
            return 0.0
        box = 2.0 * self.grid.L
        tree = cKDTree(np.mod(self.points + self.grid.L, box), boxsize=box)
        dist, _ = tree.query(np.mod(other.points + self.grid.L, box), k=1)
        return float(np.min(dist))

    def exterior_distance(self) -> np.ndarray:
        """Distance of every node to the analytic shape, zero inside it."""
        if self.shape == "ball":
            return np.maximum(self.grid.distance_to(self.center) - self.radius, 0.0)
        if self.shape == "box":
            sq = sum(
                np.maximum(np.abs(self.grid.periodic_delta(x, c)) - hw, 0.0) ** 2
                for x, c, hw in zip(self.grid.coords, self.center, self.half_widths)
            )
            return np.sqrt(sq)
        raise GeometryError(f"node set {self.label!r} has no analytic shape")

    def cutoff(self, width: float) -> np.ndarray:
        """C^∞ function equal to 1 on the shape and 0 at distance >= ``width``."""
        if width <= 0:
            raise GeometryError(f"cutoff width must be positive, got {width}")
        if self.shape == "ball":
            return smooth_step(1.0 - self.exterior_distance() / width)
        if self.shape == "box":
            # tensor product keeps the corners smooth
            out = np.ones(self.grid.shape)
            for x, c, hw in zip(self.grid.coords, self.center, self.half_widths):
                d = np.maximum(np.abs(self.grid.periodic_delta(x, c)) - hw, 0.0)
                out = out * smooth_step(1.0 - d / width)
            return out
        raise GeometryError(f"node set {self.label!r} has no analytic shape")


def _shape_mask(grid: Grid, shape: str, center, radius, half_widths) -> np.ndarray:
    tol = 1e-12 * grid.h
    if shape == "ball":
        return grid.distance_to(center) <= radius + tol
    mask = np.ones(grid.shape, dtype=bool)
    for x, c, hw in zip(grid.coords, center, half_widths):
        mask &= np.abs(grid.periodic_delta(x, c)) <= hw + tol
    return mask


def make_nodeset(
    grid: Grid,
    shape: str,
    center,
    radius: float | None = None,
    half_widths=None,
    label: str = Label.CUSTOM.value,
) -> NodeSet:
    """Ball or box node set; rejects empty shapes and shapes wrapping onto themselves."""
    center = tuple(float(c) for c in np.broadcast_to(np.asarray(center, dtype=float), (grid.n,)))
    if shape == "ball":
        if radius is None or radius <= 0:
            raise GeometryError(f"{label}: ball radius must be positive, got {radius}")
        if radius >= grid.L:
            raise GeometryError(
                f"{label}: ball radius {radius} does not fit the box (L = {grid.L})"
            )
        half_widths = None
    elif shape == "box":
        if half_widths is None:
            raise GeometryError(f"{label}: box needs half_widths")
        half_widths = tuple(
            float(w) for w in np.broadcast_to(np.asarray(half_widths, dtype=float), (grid.n,))
        )
        if any(w <= 0 for w in half_widths):
            raise GeometryError(f"{label}: box half-widths must be positive, got {half_widths}")
        if any(w >= grid.L for w in half_widths):
            raise GeometryError(f"{label}: box {half_widths} does not fit the box (L = {grid.L})")
        radius = None
    else:
        raise GeometryError(f"{label}: unknown shape {shape!r}, expected 'ball' or 'box'")

    mask = _shape_mask(grid, shape, center, radius, half_widths)
    return NodeSet(
        grid, mask, label=label, shape=shape, center=center, radius=radius, half_widths=half_widths
    )


def shrink(nodeset: NodeSet, width: float, label: str = Label.CUSTOM.value) -> NodeSet:
    """Same shape with radius / half-widths reduced by ``width``."""
    if nodeset.shape == "ball":
        radius = nodeset.radius - width
        if radius <= 0:
            raise GeometryError(f"shrinking {nodeset.label!r} by {width} leaves nothing")
        return make_nodeset(nodeset.grid, "ball", nodeset.center, radius=radius, label=label)
    if nodeset.shape == "box":
        hws = tuple(w - width for w in nodeset.half_widths)
        if any(w <= 0 for w in hws):
            raise GeometryError(f"shrinking {nodeset.label!r} by {width} leaves nothing")
        return make_nodeset(nodeset.grid, "box", nodeset.center, half_widths=hws, label=label)
    raise GeometryError(f"node set {nodeset.label!r} has no analytic shape")


@dataclass
class Geometry:
    """Registry of labelled node sets with pairwise separation checks."""

    grid: Grid
    separation: float | None = None
    sets: dict[str, NodeSet] = field(default_factory=dict)

    def __post_init__(self):
        if self.separation is None:
            self.separation = SEPARATION_CELLS * self.grid.h

    def register(self, nodeset: NodeSet) -> NodeSet:
        if nodeset.grid != self.grid:
            raise GridError(f"node set grid {nodeset.grid} differs from registry grid {self.grid}")
        if nodeset.label in self.sets:
            raise GeometryError(f"node set {nodeset.label!r} already registered")
        for other in self.sets.values():
            dist = nodeset.distance(other)
            if dist < self.separation - 1e-12 * self.grid.h:
                raise GeometryError(
                    f"{nodeset.label!r} is {dist:.4g} from {other.label!r}; closures must be "
                    f"disjoint with margin >= {self.separation:.4g}"
                )
        registered = replace(nodeset, margin=self.separation)
        self.sets[nodeset.label] = registered
        logger.debug(f"Registered {nodeset.label} with {nodeset.count} nodes")
        return registered

    def __getitem__(self, label: str) -> NodeSet:
        return self.sets[label]

    @property
    def omega(self) -> NodeSet:
        return self.sets[Label.OMEGA.value]


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C^∞ step: 0 for t <= 0, 1 for t >= 1, g(t)/(g(t)+g(1-t)) with g(t) = exp(-1/t)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)

    def g(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a, b = g(t), g(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class BumpSpec:
    center: tuple[float, ...]
    radius: float
    kind: str = "mollifier"


def _bump_values(grid: Grid, center, radius: float) -> np.ndarray:
    if radius <= 0:
        raise GeometryError(f"bump radius must be positive, got {radius}")
    t2 = (grid.distance_to(center) / radius) ** 2
    values = np.zeros(grid.shape)
    inside = t2 < 1.0
    values[inside] = np.exp(-1.0 / (1.0 - t2[inside]))
    total = grid.cell_volume * values.sum()
    if total == 0:
        raise GeometryError(f"bump of radius {radius} at {center} covers no grid node")
    return values / total


def mollifier(grid: Grid, center, radius: float) -> GridFunction:
    """Unit-mass bump exp(-1/(1-|x-c|²/ρ²)) without ownership checks."""
    return GridFunction(grid, _bump_values(grid, center, radius))


def bump(spec: BumpSpec, owner: NodeSet) -> GridFunction:
    """Unit-mass mollifier bump whose support must lie inside ``owner``."""
    if spec.kind != "mollifier":
        raise GeometryError(f"unknown bump kind {spec.kind!r}")
    values = _bump_values(owner.grid, spec.center, spec.radius)
    if not owner.contains(values > 0):
        raise GeometryError(
            f"bump at {spec.center} with radius {spec.radius} escapes {owner.label!r}"
        )
    return GridFunction(owner.grid, values)


def ball_footprint(grid: Grid, radius: float) -> np.ndarray:
    """Offsets (as a boolean stencil) at distance < ``radius`` from the centre node."""
    reach = math.ceil(radius / grid.h)
    offsets = np.arange(-reach, reach + 1) * grid.h
    mesh = np.meshgrid(*([offsets] * grid.n), indexing="ij")
    return np.sqrt(sum(o**2 for o in mesh)) < radius


def erode(grid: Grid, mask: np.ndarray, radius: float) -> np.ndarray:
    """Nodes of ``mask`` whose open ``radius``-ball holds only nodes of ``mask``."""
    footprint = ball_footprint(grid, radius)
    return ndimage.minimum_filter(
        np.asarray(mask, dtype=np.uint8), footprint=footprint, mode="wrap"
    ).astype(bool)


def ball_centers(host: NodeSet, radius: float, stride: int = 1) -> np.ndarray:
    """Coordinates (K, n) of lattice nodes whose open ``radius``-ball lies in ``host``.

    Lattice nodes are those whose every grid index is a multiple of ``stride``, so centres
    for a stride are a subset of the centres for any divisor of it.
    """
    grid = host.grid
    inner = erode(grid, host.mask, radius)
    idx = np.argwhere(inner)
    idx = idx[np.all(idx % stride == 0, axis=1)]
    return -grid.L + grid.h * idx.astype(float)


def monomial_cutoff(
    alpha: MultiIndex,
    plateau: NodeSet,
    cutoff_width: float | None = None,
    domain: NodeSet | None = None,
) -> GridFunction:
    """x^α on ``plateau`` times a smooth collar of width ``cutoff_width`` (default 8h).

    Coordinates are global, so D^α of the result equals α! on the plateau.
    """
    grid = plateau.grid
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != grid.n or any(a < 0 for a in alpha):
        raise GridError(f"invalid multi-index {alpha} for dimension {grid.n}")
    width = CUTOFF_WIDTH_CELLS * grid.h if cutoff_width is None else cutoff_width
    chi = plateau.cutoff(width)
    if domain is not None:
        if not domain.contains(plateau.mask):
            raise GeometryError(f"plateau is not contained in {domain.label!r}")
        if not domain.contains(chi > 0):
            raise GeometryError(
                f"cutoff collar of width {width:.4g} exits {domain.label!r}; "
                f"shrink the plateau or narrow the collar"
            )
    monomial = np.ones(grid.shape)
    for x, a in zip(grid.coords, alpha):
        if a:
            monomial = monomial * x**a
    return GridFunction(grid, monomial * chi)


def restrict(u: GridFunction, nodes: NodeSet) -> np.ndarray:
    if u.grid != nodes.grid:
        raise GridError(f"grid mismatch: {u.grid} vs {nodes.grid}")
    return u.values[nodes.mask]


def extend_zero(vector: np.ndarray, nodes: NodeSet) -> GridFunction:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (nodes.count,):
        raise GridError(f"vector of shape {vector.shape} does not match {nodes.count} nodes")
    values = np.zeros(nodes.grid.shape)
    values[nodes.mask] = vector
    return GridFunction(nodes.grid, values)
