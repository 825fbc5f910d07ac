"""
Exterior Dirichlet-to-Neumann maps over bump dictionaries, the duality check
and the Alessandrini identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import yaml
from tqdm import tqdm

from . import lab_vars
from .errors import FracLabError, GeometryError, IllConditionedError, ProblemError
from .geometry import BumpSpec, NodeSet, ball_centers, bump, make_nodeset
from .grid import Grid, GridFunction
from .pdo import (
    ForwardProblem,
    bilinear_B,
    coefficient_cutoff,
    solve_adjoint,
    solve_forward,
)
from .spectral import derivative, l2_norm, pairing, random_smooth_field
from .utils import MultiIndex, alpha_key, write_csv

logger = logging.getLogger("fraclab.dnmap")


@dataclass(frozen=True, eq=False)
class ExteriorDictionary:
    """Finite family of exterior data supported in ``host``.

    ``centers`` and ``radius`` describe the generating bumps; they are empty / 0 for
    hand-built dictionaries.
    """

    host: NodeSet
    elements: tuple[GridFunction, ...]
    centers: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    radius: float = 0.0
    normalize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        for i, g in enumerate(self.elements):
            if g.grid != self.host.grid:
                raise GeometryError(f"dictionary element {i} lives on a different grid")
            if not self.host.contains(g.values != 0):
                raise GeometryError(
                    f"dictionary element {i} is not supported in {self.host.label!r}"
                )

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def grid(self) -> Grid:
        return self.host.grid

    def stacked(self) -> np.ndarray:
        """Elements as a (K, N^n) array."""
        return np.stack([g.flat for g in self.elements])

    def gram(self) -> np.ndarray:
        stack = self.stacked()
        return self.grid.cell_volume * stack @ stack.T

    def gram_condition(self) -> float:
        return float(np.linalg.cond(self.gram()))

    def prefix(self, k: int) -> ExteriorDictionary:
        """First ``k`` elements; prefixes of one dictionary are nested."""
        if not 0 < k <= len(self):
            raise ValueError(f"prefix length {k} outside 1..{len(self)}")
        centers = self.centers[:k] if len(self.centers) else self.centers
        return ExteriorDictionary(
            self.host, self.elements[:k], centers, self.radius, self.normalize
        )

    def combine(self, coefficients: np.ndarray) -> GridFunction:
        """Σ c_k g_k."""
        coefficients = np.asarray(coefficients, dtype=float)
        values = np.tensordot(coefficients, self.stacked(), axes=1)
        return GridFunction(self.grid, values)

    def describe(self) -> dict:
        host = self.host
        return {
            "host": {
                "label": host.label,
                "shape": host.shape,
                "center": [float(c) for c in host.center],
                "radius": None if host.radius is None else float(host.radius),
                "half_widths": None
                if host.half_widths is None
                else [float(w) for w in host.half_widths],
            },
            "radius": float(self.radius),
            "normalize": self.normalize,
            "centers": [[float(c) for c in row] for row in self.centers],
        }

    @classmethod
    def from_description(cls, grid: Grid, desc: dict) -> ExteriorDictionary:
        h = desc["host"]
        host = make_nodeset(
            grid,
            h["shape"],
            h["center"],
            radius=h["radius"],
            half_widths=h["half_widths"],
            label=h["label"],
        )
        centers = np.asarray(desc["centers"], dtype=float).reshape(-1, grid.n)
        return _bump_dictionary(host, centers, desc["radius"], desc["normalize"])


def _bump_dictionary(
    host: NodeSet, centers: np.ndarray, radius: float, normalize: bool
) -> ExteriorDictionary:
    elements = []
    for c in centers:
        g = bump(BumpSpec(tuple(c), radius), host)
        elements.append(g / l2_norm(g) if normalize else g)
    return ExteriorDictionary(host, tuple(elements), centers, radius, normalize)


def make_dictionary(
    host: NodeSet,
    radius: float | None = None,
    stride: int = lab_vars.DICT_STRIDE,
    normalize: bool = True,
    max_condition: float = lab_vars.GRAM_MAX_CONDITION,
) -> ExteriorDictionary:
    """Bumps of ``radius`` (default 3h) centred on a stride lattice inside ``host``.

    Elements are scaled to unit L² norm when ``normalize`` is set.
    """
    grid = host.grid
    radius = lab_vars.DICT_RADIUS_CELLS * grid.h if radius is None else radius
    centers = ball_centers(host, radius, stride)
    if len(centers) == 0:
        raise GeometryError(
            f"no bump of radius {radius:.4g} fits in {host.label!r}; reduce the radius"
        )
    dictionary = _bump_dictionary(host, centers, radius, normalize)
    cond = dictionary.gram_condition()
    if cond >= max_condition:
        raise IllConditionedError(
            f"dictionary on {host.label!r} has Gram condition {cond:.3e} >= {max_condition:.1e}; "
            f"increase the stride or reduce the radius"
        )
    logger.debug(f"Dictionary on {host.label}: {len(dictionary)} bumps, Gram cond {cond:.3e}")
    return dictionary


@dataclass(frozen=True, eq=False)
class DNMatrix:
    """entries[i, j] = <Λ f_i, g_j> (or <Λ* f_i, g_j> when ``adjoint``)."""

    entries: np.ndarray
    dict1: ExteriorDictionary
    dict2: ExteriorDictionary
    descriptor: dict
    adjoint: bool = False

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.shape != (len(self.dict1), len(self.dict2)):
            raise ValueError(
                f"DN entries of shape {entries.shape} do not match dictionaries "
                f"({len(self.dict1)}, {len(self.dict2)})"
            )
        if not np.all(np.isfinite(entries)):
            raise ValueError("DN matrix has non-finite entries")
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def sidecar(self) -> dict:
        return {
            "problem": self.descriptor,
            "adjoint": self.adjoint,
            "rows": self.dict1.describe(),
            "cols": self.dict2.describe(),
        }

    def to_csv(self, path: str | Path) -> Path:
        """Write the matrix (row = f index, column = g index) and a ``.yaml`` sidecar."""
        path = Path(path)
        df = pd.DataFrame(self.entries, columns=[f"g{j}" for j in range(self.shape[1])])
        df.insert(0, "f", np.arange(self.shape[0]))
        write_csv(df, path)
        with path.with_suffix(".yaml").open("w") as f:
            yaml.safe_dump(self.sidecar(), f, sort_keys=False)
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> DNMatrix:
        path = Path(path)
        with path.with_suffix(".yaml").open() as f:
            side = yaml.safe_load(f)
        problem = side["problem"]
        grid = Grid(int(problem["n"]), int(problem["N"]), float(problem["L"]))
        df = pd.read_csv(path, float_precision="round_trip")
        return cls(
            df.drop(columns="f").to_numpy(dtype=float),
            ExteriorDictionary.from_description(grid, side["rows"]),
            ExteriorDictionary.from_description(grid, side["cols"]),
            problem,
            bool(side["adjoint"]),
        )


def _check_exterior(problem: ForwardProblem, dictionary: ExteriorDictionary) -> None:
    if dictionary.grid != problem.grid:
        raise GeometryError("dictionary grid does not match problem grid")
    if np.any(dictionary.host.mask & problem.omega.mask):
        raise GeometryError(f"dictionary host {dictionary.host.label!r} overlaps Ω")


def _pair_rows(
    problem: ForwardProblem,
    data: tuple[GridFunction, ...],
    tests: np.ndarray,
    adjoint: bool,
    progress: bool = False,
) -> np.ndarray:
    # B(u_f, g) = <A u_f, g> by self-adjointness of (-Δ)^{s/2}
    h_n = problem.grid.cell_volume
    solve = solve_adjoint if adjoint else solve_forward
    rows = np.empty((len(data), tests.shape[0]))
    desc = "adjoint DN rows" if adjoint else "DN rows"
    for i, f in enumerate(tqdm(data, desc=desc, disable=not progress)):
        try:
            u = solve(problem, f).u
        except FracLabError:
            logger.error(f"Solve failed for dictionary element {i}")
            raise
        rows[i] = h_n * tests @ problem.apply(u, adjoint=adjoint).flat
    return rows


def assemble_dn(
    problem: ForwardProblem,
    dict1: ExteriorDictionary,
    dict2: ExteriorDictionary,
    progress: bool = False,
) -> DNMatrix:
    """entries[i, j] = B_P(u_{f_i}, g_j) with u_{f_i} the forward solution for datum f_i."""
    _check_exterior(problem, dict1)
    _check_exterior(problem, dict2)
    entries = _pair_rows(problem, dict1.elements, dict2.stacked(), adjoint=False, progress=progress)
    return DNMatrix(entries, dict1, dict2, problem.describe(), adjoint=False)


def assemble_dn_adjoint(
    problem: ForwardProblem,
    dict2: ExteriorDictionary,
    dict1: ExteriorDictionary,
    progress: bool = False,
) -> DNMatrix:
    """entries[i, j] = B*_P(u*_{g_i}, f_j)."""
    _check_exterior(problem, dict1)
    _check_exterior(problem, dict2)
    entries = _pair_rows(problem, dict2.elements, dict1.stacked(), adjoint=True, progress=progress)
    return DNMatrix(entries, dict2, dict1, problem.describe(), adjoint=True)


def duality_deviation(dn: DNMatrix, dn_adjoint: DNMatrix) -> float:
    scale = np.max(np.abs(dn.entries))
    if scale == 0:
        return float(np.max(np.abs(dn_adjoint.entries)))
    return float(np.max(np.abs(dn.entries - dn_adjoint.entries.T)) / scale)


def check_duality(
    problem: ForwardProblem,
    dict1: ExteriorDictionary,
    dict2: ExteriorDictionary,
    progress: bool = False,
) -> float:
    """max |<Λ f_i, g_j> - <f_i, Λ* g_j>| relative to max |<Λ f_i, g_j>|."""
    dev = duality_deviation(
        assemble_dn(problem, dict1, dict2, progress=progress),
        assemble_dn_adjoint(problem, dict2, dict1, progress=progress),
    )
    logger.info(f"DN duality deviation: {dev:.3e}")
    return dev


def check_quotient_invariance(
    problem: ForwardProblem,
    dict1: ExteriorDictionary,
    dict2: ExteriorDictionary,
    rng: np.random.Generator,
) -> float:
    """Max relative change of DN entries when each g_j gains a random Ω-supported field."""
    dn = assemble_dn(problem, dict1, dict2)
    support = coefficient_cutoff(problem.omega)
    tests = dict2.stacked() + np.stack(
        [random_smooth_field(problem.grid, rng, support=support).flat for _ in range(len(dict2))]
    )
    modified = _pair_rows(problem, dict1.elements, tests, adjoint=False)
    scale = max(np.max(np.abs(dn.entries)), np.finfo(float).tiny)
    return float(np.max(np.abs(modified - dn.entries)) / scale)


class AlessandriniResult(NamedTuple):
    lhs: float
    rhs: float
    terms: dict[MultiIndex, float]

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    def passes(self, tol: float = lab_vars.ALESSANDRINI_TOL) -> bool:
        return self.residual <= tol * max(1.0, abs(self.lhs))

    def as_row(self) -> dict:
        row = {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual}
        row.update({f"term_{alpha_key(alpha)}": v for alpha, v in self.terms.items()})
        return row


def _require_compatible(problem1: ForwardProblem, problem2: ForwardProblem) -> None:
    if problem1.grid != problem2.grid:
        raise ProblemError(f"problems live on different grids: {problem1.grid} vs {problem2.grid}")
    if problem1.s != problem2.s:
        raise ProblemError(f"problems have different s: {problem1.s} vs {problem2.s}")
    if not np.array_equal(problem1.omega.mask, problem2.omega.mask):
        raise ProblemError("problems have different Ω")
    if problem1.lam != problem2.lam:
        raise ProblemError(f"problems have different λ shifts: {problem1.lam} vs {problem2.lam}")


def alessandrini(
    problem1: ForwardProblem,
    problem2: ForwardProblem,
    f1: GridFunction,
    f2: GridFunction,
    w1: NodeSet | None = None,
    w2: NodeSet | None = None,
) -> AlessandriniResult:
    """Both sides of <(Λ_{P1} - Λ_{P2}) f1, f2> = Σ <a_{1,α} - a_{2,α}, (D^α u1) u2*>.

    The left side uses forward solves of both problems only, the right side the P1 forward
    solution and the P2 adjoint solution.
    """
    _require_compatible(problem1, problem2)
    omega = problem1.omega
    for name, f, host in (("f1", f1, w1), ("f2", f2, w2)):
        if np.any(f.values[omega.mask]):
            raise GeometryError(f"{name} is not an exterior datum: it is nonzero in Ω")
        if host is not None and not host.contains(f.values != 0):
            raise GeometryError(f"{name} is not supported in {host.label!r}")

    u1 = solve_forward(problem1, f1).u
    u2 = solve_forward(problem2, f1).u
    lhs = bilinear_B(problem1, u1, f2) - bilinear_B(problem2, u2, f2)

    u2_star = solve_adjoint(problem2, f2).u
    diff = problem1.coeffs - problem2.coeffs
    terms = {
        alpha: pairing(a, derivative(u1, alpha) * u2_star) for alpha, a in diff.entries.items()
    }
    rhs = float(sum(terms.values()))
    return AlessandriniResult(float(lhs), rhs, terms)
