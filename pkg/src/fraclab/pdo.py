"""
Perturbed fractional operator (-Δ)^s + P(x, D) - λ on the periodic grid.

Holds the PDO coefficients, the bilinear forms, the exterior-value forward and
adjoint solvers and the well-posedness diagnostics (coercivity, invertibility,
boundedness).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lsqr

from . import lab_vars
from .errors import (
    ConvergenceError,
    GridError,
    IllConditionedError,
    ProblemError,
    SingularProblemError,
)
from .geometry import NodeSet, shrink
from .grid import Grid, GridFunction, read_dump, require_same_grid
from .spectral import (
    apply_symbol,
    bessel_symbol,
    dense_matrix,
    derivative_values,
    fractional_symbol,
    pairing,
)
from .utils import MultiIndex, alpha_key, alpha_order, chunks

logger = logging.getLogger("fraclab.pdo")

# columns per batched FFT when assembling dense matrices
_COLUMN_BATCH = 256


@dataclass(frozen=True, eq=False)
class PDOCoefficients:
    """Coefficients a_α of P(x, D) = Σ_{|α| ≤ m} a_α D^α.

    Missing multi-indices are zero. Entries are stored in order of |α|, then lexicographically.
    """

    grid: Grid
    m: int
    entries: dict[MultiIndex, GridFunction] = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 0:
            raise ProblemError(f"PDO order m must be >= 0, got {self.m}")
        entries = {}
        for alpha, a in self.entries.items():
            alpha = tuple(int(x) for x in alpha)
            if len(alpha) != self.grid.n or any(x < 0 for x in alpha):
                raise ProblemError(f"invalid multi-index {alpha} for dimension {self.grid.n}")
            if alpha_order(alpha) > self.m:
                raise ProblemError(f"coefficient {alpha_key(alpha)} has order > m = {self.m}")
            if a.grid != self.grid:
                raise GridError(
                    f"coefficient {alpha_key(alpha)} lives on {a.grid}, not {self.grid}"
                )
            entries[alpha] = a
        ordered = dict(sorted(entries.items(), key=lambda kv: (alpha_order(kv[0]), kv[0])))
        object.__setattr__(self, "entries", ordered)

    @classmethod
    def zero(cls, grid: Grid, m: int = 0) -> PDOCoefficients:
        return cls(grid, m, {})

    @property
    def alphas(self) -> list[MultiIndex]:
        return list(self.entries)

    def get(self, alpha: MultiIndex) -> GridFunction:
        return self.entries.get(tuple(alpha), GridFunction.zeros(self.grid))

    def is_zero(self) -> bool:
        return all(a.is_zero() for a in self.entries.values())

    def scaled(self, factor: float) -> PDOCoefficients:
        return PDOCoefficients(self.grid, self.m, {k: a * factor for k, a in self.entries.items()})

    def _combine(self, other: PDOCoefficients, sign: float) -> PDOCoefficients:
        if other.grid != self.grid:
            raise GridError(f"grid mismatch: {self.grid} vs {other.grid}")
        keys = sorted(set(self.entries) | set(other.entries))
        return PDOCoefficients(
            self.grid, max(self.m, other.m), {k: self.get(k) + sign * other.get(k) for k in keys}
        )

    def __add__(self, other: PDOCoefficients) -> PDOCoefficients:
        return self._combine(other, 1.0)

    def __sub__(self, other: PDOCoefficients) -> PDOCoefficients:
        return self._combine(other, -1.0)


def regularity_tags(
    coeffs: PDOCoefficients, s: float, delta: float = lab_vars.DEFAULT_DELTA
) -> dict[MultiIndex, float]:
    """Bessel-Sobolev regularity r_α required of each coefficient.

    0 below the fractional order, |α| - s + δ when |α| - s is a half-integer, |α| - s otherwise.
    """
    if delta <= 0:
        raise ProblemError(f"delta must be positive, got {delta}")
    tags = {}
    for alpha in coeffs.alphas:
        gap = alpha_order(alpha) - s
        if gap < 0:
            tags[alpha] = 0.0
        elif abs((gap - 0.5) - round(gap - 0.5)) < 1e-12:
            tags[alpha] = gap + delta
        else:
            tags[alpha] = gap
    return tags


def _unwrap(grid: Grid, u):
    if isinstance(u, GridFunction):
        if u.grid != grid:
            raise GridError(f"grid mismatch: {u.grid} vs {grid}")
        return u.values, lambda v: GridFunction(grid, v)
    values = np.asarray(u, dtype=float)
    if values.shape[-grid.n :] != grid.shape:
        raise GridError(f"array of shape {values.shape} does not end in grid shape {grid.shape}")
    return values, lambda v: v


def apply_P(P: PDOCoefficients, u):
    """Σ a_α D^α u.

    ``u`` is a GridFunction, or a raw array with leading batch axes (an array is returned then).
    """
    values, wrap = _unwrap(P.grid, u)
    out = np.zeros(values.shape)
    for alpha, a in P.entries.items():
        out += a.values * derivative_values(P.grid, values, alpha)
    return wrap(out)


def apply_P_adjoint(P: PDOCoefficients, u):
    """Σ (-1)^{|α|} D^α(a_α u), the transpose of :func:`apply_P` under the bilinear pairing."""
    values, wrap = _unwrap(P.grid, u)
    out = np.zeros(values.shape)
    for alpha, a in P.entries.items():
        sign = -1.0 if alpha_order(alpha) % 2 else 1.0
        out += sign * derivative_values(P.grid, a.values * values, alpha)
    return wrap(out)


class SolveReport(NamedTuple):
    u: GridFunction
    residual: float
    method: str
    iterations: int
    condition_estimate: float

    def as_row(self) -> dict:
        return {
            "method": self.method,
            "residual": self.residual,
            "iterations": self.iterations,
            "condition_estimate": self.condition_estimate,
        }


class InvertibilityReport(NamedTuple):
    sigma_min: float
    sigma_max: float
    condition: float
    near_singular: bool


class Coercivity(NamedTuple):
    c0: float
    mu: float


@dataclass(frozen=True, eq=False)
class ForwardProblem:
    """Exterior-value problem r_Ω((-Δ)^s + P - λ)u = F, u - f supported in Ω.

    Args:
        grid (Grid): periodic grid
        s (float): fractional order, positive and non-integer, with 2s > m
        coeffs (PDOCoefficients): perturbation P, supported in Ω
        omega (NodeSet): the domain Ω
        lam (float): spectral shift λ (0 under the eigenvalue condition)
        method (str): ``auto``, ``dense`` or ``iterative``
    """

    grid: Grid
    s: float
    coeffs: PDOCoefficients
    omega: NodeSet
    lam: float = 0.0
    method: str = "auto"
    dense_tol: float = lab_vars.DENSE_TOL
    iterative_tol: float = lab_vars.ITERATIVE_TOL
    max_condition: float = lab_vars.MAX_CONDITION

    def __post_init__(self):
        s = self.s
        if not np.isfinite(s) or s <= 0:
            raise ProblemError(f"fractional order s must be positive, got {s}")
        if abs(s - round(s)) < 1e-12:
            raise ProblemError(f"fractional order s = {s} must be non-integer")
        if self.coeffs.m >= 2 * s:
            raise ProblemError(
                f"PDO order m = {self.coeffs.m} must satisfy m < 2s = {2 * s:g}; "
                f"the limit case m = 2s is not covered"
            )
        if self.omega.grid != self.grid or self.coeffs.grid != self.grid:
            raise GridError("problem grid, Ω grid and coefficient grid differ")
        if self.method not in ("auto", "dense", "iterative"):
            raise ProblemError(f"unknown solver method {self.method!r}")
        outside = ~self.omega.mask
        for alpha, a in self.coeffs.entries.items():
            if np.any(a.values[outside]):
                raise ProblemError(f"coefficient {alpha_key(alpha)} is not supported in Ω")

    @property
    def m(self) -> int:
        return self.coeffs.m

    def with_coefficients(self, coeffs: PDOCoefficients) -> ForwardProblem:
        return replace(self, coeffs=coeffs)

    def describe(self) -> dict:
        return {
            "n": self.grid.n,
            "N": self.grid.N,
            "L": float(self.grid.L),
            "s": float(self.s),
            "m": self.m,
            "lambda_shift": float(self.lam),
            "omega_nodes": self.omega.count,
        }

    @cached_property
    def frac_symbol(self) -> np.ndarray:
        return fractional_symbol(self.grid, self.s)

    def apply(self, u, adjoint: bool = False):
        """((-Δ)^s + P - λ)u, or with P replaced by its adjoint; accepts batched arrays."""
        values, wrap = _unwrap(self.grid, u)
        frac = apply_symbol(self.grid, values, self.frac_symbol)
        if adjoint:
            perturbation = apply_P_adjoint(self.coeffs, values)
        else:
            perturbation = apply_P(self.coeffs, values)
        return wrap(frac + perturbation - self.lam * values)

    def restricted_matrix(self, adjoint: bool = False) -> np.ndarray:
        """Dense R_Ω A E_Ω assembled column-wise from indicator fields."""
        idx = self.omega.indices
        k = idx.size
        out = np.empty((k, k))
        for cols in chunks(range(k), _COLUMN_BATCH):
            batch = np.zeros((len(cols), self.grid.size))
            batch[np.arange(len(cols)), idx[cols.start : cols.stop]] = 1.0
            image = self.apply(batch.reshape(len(cols), *self.grid.shape), adjoint=adjoint)
            out[:, cols.start : cols.stop] = image.reshape(len(cols), -1)[:, idx].T
        return out

    @cached_property
    def matrix(self) -> np.ndarray:
        return self.restricted_matrix(adjoint=False)

    @cached_property
    def adjoint_matrix(self) -> np.ndarray:
        return self.restricted_matrix(adjoint=True)

    @cached_property
    def singular_values(self) -> np.ndarray:
        return scipy.linalg.svdvals(self.matrix)

    @property
    def condition(self) -> float:
        sv = self.singular_values
        return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")

    @cached_property
    def _lu(self):
        return scipy.linalg.lu_factor(self.matrix, check_finite=False)

    @cached_property
    def _lu_adjoint(self):
        return scipy.linalg.lu_factor(self.adjoint_matrix, check_finite=False)

    def resolved_method(self) -> str:
        if self.method != "auto":
            return self.method
        return "dense" if self.omega.count <= lab_vars.DENSE_MAX_NODES else "iterative"


def bilinear_form_terms(problem: ForwardProblem, v: GridFunction, w: GridFunction) -> np.ndarray:
    """Individual terms of B_P(v, w): fractional term, one per coefficient, shift term."""
    require_same_grid(v, w)
    half = problem.s / 2
    sym = fractional_symbol(problem.grid, half)
    dv = apply_symbol(problem.grid, v.values, sym)
    dw = apply_symbol(problem.grid, w.values, sym)
    h_n = problem.grid.cell_volume
    terms = [h_n * np.sum(dv * dw)]
    for alpha, a in problem.coeffs.entries.items():
        dv_alpha = derivative_values(problem.grid, v.values, alpha)
        terms.append(h_n * np.sum(a.values * dv_alpha * w.values))
    terms.append(-problem.lam * pairing(v, w))
    return np.array(terms)


def bilinear_B(problem: ForwardProblem, v: GridFunction, w: GridFunction) -> float:
    """B_P(v, w) = <(-Δ)^{s/2}v, (-Δ)^{s/2}w> + Σ <a_α, (D^α v) w> - λ<v, w>."""
    return float(np.sum(bilinear_form_terms(problem, v, w)))


def bilinear_B_star(problem: ForwardProblem, v: GridFunction, w: GridFunction) -> float:
    """B_P*(v, w) = <(-Δ)^{s/2}v, (-Δ)^{s/2}w> + Σ <a_α, v D^α w> - λ<v, w>.

    Evaluated as B_P(w, v), so the transposition identity holds bit for bit.
    """
    return bilinear_B(problem, w, v)


def check_invertibility(problem: ForwardProblem) -> InvertibilityReport:
    sv = problem.singular_values
    report = InvertibilityReport(
        sigma_min=float(sv[-1]),
        sigma_max=float(sv[0]),
        condition=problem.condition,
        near_singular=problem.condition > problem.max_condition,
    )
    if report.near_singular:
        logger.warning(
            f"Restricted system near-singular: σ_min = {report.sigma_min:.3e}, "
            f"condition {report.condition:.3e} (λ = {problem.lam:g})"
        )
    return report


def _require_invertible(problem: ForwardProblem) -> None:
    if problem.condition > problem.max_condition:
        raise SingularProblemError(problem.condition, problem.lam)


def _solve(problem: ForwardProblem, f, F, adjoint: bool) -> SolveReport:
    grid = problem.grid
    omega = problem.omega.mask
    f = GridFunction.zeros(grid) if f is None else f
    if f.grid != grid or (F is not None and F.grid != grid):
        raise GridError(f"datum grid does not match problem grid {grid}")

    base = f.values.copy()
    base[omega] = 0.0
    rhs = -problem.apply(base, adjoint=adjoint)[omega]
    if F is not None:
        rhs = rhs + F.values[omega]

    method = problem.resolved_method()
    if method == "dense":
        _require_invertible(problem)
        lu = problem._lu_adjoint if adjoint else problem._lu
        w = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        iterations, cond, tol = 1, problem.condition, problem.dense_tol
    else:
        k = problem.omega.count

        def matvec(x):
            return _restricted_apply(problem, x, adjoint)

        def rmatvec(y):
            return _restricted_apply(problem, y, not adjoint)

        op = LinearOperator((k, k), matvec=matvec, rmatvec=rmatvec, dtype=float)
        inner_tol = 1e-4 * problem.iterative_tol
        result = lsqr(
            op,
            rhs,
            atol=inner_tol,
            btol=inner_tol,
            conlim=problem.max_condition,
            iter_lim=lab_vars.ITERATIVE_MAX_ITER_FACTOR * k,
        )
        w, istop, iterations, cond = result[0], result[1], int(result[2]), float(result[6])
        if istop in (3, 6):
            raise SingularProblemError(cond, problem.lam)
        tol = problem.iterative_tol

    values = base
    values[omega] = w
    u = GridFunction(grid, values)

    scale = np.linalg.norm(rhs)
    residual = 0.0
    if scale > 0:
        target = F.values[omega] if F is not None else 0.0
        image = problem.apply(u, adjoint=adjoint).values[omega]
        residual = float(np.linalg.norm(image - target) / scale)
    if residual > tol:
        raise ConvergenceError(
            f"{'adjoint' if adjoint else 'forward'} {method} solve stopped at relative residual "
            f"{residual:.3e} > {tol:.1e} after {iterations} iterations"
        )
    logger.debug(f"{method} solve: residual {residual:.2e}, {iterations} iterations")
    return SolveReport(u, residual, method, iterations, cond)


def _restricted_apply(problem: ForwardProblem, x: np.ndarray, adjoint: bool) -> np.ndarray:
    values = np.zeros(problem.grid.shape)
    values[problem.omega.mask] = x
    return problem.apply(values, adjoint=adjoint)[problem.omega.mask]


def solve_forward(
    problem: ForwardProblem, f: GridFunction | None = None, F: GridFunction | None = None
) -> SolveReport:
    """u with r_Ω((-Δ)^s + P - λ)u = F and u = f at every node outside Ω."""
    return _solve(problem, f, F, adjoint=False)


def solve_adjoint(
    problem: ForwardProblem, f: GridFunction | None = None, F: GridFunction | None = None
) -> SolveReport:
    """Adjoint problem with Σ (-1)^{|α|} D^α(a_α u*) in place of P u."""
    return _solve(problem, f, F, adjoint=True)


def _hs_gram(problem: ForwardProblem, norm: str) -> np.ndarray:
    h_n = problem.grid.cell_volume
    if norm == "homogeneous":
        base = replace(problem, coeffs=PDOCoefficients.zero(problem.grid), lam=0.0)
        gram = base.matrix
    elif norm == "bessel":
        idx = problem.omega.indices
        gram = np.empty((idx.size, idx.size))
        sym = bessel_symbol(problem.grid, 2 * problem.s)
        for cols in chunks(range(idx.size), _COLUMN_BATCH):
            batch = np.zeros((len(cols), problem.grid.size))
            batch[np.arange(len(cols)), idx[cols.start : cols.stop]] = 1.0
            image = apply_symbol(problem.grid, batch.reshape(len(cols), *problem.grid.shape), sym)
            gram[:, cols.start : cols.stop] = image.reshape(len(cols), -1)[:, idx].T
    else:
        raise ProblemError(f"unknown norm {norm!r}, expected 'homogeneous' or 'bessel'")
    return h_n * 0.5 * (gram + gram.T)


def default_mu_max(problem: ForwardProblem) -> float:
    xi_max = np.sqrt(1.0 + problem.grid.xi_squared.max())
    size = sum(
        a.max_abs() * xi_max ** alpha_order(alpha) for alpha, a in problem.coeffs.entries.items()
    )
    return 10.0 * (1.0 + size + abs(problem.lam))


def coercivity_estimate(
    problem: ForwardProblem,
    norm: str = "homogeneous",
    target: float = lab_vars.COERCIVITY_TARGET,
    mu_max: float | None = None,
    points: int = lab_vars.COERCIVITY_SCAN_POINTS,
) -> Coercivity:
    """(c₀, μ) with B_P(v, v) ≥ c₀‖v‖² - μ‖v‖²_{L²} for every v supported in Ω.

    ``norm`` selects the H^s norm: ``homogeneous`` (‖(-Δ)^{s/2}v‖, P = 0 gives c₀ = 1) or
    ``bessel`` (‖J^s v‖). c₀(μ) is the smallest generalized eigenvalue of the symmetrized
    form plus μ times the L² Gram matrix against the H^s Gram matrix; the smallest scanned μ
    reaching ``target`` times the unperturbed value is returned.
    """
    if problem.omega.count > lab_vars.DENSE_MAX_NODES:
        raise IllConditionedError(
            f"coercivity eigensolve needs #Ω <= {lab_vars.DENSE_MAX_NODES}, "
            f"got {problem.omega.count}"
        )
    h_n = problem.grid.cell_volume
    gram = _hs_gram(problem, norm)
    form = h_n * 0.5 * (problem.matrix + problem.matrix.T)
    identity = h_n * np.eye(form.shape[0])

    def c0_at(a: np.ndarray, mu: float) -> float:
        return float(
            scipy.linalg.eigh(a + mu * identity, gram, eigvals_only=True, subset_by_index=[0, 0])[0]
        )

    reference = 1.0 if norm == "homogeneous" else c0_at(_hs_gram(problem, "homogeneous"), 0.0)
    mu_max = default_mu_max(problem) if mu_max is None else mu_max
    scan = np.concatenate([[0.0], np.geomspace(mu_max * 1e-6, mu_max, points)])
    for mu in scan:
        c0 = c0_at(form, mu)
        if c0 >= target * reference:
            c0 *= 1.0 - lab_vars.COERCIVITY_DEFLATION
            logger.info(f"Coercivity ({norm}): c0 = {c0:.6g} at mu = {mu:.6g}")
            return Coercivity(c0, float(mu))
    raise ProblemError(
        f"no coercivity certificate with c0 >= {target * reference:.3g} for mu <= {mu_max:.3g}; "
        f"the perturbation is too strong for s = {problem.s}, m = {problem.m}"
    )


def boundedness_constant(problem: ForwardProblem) -> float:
    """Largest singular value of J^{-s}((-Δ)^s + P - λ)J^{-s} over the whole grid."""
    grid = problem.grid
    smooth = bessel_symbol(grid, -problem.s)

    def sandwiched(batch: np.ndarray) -> np.ndarray:
        return apply_symbol(grid, problem.apply(apply_symbol(grid, batch, smooth)), smooth)

    return float(scipy.linalg.svdvals(dense_matrix(grid, sandwiched))[0])


def restricted_spectrum(problem: ForwardProblem) -> np.ndarray:
    """Eigenvalues of the restricted system sorted by real part (complex in general)."""
    eig = scipy.linalg.eigvals(problem.matrix)
    return eig[np.lexsort((eig.imag, eig.real))]


def galerkin_defect(
    problem: ForwardProblem, u: GridFunction, F: GridFunction | None = None
) -> float:
    """max_k |B_P(u, φ_k) - F(φ_k)| over node indicators φ_k in Ω.

    Relative to the sizes of the individual terms.
    """
    grid = problem.grid
    mask = problem.omega.mask
    h_n = grid.cell_volume
    half = fractional_symbol(grid, problem.s / 2)
    # <(-Δ)^{s/2}u, (-Δ)^{s/2}φ_k> through self-adjointness of the half power
    terms = [h_n * apply_symbol(grid, apply_symbol(grid, u.values, half), half)[mask]]
    for alpha, a in problem.coeffs.entries.items():
        terms.append(h_n * (a.values * derivative_values(grid, u.values, alpha))[mask])
    terms.append(-problem.lam * h_n * u.values[mask])
    if F is not None:
        terms.append(-h_n * F.values[mask])
    terms = np.array(terms)
    scale = np.max(np.sum(np.abs(terms), axis=0))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(np.sum(terms, axis=0))) / scale)


# coefficient families


def coefficient_cutoff(omega: NodeSet, collar: float | None = None) -> np.ndarray:
    """Smooth weight equal to 1 deep inside Ω and vanishing one cell inside its boundary."""
    collar = lab_vars.CUTOFF_WIDTH_CELLS * omega.grid.h if collar is None else collar
    return shrink(omega, collar + omega.grid.h).cutoff(collar)


def gaussian_coefficient(
    omega: NodeSet, center, width: float, amplitude: float, collar: float | None = None
) -> GridFunction:
    if width <= 0:
        raise ProblemError(f"gaussian width must be positive, got {width}")
    grid = omega.grid
    r = grid.distance_to(center)
    values = amplitude * np.exp(-0.5 * (r / width) ** 2) * coefficient_cutoff(omega, collar)
    return GridFunction(grid, values)


def polynomial_coefficient(
    omega: NodeSet, coefficients: dict[MultiIndex, float], collar: float | None = None
) -> GridFunction:
    """Σ c_β x^β times the Ω cutoff."""
    grid = omega.grid
    values = np.zeros(grid.shape)
    for beta, c in coefficients.items():
        term = np.full(grid.shape, float(c))
        for x, b in zip(grid.coords, beta):
            if b:
                term = term * x**b
        values += term
    return GridFunction(grid, values * coefficient_cutoff(omega, collar))


def dump_coefficient(path: str | Path, grid: Grid) -> GridFunction:
    a = read_dump(path)
    if a.grid != grid:
        raise GridError(f"{path}: dump grid {a.grid} does not match {grid}")
    return a
