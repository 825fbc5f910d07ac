"""
Runge approximation by regularized least squares and inductive recovery of
PDO coefficients from exterior DN data.

The recovery works against a known reference operator P₂ (normally 0): for
every multi-index α, order by order, and every mollifier centre y it steers an
interior solution towards x^α (times a cutoff) and an adjoint solution towards
the bump ψ_y, pairs them through the measured-minus-reference DN matrix, peels
the already recovered lower orders and divides by α!. The values are estimates
of (a_{1,α} - a_{2,α}) ⋆ ψ_ρ at the centres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import scipy.linalg
from tqdm import tqdm

from . import lab_vars
from .dnmap import DNMatrix, ExteriorDictionary, assemble_dn
from .errors import GeometryError, IllConditionedError, ProblemError
from .geometry import NodeSet, ball_centers, erode, mollifier, monomial_cutoff, shrink
from .grid import Grid, GridFunction
from .pdo import ForwardProblem, PDOCoefficients, solve_adjoint, solve_forward
from .spectral import bessel_potential, derivative_values, l2_norm, sobolev_norm
from .utils import (
    MultiIndex,
    alpha_factorial,
    alpha_key,
    alpha_order,
    multi_indices,
    write_csv,
)

logger = logging.getLogger("fraclab.recover")


class RungeResult(NamedTuple):
    """Outcome of one Runge fit.

    ``achieved_error`` is the residual in the objective norm (discrete H^s or L²); for
    ``lam_reg = 0`` it is the distance of the target to the span of the dictionary image.
    """

    coefficients: np.ndarray
    datum: GridFunction
    approximation: GridFunction
    achieved_error: float
    error_hs: float
    error_l2: float
    relative_l2: float
    lam_reg: float
    size: int
    normal_residual: float
    norm: str

    def as_row(self) -> dict:
        return {
            "size": self.size,
            "norm": self.norm,
            "lam_reg": self.lam_reg,
            "achieved_error": self.achieved_error,
            "error_hs": self.error_hs,
            "error_l2": self.error_l2,
            "relative_l2": self.relative_l2,
            "normal_residual": self.normal_residual,
        }


class RungeSolver:
    """Least-squares fit of Ω-supported targets by the image {u_f - f : f ∈ span(dictionary)}.

    Args:
        problem (ForwardProblem): dynamics defining u_f
        dictionary (ExteriorDictionary): exterior data, disjoint from Ω
        adjoint (bool): use adjoint solutions u*_f instead
        lam_reg (float, optional): Tikhonov weight on ‖f‖²_{L²}; None picks 1e-8 times the
            largest normal-equation eigenvalue, 0 selects unregularized least squares over the
            numerically independent part of the image
        norm (str): objective norm, ``hs`` (‖J^s ·‖) or ``l2``
    """

    def __init__(
        self,
        problem: ForwardProblem,
        dictionary: ExteriorDictionary,
        adjoint: bool = False,
        lam_reg: float | None = None,
        norm: str = "hs",
        progress: bool = False,
    ):
        if norm not in ("hs", "l2"):
            raise ValueError(f"unknown Runge norm {norm!r}, expected 'hs' or 'l2'")
        if lam_reg is not None and lam_reg < 0:
            raise ValueError(f"lam_reg must be >= 0, got {lam_reg}")
        if np.any(dictionary.host.mask & problem.omega.mask):
            raise GeometryError(f"dictionary host {dictionary.host.label!r} overlaps Ω")
        self.problem = problem
        self.dictionary = dictionary
        self.adjoint = adjoint
        self.norm = norm

        solve = solve_adjoint if adjoint else solve_forward
        # one solve per atom keeps prefix dictionaries bitwise nested
        images = []
        for phi in tqdm(dictionary.elements, desc="Runge image", disable=not progress):
            images.append((solve(problem, phi).u - phi).flat)
        self.images = np.stack(images)
        self.columns = np.stack([self._weigh(v) for v in self.images], axis=1)

        if lam_reg == 0:
            self.lam_reg = 0.0
            self._factor_gram_schmidt()
        else:
            self._factor_tikhonov(lam_reg)

    def _weigh(self, flat: np.ndarray) -> np.ndarray:
        grid = self.problem.grid
        root = np.sqrt(grid.cell_volume)
        if self.norm == "hs":
            return root * bessel_potential(GridFunction(grid, flat), self.problem.s).flat
        return root * flat[self.problem.omega.mask.ravel()]

    def _factor_tikhonov(self, lam_reg: float | None) -> None:
        try:
            self._chol = scipy.linalg.cholesky(self.dictionary.gram(), lower=False)
        except np.linalg.LinAlgError as e:
            raise IllConditionedError(
                "dictionary Gram matrix is not positive definite; remove dependent or zero elements"
            ) from e
        whitened = scipy.linalg.solve_triangular(self._chol, self.columns.T, trans="T").T
        self._whitened = whitened
        self._u, self._sigma, self._vt = scipy.linalg.svd(whitened, full_matrices=False)
        top = self._sigma[0] ** 2
        self.lam_reg = lab_vars.RUNGE_REL_LAMBDA * top if lam_reg is None else float(lam_reg)
        regcond = (top + self.lam_reg) / (self._sigma[-1] ** 2 + self.lam_reg)
        if regcond > lab_vars.RUNGE_MAX_CONDITION:
            raise IllConditionedError(
                f"Runge normal equations have condition {regcond:.3e} > "
                f"{lab_vars.RUNGE_MAX_CONDITION:.1e}; increase lam_reg or use a smaller dictionary"
            )

    def _factor_gram_schmidt(self) -> None:
        basis: list[np.ndarray] = []
        kept: list[int] = []
        rcols: list[np.ndarray] = []
        for k, w in enumerate(self.columns.T):
            size = np.linalg.norm(w)
            q = w.copy()
            r = np.zeros(len(basis))
            if basis:
                Q = np.stack(basis, axis=1)
                for _ in range(2):
                    proj = Q.T @ q
                    q -= Q @ proj
                    r += proj
            length = np.linalg.norm(q)
            if size == 0 or length <= lab_vars.RUNGE_DROP_TOL * size:
                logger.debug(f"Runge atom {k} dropped as numerically dependent")
                continue
            basis.append(q / length)
            kept.append(k)
            rcols.append(np.append(r, length))
        if not basis:
            raise IllConditionedError("Runge dictionary image is numerically zero")
        self._q = np.stack(basis, axis=1)
        self._kept = np.array(kept)
        rmat = np.zeros((len(kept), len(kept)))
        for j, col in enumerate(rcols):
            rmat[: len(col), j] = col
        self._r = rmat

    @property
    def size(self) -> int:
        return len(self.dictionary)

    def solve(self, target: GridFunction) -> RungeResult:
        problem = self.problem
        if target.grid != problem.grid:
            raise GeometryError("Runge target lives on a different grid")
        if np.any(target.values[~problem.omega.mask]):
            raise GeometryError("Runge target must be supported in Ω")
        b = self._weigh(target.flat)

        if self.lam_reg == 0:
            beta = self._q.T @ b
            achieved = float(np.linalg.norm(b - self._q @ beta))
            coefficients = np.zeros(self.size)
            coefficients[self._kept] = scipy.linalg.solve_triangular(self._r, beta)
            normal_residual = float(
                np.linalg.norm(self._q.T @ (self._q @ beta - b)) / max(np.linalg.norm(beta), 1e-300)
            )
        else:
            sigma, lam = self._sigma, self.lam_reg
            d = self._vt.T @ (sigma / (sigma**2 + lam) * (self._u.T @ b))
            coefficients = scipy.linalg.solve_triangular(self._chol, d)
            fit = self._whitened @ d - b
            achieved = float(np.linalg.norm(fit))
            scale = np.linalg.norm(self._whitened.T @ b)
            gradient = self._whitened.T @ fit + lam * d
            normal_residual = float(np.linalg.norm(gradient) / scale) if scale > 0 else 0.0

        approximation = GridFunction(problem.grid, coefficients @ self.images)
        diff = approximation - target
        error_l2 = l2_norm(diff)
        target_l2 = l2_norm(target)
        return RungeResult(
            coefficients=coefficients,
            datum=self.dictionary.combine(coefficients),
            approximation=approximation,
            achieved_error=achieved,
            error_hs=sobolev_norm(diff, problem.s),
            error_l2=error_l2,
            relative_l2=error_l2 / target_l2 if target_l2 > 0 else error_l2,
            lam_reg=self.lam_reg,
            size=self.size,
            normal_residual=normal_residual,
            norm=self.norm,
        )


def runge_approximate(
    problem: ForwardProblem,
    v: GridFunction,
    dictionary: ExteriorDictionary,
    lam_reg: float | None = None,
    adjoint: bool = False,
    norm: str = "hs",
) -> RungeResult:
    """Minimize ‖u_f - f - v‖² + λ_reg ‖f‖²_{L²} over f in span(dictionary)."""
    return RungeSolver(problem, dictionary, adjoint=adjoint, lam_reg=lam_reg, norm=norm).solve(v)


@dataclass
class RecoveryConfig:
    """Knobs of the inductive recovery; lengths default to multiples of h."""

    m: int = 0
    rho: float | None = None
    cutoff_width: float | None = None
    lam_reg: float | None = None
    norm: str = "hs"
    peel: bool = True
    fixed_point_sweeps: int = lab_vars.FIXED_POINT_SWEEPS
    runge_tolerance: float = lab_vars.RUNGE_FLAG_TOL
    reverse_ties: bool = False
    progress: bool = False

    def lengths(self, grid: Grid) -> tuple[float, float]:
        rho = lab_vars.MOLLIFIER_RADIUS_CELLS * grid.h if self.rho is None else self.rho
        width = self.cutoff_width
        if width is None:
            width = lab_vars.CUTOFF_WIDTH_CELLS * grid.h
        return rho, width

    def alphas(self, n: int) -> list[MultiIndex]:
        """Multi-indices by order; ties lexicographic, or reversed for permutation checks."""
        out = []
        for order in range(self.m + 1):
            tier = multi_indices(n, order)
            out.extend(reversed(tier) if self.reverse_ties else tier)
        return out


@dataclass(frozen=True, eq=False)
class RecoveredCoefficients:
    """Estimates â_α(y) of the mollified coefficient differences at the centres y."""

    grid: Grid
    rho: float
    centers: np.ndarray
    values: dict[MultiIndex, np.ndarray]
    runge_error: dict[MultiIndex, np.ndarray]
    peel_residual: dict[MultiIndex, np.ndarray]
    descriptor: dict = field(default_factory=dict)

    @property
    def alphas(self) -> list[MultiIndex]:
        return list(self.values)

    @property
    def order_residuals(self) -> dict[int, float]:
        """Largest Runge error per order."""
        out: dict[int, float] = {}
        for alpha, err in self.runge_error.items():
            order = alpha_order(alpha)
            out[order] = max(out.get(order, 0.0), float(np.max(err, initial=0.0)))
        return out

    def flagged(self, tolerance: float = lab_vars.RUNGE_FLAG_TOL) -> dict[MultiIndex, np.ndarray]:
        return {alpha: err > tolerance for alpha, err in self.runge_error.items()}

    def field(self, alpha: MultiIndex) -> GridFunction:
        """Grid field holding â_α at the centre nodes and 0 elsewhere."""
        return _center_field(self.grid, self.centers, self.values[tuple(alpha)])

    def relative_error(self, truth: dict[MultiIndex, np.ndarray]) -> dict[MultiIndex, float]:
        """‖â_α - truth_α‖ / ‖truth_α‖ over centres, absolute for a vanishing truth."""
        out = {}
        for alpha, values in self.values.items():
            ref = np.asarray(truth.get(alpha, np.zeros_like(values)))
            err = np.linalg.norm(values - ref)
            scale = np.linalg.norm(ref)
            out[alpha] = float(err / scale) if scale > 0 else float(err)
        return out

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for alpha, values in self.values.items():
            df = pd.DataFrame({"alpha": alpha_key(alpha)}, index=range(len(values)))
            for i in range(self.grid.n):
                df[f"x{i}"] = self.centers[:, i]
            df["value"] = values
            df["runge_error"] = self.runge_error[alpha]
            df["peel_residual"] = self.peel_residual[alpha]
            frames.append(df)
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)


def _center_field(grid: Grid, centers: np.ndarray, values: np.ndarray) -> GridFunction:
    out = np.zeros(grid.shape)
    for y, v in zip(centers, values):
        out[grid.nearest_node(y)] = v
    return GridFunction(grid, out)


def mollified_truth(
    coeffs: PDOCoefficients, alpha: MultiIndex, centers: np.ndarray, rho: float
) -> np.ndarray:
    """(a_α ⋆ ψ_ρ)(y) = <a_α, ψ_ρ(· - y)> at every centre (ψ_ρ is even)."""
    a = coeffs.get(alpha)
    grid = coeffs.grid
    return np.array(
        [grid.cell_volume * np.sum(a.values * mollifier(grid, y, rho).values) for y in centers]
    )


class _Layout(NamedTuple):
    plateau: NodeSet
    centers: np.ndarray
    psi: np.ndarray  # (C, N^n) stacked mollifiers
    monomials: dict[MultiIndex, GridFunction]
    rho: float
    width: float
    tiers: list[np.ndarray]  # per order, centres where the estimate of that order holds

    @property
    def kept(self) -> np.ndarray:
        return self.tiers[-1]

    def estimate_field(self, grid: Grid, alpha: MultiIndex, values: np.ndarray) -> GridFunction:
        tier = self.tiers[alpha_order(alpha)]
        return _center_field(grid, self.centers[tier], values[tier])

    def report(
        self,
        grid: Grid,
        values: dict[MultiIndex, np.ndarray],
        runge_error: dict[MultiIndex, np.ndarray],
        peeled: dict[MultiIndex, np.ndarray],
        descriptor: dict,
    ) -> RecoveredCoefficients:
        keep = self.kept
        return RecoveredCoefficients(
            grid,
            self.rho,
            self.centers[keep],
            {a: v[keep] for a, v in values.items()},
            {a: v[keep] for a, v in runge_error.items()},
            {a: v[keep] for a, v in peeled.items()},
            {**descriptor, "rho": self.rho, "cutoff_width": self.width},
        )


def _layout(problem: ForwardProblem, config: RecoveryConfig) -> _Layout:
    grid = problem.grid
    if config.m >= 2 * problem.s:
        raise ProblemError(f"recovery needs m < 2s, got m = {config.m}, s = {problem.s}")
    rho, width = config.lengths(grid)
    plateau = shrink(problem.omega, width + grid.h)
    centers = ball_centers(plateau, rho, stride=1)
    if len(centers) == 0:
        raise GeometryError(f"no mollifier of radius {rho:.4g} fits in the plateau; reduce rho")
    psi = np.stack([mollifier(grid, y, rho).flat for y in centers])

    # peeling order k at y reads the lower-order estimates on all of supp ψ_y
    tiers = [np.ones(len(centers), dtype=bool)]
    for _ in range(config.m):
        held = np.zeros(grid.shape, dtype=bool)
        for y in centers[tiers[-1]]:
            held[grid.nearest_node(y)] = True
        inner = erode(grid, held, rho)
        tiers.append(np.array([inner[grid.nearest_node(y)] for y in centers]))
    if not tiers[-1].any():
        raise GeometryError(
            f"no centre keeps its order-{config.m} mollifier on lower-order estimates; reduce rho"
        )
    monomials = {
        alpha: monomial_cutoff(alpha, plateau, width, domain=problem.omega)
        for alpha in config.alphas(grid.n)
    }
    logger.info(
        f"Recovery layout: {int(tiers[-1].sum())} of {len(centers)} centres reported, "
        f"rho = {rho:.4g}, collar = {width:.4g}"
    )
    return _Layout(plateau, centers, psi, monomials, rho, width, tiers)


def _peel_and_scale(
    layout: _Layout,
    measurements: dict[MultiIndex, np.ndarray],
    config: RecoveryConfig,
    grid: Grid,
) -> tuple[dict[MultiIndex, np.ndarray], dict[MultiIndex, np.ndarray]]:
    """Order-by-order subtraction of lower-order contributions, then division by α!."""
    h_n = grid.cell_volume
    values: dict[MultiIndex, np.ndarray] = {}
    peeled: dict[MultiIndex, np.ndarray] = {}
    for alpha in config.alphas(grid.n):
        v1 = layout.monomials[alpha]
        peel = np.zeros(len(layout.centers))
        if config.peel:
            for beta, est in values.items():
                if alpha_order(beta) >= alpha_order(alpha):
                    continue
                lower = layout.estimate_field(grid, beta, est).values
                dv1 = derivative_values(grid, v1.values, beta)
                peel += h_n * layout.psi @ (lower * dv1).ravel()
        values[alpha] = (measurements[alpha] - peel) / alpha_factorial(alpha)
        peeled[alpha] = peel
    return values, peeled


def _check_measured(measured: DNMatrix, reference: ForwardProblem) -> None:
    desc = measured.descriptor
    ref = reference.describe()
    for key in ("n", "N", "L", "s", "lambda_shift", "omega_nodes"):
        if key in desc and desc[key] != ref[key]:
            raise ProblemError(f"measured data has {key} = {desc[key]}, reference has {ref[key]}")
    if measured.adjoint:
        raise ProblemError("recovery needs a forward DN matrix, got an adjoint one")


def recover_coefficients(
    measured: DNMatrix, reference: ForwardProblem, config: RecoveryConfig | None = None
) -> RecoveredCoefficients:
    """Inductive reconstruction of a_{1,α} - a_{2,α} (mollified) from exterior DN data.

    The forward Runge fits start from the reference dynamics and are redone
    ``fixed_point_sweeps`` times with the current estimate added to the reference operator.
    """
    config = config or RecoveryConfig()
    _check_measured(measured, reference)
    grid = reference.grid
    layout = _layout(reference, config)

    diff = measured.entries - assemble_dn(reference, measured.dict1, measured.dict2).entries

    adjoint = RungeSolver(
        reference, measured.dict2, adjoint=True, lam_reg=config.lam_reg, norm=config.norm
    )
    adjoint_fits = [
        adjoint.solve(GridFunction(grid, psi))
        for psi in tqdm(layout.psi, desc="adjoint Runge", disable=not config.progress)
    ]
    d = np.stack([fit.coefficients for fit in adjoint_fits], axis=1)
    err2 = np.array([fit.relative_l2 for fit in adjoint_fits])

    dynamics = reference
    values: dict[MultiIndex, np.ndarray] = {}
    for sweep in range(config.fixed_point_sweeps + 1):
        forward = RungeSolver(
            dynamics, measured.dict1, adjoint=False, lam_reg=config.lam_reg, norm=config.norm
        )
        measurements, runge_error = {}, {}
        for alpha, v1 in layout.monomials.items():
            fit = forward.solve(v1)
            measurements[alpha] = fit.coefficients @ diff @ d
            runge_error[alpha] = np.maximum(fit.relative_l2, err2)
        values, peeled = _peel_and_scale(layout, measurements, config, grid)
        peak = max(np.max(np.abs(v)) for v in values.values())
        logger.info(f"Recovery sweep {sweep}: max |â| = {peak:.4g}")
        if sweep < config.fixed_point_sweeps:
            fields = {a: layout.estimate_field(grid, a, v) for a, v in values.items()}
            estimate = PDOCoefficients(grid, config.m, fields)
            dynamics = reference.with_coefficients(reference.coeffs + estimate)

    result = layout.report(
        grid, values, runge_error, peeled, {**reference.describe(), "mode": "dn"}
    )
    for alpha, err in result.runge_error.items():
        above = err > config.runge_tolerance
        for y, e in zip(result.centers[above], err[above]):
            logger.warning(
                f"â_{alpha_key(alpha)} at {np.round(y, 6).tolist()}: Runge error {e:.3g} above "
                f"{config.runge_tolerance}; value flagged"
            )
    return result


def recover_oracle_mode(
    problem: ForwardProblem,
    config: RecoveryConfig | None = None,
    reference: PDOCoefficients | None = None,
) -> RecoveredCoefficients:
    """Recovery with exact interior fields: the Alessandrini right-hand side is evaluated with
    v₁ and ψ_y themselves, so only mollification and peeling errors remain."""
    config = config or RecoveryConfig(m=problem.m)
    grid = problem.grid
    layout = _layout(problem, config)
    coeffs = problem.coeffs if reference is None else problem.coeffs - reference
    h_n = grid.cell_volume

    measurements = {}
    for alpha, v1 in layout.monomials.items():
        total = np.zeros(grid.shape)
        for beta, a in coeffs.entries.items():
            total += a.values * derivative_values(grid, v1.values, beta)
        measurements[alpha] = h_n * layout.psi @ total.ravel()

    values, peeled = _peel_and_scale(layout, measurements, config, grid)
    zeros = {alpha: np.zeros(len(layout.centers)) for alpha in values}
    return layout.report(grid, values, zeros, peeled, {**problem.describe(), "mode": "oracle"})
