"""
Numerical estimates of the functional-analytic quantities behind the
inverse problem: Sobolev multiplier norms and their structural properties,
Poincaré and Kato–Ponce constants, and a unique-continuation diagnostic.

Everything here is a finite-dimensional shadow of a continuum statement; the
estimates are exact for the grid operators, not for R^n.
"""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Sequence

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import IllConditionedError
from .geometry import NodeSet
from .grid import Grid, GridFunction
from .lab_vars import DENSE_MAX_NODES
from .pdo import ForwardProblem, PDOCoefficients
from .spectral import (
    apply_symbol,
    bessel_potential,
    bessel_sup_norm,
    bessel_symbol,
    dense_matrix,
    fractional_symbol,
    l2_norm,
    pairing,
    random_smooth_field,
    sobolev_norm,
    sup_norm,
)

logger = logging.getLogger("fraclab.analysis")


class MultiplierEstimate(NamedTuple):
    f: GridFunction
    r: float
    t: float
    norm_value: float
    method: str = "dense-svd"


def multiplier_operator(f: GridFunction, r: float, t: float) -> np.ndarray:
    """Dense matrix of J^t M_f J^{-r}."""
    grid = f.grid
    left = bessel_symbol(grid, t)
    right = bessel_symbol(grid, -r)

    def op(batch: np.ndarray) -> np.ndarray:
        return apply_symbol(grid, f.values * apply_symbol(grid, batch, right), left)

    return dense_matrix(grid, op)


def multiplier_estimate(f: GridFunction, r: float, t: float) -> MultiplierEstimate:
    if f.is_zero():
        return MultiplierEstimate(f, r, t, 0.0)
    norm = float(scipy.linalg.svdvals(multiplier_operator(f, r, t))[0])
    return MultiplierEstimate(f, r, t, norm)


def multiplier_norm(f: GridFunction, r: float, t: float) -> float:
    """‖f‖_{r,t}: sup |<f, uv>| / (‖u‖_{H^r} ‖v‖_{H^{-t}}).

    This is the norm of the multiplier M_f: H^r -> H^t.
    """
    return multiplier_estimate(f, r, t).norm_value


def multiplier_sample_check(
    f: GridFunction, r: float, t: float, rng: np.random.Generator, samples: int = 50
) -> float:
    """Smallest relative slack of the multiplier inequality over random pairs (u, v)."""
    norm = multiplier_norm(f, r, t)
    slack = np.inf
    for _ in range(samples):
        u = random_smooth_field(f.grid, rng, length_scale=rng.uniform(0.02, 0.5))
        v = random_smooth_field(f.grid, rng, length_scale=rng.uniform(0.02, 0.5))
        bound = norm * sobolev_norm(u, r) * sobolev_norm(v, -t)
        lhs = abs(pairing(f, u * v))
        slack = min(slack, (bound - lhs) / bound if bound > 0 else -lhs)
    return float(slack)


def check_multiplier_symmetry(f: GridFunction, r: float, t: float) -> float:
    """Relative gap between ‖f‖_{r,t} and ‖f‖_{-t,-r}."""
    a = multiplier_norm(f, r, t)
    b = multiplier_norm(f, -t, -r)
    scale = max(a, b)
    return 0.0 if scale == 0 else abs(a - b) / scale


def check_multiplier_monotonicity(
    f: GridFunction, r: float, t: float, lam: float, mu: float, rtol: float = 1e-12
) -> bool:
    """‖f‖_{r,t} ≤ ‖f‖_{r-λ,t+μ} for λ, μ ≥ 0."""
    if lam < 0 or mu < 0:
        raise ValueError(f"λ and μ must be non-negative, got {lam}, {mu}")
    return multiplier_norm(f, r, t) <= multiplier_norm(f, r - lam, t + mu) * (1 + rtol)


class TrivialityReport(NamedTuple):
    sizes: list[int]
    norms: list[float]

    @property
    def strictly_increasing(self) -> bool:
        return all(b > a for a, b in zip(self.norms, self.norms[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"N": self.sizes, "norm": self.norms})


def triviality_scan(
    f: Callable[[Grid], GridFunction],
    r: float,
    t: float,
    sizes: Sequence[int] = (16, 32, 64, 128),
    n: int = 1,
    L: float = 2.0,
) -> TrivialityReport:
    """‖f‖_{r,t} under grid refinement for r < t.

    On R^n only f = 0 is a multiplier H^r -> H^t when r < t; on each grid the norm is finite
    and is expected to grow with N for f ≠ 0.
    """
    if r >= t:
        raise ValueError(f"triviality scan needs r < t, got r = {r}, t = {t}")
    norms = [multiplier_norm(f(Grid(n, N, L)), r, t) for N in sizes]
    report = TrivialityReport(list(sizes), norms)
    if not report.strictly_increasing and any(norms):
        logger.info(f"Multiplier norms not strictly increasing under refinement: {norms}")
    return report


def poincare_constant(K: NodeSet, s: float) -> float:
    """Best c with ‖u‖_{L²} ≤ c ‖(-Δ)^{s/2}u‖_{L²} for u supported in K."""
    if K.count > DENSE_MAX_NODES:
        raise IllConditionedError(
            f"Poincaré eigensolve needs #K <= {DENSE_MAX_NODES}, got {K.count}"
        )
    problem = ForwardProblem(K.grid, s, PDOCoefficients.zero(K.grid), K)
    gram = 0.5 * (problem.matrix + problem.matrix.T)
    smallest = scipy.linalg.eigh(gram, eigvals_only=True, subset_by_index=[0, 0])[0]
    if smallest <= 0:
        raise IllConditionedError(f"restricted (-Δ)^s on {K.label!r} is not positive definite")
    return float(1.0 / np.sqrt(smallest))


def kato_ponce_check(f: GridFunction, g: GridFunction, s: float) -> float:
    """‖J^s(fg)‖ / (‖J^s f‖_∞ ‖g‖ + ‖f‖_∞ ‖J^s g‖) with C = 1.

    L^∞ norms are grid maxima.
    """
    if g.is_zero() or f.is_zero():
        return 0.0
    lhs = l2_norm(bessel_potential(f * g, s))
    rhs = bessel_sup_norm(f, s) * l2_norm(g) + sup_norm(f) * l2_norm(bessel_potential(g, s))
    return float(lhs / rhs)


def ucp_diagnostic(V: NodeSet, s: float) -> float:
    """Smallest singular value of [R_V ; R_V (-Δ)^s] acting on all grid fields."""
    return ucp_diagnostic_mask(V.grid, V.mask, s)


def ucp_diagnostic_mask(grid: Grid, mask: np.ndarray, s: float) -> float:
    """As :func:`ucp_diagnostic` for a raw mask; an empty mask imposes nothing and gives 0."""
    mask = np.asarray(mask, dtype=bool).ravel()
    if not mask.any():
        return 0.0
    symbol = fractional_symbol(grid, s)
    frac = dense_matrix(grid, lambda batch: apply_symbol(grid, batch, symbol))
    identity = np.eye(grid.size)
    stacked = np.vstack([identity[mask], frac[mask]])
    return float(scipy.linalg.svdvals(stacked)[-1])


def ucp_refinement(
    V_builder: Callable[[Grid], NodeSet],
    s: float,
    sizes: Sequence[int] = (16, 32, 64),
    n: int = 1,
    L: float = 2.0,
) -> pd.DataFrame:
    """UCP diagnostic of ``V_builder(grid)`` on refined grids."""
    rows = []
    for N in sizes:
        V = V_builder(Grid(n, N, L))
        rows.append({"N": N, "nodes": V.count, "sigma_min": ucp_diagnostic(V, s)})
    return pd.DataFrame(rows)


class ClassCheck(NamedTuple):
    constants: np.ndarray

    @property
    def max_constant(self) -> float:
        return float(np.max(self.constants))


def coefficient_class_check(
    draws: Sequence[GridFunction],
    t: float,
    kind: str = "lower",
    r: float = 0.0,
    r_prime: float | None = None,
) -> ClassCheck:
    """Empirical constants of the coefficient-class inclusions.

    ``lower``: ‖f‖_{0,-t} / max|f| (bounded fields are multipliers L² -> H^{-t}).
    ``general``: ‖f‖_{-r,-t} / ‖f‖_{H^{r',∞}} for r' ≥ max(0, r) and t > max(0, r).
    """
    constants = []
    for f in draws:
        if kind == "lower":
            bound = sup_norm(f)
            norm = multiplier_norm(f, 0.0, -t)
        elif kind == "general":
            r_prime = max(0.0, r) if r_prime is None else r_prime
            if r_prime < max(0.0, r) or t <= max(0.0, r):
                raise ValueError(
                    f"need r' >= max(0, r) and t > max(0, r); got r={r}, r'={r_prime}, t={t}"
                )
            bound = bessel_sup_norm(f, r_prime)
            norm = multiplier_norm(f, -r, -t)
        else:
            raise ValueError(f"unknown class check {kind!r}, expected 'lower' or 'general'")
        constants.append(norm / bound if bound > 0 else 0.0)
    return ClassCheck(np.array(constants))
