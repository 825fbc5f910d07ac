"""
Verification suites run by ``fraclab verify``.

Each suite takes a built :class:`~fraclab.config.Experiment` and a seeded
generator and returns :class:`CheckRow` records. A suite's generator is
seeded from ``(seed, position in VERIFY_SUITES)``, so any selection of suites
reproduces the same numbers.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable, NamedTuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import lab_vars
from .analysis import (
    check_multiplier_monotonicity,
    check_multiplier_symmetry,
    coefficient_class_check,
    kato_ponce_check,
    multiplier_sample_check,
    poincare_constant,
    triviality_scan,
    ucp_refinement,
)
from .config import Experiment
from .dnmap import ExteriorDictionary, alessandrini, check_duality, check_quotient_invariance
from .errors import FracLabError
from .geometry import Label, NodeSet
from .grid import Grid, GridFunction
from .pdo import (
    ForwardProblem,
    PDOCoefficients,
    bilinear_B,
    boundedness_constant,
    coefficient_cutoff,
    coercivity_estimate,
    default_mu_max,
    galerkin_defect,
    solve_forward,
)
from .spectral import (
    bessel_potential,
    derivative,
    frac_laplacian,
    l2_norm,
    pairing,
    random_smooth_field,
    sobolev_norm,
)
from .utils import multi_indices_up_to, timer

logger = logging.getLogger("fraclab.suites")


class CheckRow(NamedTuple):
    suite: str
    check: str
    value: float
    relation: str
    tolerance: float
    passed: bool


def _at_most(suite: str, check: str, value: float, tolerance: float) -> CheckRow:
    return CheckRow(suite, check, float(value), "<=", float(tolerance), bool(value <= tolerance))


def _at_least(suite: str, check: str, value: float, tolerance: float) -> CheckRow:
    return CheckRow(suite, check, float(value), ">=", float(tolerance), bool(value >= tolerance))


def _above(suite: str, check: str, value: float, bound: float) -> CheckRow:
    return CheckRow(suite, check, float(value), ">", float(bound), bool(value > bound))


def _info(suite: str, check: str, value: float) -> CheckRow:
    return CheckRow(suite, check, float(value), "info", float("nan"), True)


def _skipped(suite: str, reason: str) -> CheckRow:
    logger.warning(f"Suite {suite} skipped: {reason}")
    return CheckRow(suite, f"skipped: {reason}", float("nan"), "skip", float("nan"), True)


def _relative(value: np.ndarray, expected: np.ndarray) -> float:
    scale = np.max(np.abs(expected))
    if scale == 0:
        return float(np.max(np.abs(value)))
    return float(np.max(np.abs(value - expected)) / scale)


def _analysis_grid(grid: Grid) -> Grid:
    N = grid.N
    while N**grid.n > lab_vars.SUITE_MAX_GRID and N // 2 >= 16 and (N // 2) % 2 == 0:
        N //= 2
    return Grid(grid.n, N, grid.L)


def _length_scale(rng: np.random.Generator, grid: Grid) -> float:
    return float(rng.uniform(2 * grid.h, 0.5))


# shared random objects


def random_coefficients(
    omega: NodeSet,
    m: int,
    rng: np.random.Generator,
    amplitude: float = 0.3,
    length_scale: float = 0.2,
) -> PDOCoefficients:
    """Smooth random a_α for every |α| ≤ m, vanishing outside the Ω collar."""
    support = coefficient_cutoff(omega)
    entries = {
        alpha: random_smooth_field(
            omega.grid, rng, length_scale, support=support, amplitude=amplitude
        )
        for alpha in multi_indices_up_to(omega.grid.n, m)
    }
    return PDOCoefficients(omega.grid, m, entries)


def random_datum(dictionary: ExteriorDictionary, rng: np.random.Generator) -> GridFunction:
    return dictionary.combine(rng.standard_normal(len(dictionary)))


def manufactured_solution(
    problem: ForwardProblem, f: GridFunction, rng: np.random.Generator, length_scale: float = 0.2
) -> tuple[GridFunction, GridFunction]:
    """(u, F) with u - f a smooth random field supported in Ω and F = ((-Δ)^s + P - λ)u."""
    support = coefficient_cutoff(problem.omega)
    w = random_smooth_field(problem.grid, rng, length_scale, support=support)
    u = f + w
    return u, problem.apply(u)


def alessandrini_cases(
    experiment: Experiment, rng: np.random.Generator
) -> list[tuple[str, ForwardProblem, ForwardProblem, GridFunction, GridFunction]]:
    """The configured pair, ``draws`` random pairs with P1 ≠ P2 and ``pairs`` with P1 = P2.

    Exterior data are random combinations of the W1 and W2 dictionaries.
    """
    spec = experiment.config.alessandrini
    dict1 = experiment.dictionary(Label.W1.value)
    dict2 = experiment.dictionary(Label.W2.value)
    base = experiment.problem
    m = experiment.config.m

    def draw() -> ForwardProblem:
        coeffs = random_coefficients(experiment.omega, m, rng, spec.amplitude, spec.length_scale)
        return base.with_coefficients(coeffs)

    def data() -> tuple[GridFunction, GridFunction]:
        return random_datum(dict1, rng), random_datum(dict2, rng)

    cases = [("configured", experiment.problem, experiment.reference, *data())]
    for _ in range(spec.draws):
        cases.append(("random", draw(), draw(), *data()))
    for _ in range(spec.pairs):
        p1 = draw()
        p2 = p1.with_coefficients(p1.coeffs)
        cases.append(("equal", p1, p2, *data()))
    return cases


# suites


def symbols_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """Plane-wave eigenfunctions, composition and self-adjointness of the Fourier multipliers."""
    name, tol = "symbols", lab_vars.SYMBOL_TOL
    grid, s = experiment.grid, experiment.config.s
    k = np.array([3, 1][: grid.n], dtype=float) * np.pi / grid.L
    wave = GridFunction.from_callable(grid, lambda *x: np.cos(sum(ki * xi for ki, xi in zip(k, x))))
    xi2 = float(np.sum(k**2))

    v = random_smooth_field(grid, rng, _length_scale(rng, grid))
    w = random_smooth_field(grid, rng, _length_scale(rng, grid))
    frac_v, frac_w = frac_laplacian(v, s), frac_laplacian(w, s)
    e1 = (1,) + (0,) * (grid.n - 1)

    return [
        _at_most(
            name,
            "plane wave (-Δ)^s",
            _relative(frac_laplacian(wave, s).values, xi2**s * wave.values),
            tol,
        ),
        _at_most(
            name,
            "plane wave J^-s",
            _relative(bessel_potential(wave, -s).values, (1 + xi2) ** (-s / 2) * wave.values),
            tol,
        ),
        _at_most(
            name,
            "composition (-Δ)^s (-Δ)^s",
            _relative(frac_laplacian(frac_v, s).values, frac_laplacian(v, 2 * s).values),
            tol,
        ),
        _at_most(
            name,
            "composition J^s J^-s",
            _relative(bessel_potential(bessel_potential(v, s), -s).values, v.values),
            tol,
        ),
        _at_most(
            name,
            "self-adjoint (-Δ)^s",
            abs(pairing(frac_v, w) - pairing(v, frac_w)) / (l2_norm(frac_v) * l2_norm(w)),
            tol,
        ),
        _at_most(
            name,
            "skew-adjoint D^e1",
            abs(pairing(derivative(v, e1), w) + pairing(v, derivative(w, e1)))
            / (l2_norm(derivative(v, e1)) * l2_norm(w)),
            tol,
        ),
    ]


def adjoint_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """<A u, v> = <u, A* v> for the configured and a random operator."""
    name = "adjoint"
    spec = experiment.config.alessandrini
    grid = experiment.grid
    random_problem = experiment.problem.with_coefficients(
        random_coefficients(
            experiment.omega, experiment.config.m, rng, spec.amplitude, spec.length_scale
        )
    )
    rows = []
    for label, problem in (("configured", experiment.problem), ("random", random_problem)):
        worst = 0.0
        for _ in range(experiment.config.verify.samples):
            u = random_smooth_field(grid, rng, _length_scale(rng, grid))
            v = random_smooth_field(grid, rng, _length_scale(rng, grid))
            au, astar_v = problem.apply(u), problem.apply(v, adjoint=True)
            scale = l2_norm(au) * l2_norm(v) + l2_norm(u) * l2_norm(astar_v)
            worst = max(worst, abs(pairing(au, v) - pairing(u, astar_v)) / scale)
        rows.append(_at_most(name, f"transpose identity ({label})", worst, lab_vars.SYMBOL_TOL))
    return rows


def coercivity_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """Coercivity certificate and its sampled verification; P = 0 gives c0 ≈ 1 at μ = 0."""
    name = "coercivity"
    problem, omega, grid = experiment.problem, experiment.omega, experiment.grid
    if omega.count > lab_vars.DENSE_MAX_NODES:
        return [_skipped(name, f"#Ω = {omega.count} exceeds {lab_vars.DENSE_MAX_NODES}")]
    unperturbed = replace(problem, coeffs=PDOCoefficients.zero(grid), lam=0.0)
    c0, mu = coercivity_estimate(problem)
    worst = np.inf
    for _ in range(experiment.config.verify.samples):
        support = omega.mask.astype(float)
        v = random_smooth_field(grid, rng, _length_scale(rng, grid), support=support)
        hs2 = bilinear_B(unperturbed, v, v)
        slack = bilinear_B(problem, v, v) - c0 * hs2 + mu * l2_norm(v) ** 2
        worst = min(worst, slack / (c0 * hs2))
    c0_zero, mu_zero = coercivity_estimate(unperturbed)
    ramp = coercivity_ramp(problem)
    return [
        _above(name, "c0 positive", c0, 0.0),
        _info(name, "mu", mu),
        _at_least(name, "sampled certificate slack", worst, lab_vars.COERCIVITY_SLACK_TOL),
        _at_least(name, "c0 for P = 0", c0_zero, 0.99),
        _at_most(name, "mu for P = 0", mu_zero, 0.0),
        _at_most(name, "mu decrease over P scale ramp", float(np.max(-np.diff(ramp))), 0.0),
    ]


def coercivity_ramp(
    problem: ForwardProblem, scales: tuple[float, ...] = lab_vars.COERCIVITY_RAMP
) -> np.ndarray:
    """Certified μ for P -> εP over ``scales`` (λ = 0) on the scan grid of the largest ε."""
    base = replace(problem, lam=0.0)
    mu_max = default_mu_max(base.with_coefficients(base.coeffs.scaled(max(scales))))
    return np.array(
        [
            coercivity_estimate(base.with_coefficients(base.coeffs.scaled(eps)), mu_max=mu_max).mu
            for eps in scales
        ]
    )


def duality_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """<Λ f, g> = <f, Λ* g> over (at most) 16 x 16 dictionaries."""
    name = "duality"
    dict1 = experiment.dictionary(Label.W1.value)
    dict2 = experiment.dictionary(Label.W2.value)
    dict1, dict2 = dict1.prefix(min(16, len(dict1))), dict2.prefix(min(16, len(dict2)))
    spec = experiment.config.alessandrini
    random_problem = experiment.problem.with_coefficients(
        random_coefficients(
            experiment.omega, experiment.config.m, rng, spec.amplitude, spec.length_scale
        )
    )
    size = f"{len(dict1)}x{len(dict2)}"
    return [
        _at_most(name, f"{label} ({size})", check_duality(p, dict1, dict2), lab_vars.DUALITY_TOL)
        for label, p in (("configured", experiment.problem), ("random", random_problem))
    ]


def alessandrini_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """|LHS - RHS| of the integral identity, relative to max(1, |LHS|)."""
    name = "alessandrini"
    worst = {"configured": 0.0, "random": 0.0, "equal": 0.0}
    for kind, p1, p2, f1, f2 in alessandrini_cases(experiment, rng):
        result = alessandrini(p1, p2, f1, f2)
        worst[kind] = max(worst[kind], result.residual / max(1.0, abs(result.lhs)))
    return [
        _at_most(name, "configured P1, P2", worst["configured"], lab_vars.ALESSANDRINI_TOL),
        _at_most(name, "random P1 != P2", worst["random"], lab_vars.ALESSANDRINI_TOL),
        _at_most(name, "random P1 = P2", worst["equal"], lab_vars.ALESSANDRINI_EQUAL_TOL),
    ]


def multiplier_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """Symmetry, monotonicity and the sampled inequality of ‖f‖_{r,t}.

    Also the L^∞ class inclusion and the triviality scan for r < t.
    """
    name = "multiplier"
    grid, s = _analysis_grid(experiment.grid), experiment.config.s
    f = random_smooth_field(grid, rng, 0.3)
    r, t = s, -s
    failures = 0
    for _ in range(experiment.config.verify.samples):
        lam, mu = rng.uniform(0.0, 1.0, size=2)
        failures += not check_multiplier_monotonicity(f, r, t, float(lam), float(mu))
    draws = [random_smooth_field(grid, rng, _length_scale(rng, grid)) for _ in range(5)]

    def gaussian(g: Grid) -> GridFunction:
        return GridFunction(g, np.exp(-0.5 * (g.distance_to(0.0) / 0.3) ** 2))

    scan = triviality_scan(gaussian, 0.0, 0.5, L=grid.L)
    ratios = np.array(scan.norms[1:]) / np.array(scan.norms[:-1])
    return [
        _at_most(
            name,
            "symmetry (r,t) vs (-t,-r)",
            check_multiplier_symmetry(f, r, t),
            lab_vars.MULTIPLIER_SYMMETRY_TOL,
        ),
        _at_most(name, "monotonicity failures", failures, 0),
        _at_least(
            name,
            "sampled inequality slack",
            multiplier_sample_check(f, r, t, rng, experiment.config.verify.samples),
            lab_vars.COERCIVITY_SLACK_TOL,
        ),
        _at_most(
            name,
            "L^inf -> multiplier L2 to H^-s",
            coefficient_class_check(draws, s).max_constant,
            1.0 + 1e-10,
        ),
        _above(name, "triviality scan min growth (r < t)", float(np.min(ratios)), 1.0),
    ]


def poincare_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    name = "poincare"
    omega, grid, s = experiment.omega, experiment.grid, experiment.config.s
    if omega.count > lab_vars.DENSE_MAX_NODES:
        return [_skipped(name, f"#Ω = {omega.count} exceeds {lab_vars.DENSE_MAX_NODES}")]
    c = poincare_constant(omega, s)
    worst = 0.0
    for _ in range(experiment.config.verify.samples):
        support = omega.mask.astype(float)
        u = random_smooth_field(grid, rng, _length_scale(rng, grid), support=support)
        worst = max(worst, l2_norm(u) / (c * l2_norm(frac_laplacian(u, s / 2))))
    return [
        _above(name, "constant positive", c, 0.0),
        _at_most(name, "sampled ratio", worst, 1.0 + 1e-10),
    ]


def kato_ponce_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    name = "kato_ponce"
    grid, s = experiment.grid, experiment.config.s
    worst = 0.0
    for _ in range(experiment.config.verify.samples):
        f = random_smooth_field(grid, rng, _length_scale(rng, grid))
        g = random_smooth_field(grid, rng, _length_scale(rng, grid))
        worst = max(worst, kato_ponce_check(f, g, s))
    return [_at_most(name, "max ratio with C = 1", worst, lab_vars.KATO_PONCE_MAX_RATIO)]


def ucp_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:  # noqa: ARG001
    """Refinement study of the UCP diagnostic on W1; informational."""
    name = "ucp"
    n = experiment.grid.n
    sizes = [N for N in (16, 32, 64) if N**n <= lab_vars.SUITE_MAX_GRID]
    shape = experiment.config.domains[Label.W1.value]
    try:
        table = ucp_refinement(
            lambda g: shape.nodeset(g, Label.W1.value),
            experiment.config.s,
            sizes,
            n=n,
            L=experiment.grid.L,
        )
    except FracLabError as e:
        return [_skipped(name, str(e))]
    return [
        _info(name, f"sigma_min on W1, N = {row.N}", row.sigma_min) for row in table.itertuples()
    ]


def boundedness_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    name = "boundedness"
    try:
        coarse = experiment.coarsened(lab_vars.SUITE_MAX_GRID)
    except FracLabError as e:
        return [_skipped(name, f"no coarse grid: {e}")]
    if coarse.grid.size > lab_vars.SUITE_MAX_GRID:
        return [_skipped(name, f"N^n = {coarse.grid.size} exceeds {lab_vars.SUITE_MAX_GRID}")]
    problem, grid, s = coarse.problem, coarse.grid, coarse.config.s
    C = boundedness_constant(problem)
    worst = 0.0
    for _ in range(experiment.config.verify.samples):
        v = random_smooth_field(grid, rng, _length_scale(rng, grid))
        w = random_smooth_field(grid, rng, _length_scale(rng, grid))
        bound = C * sobolev_norm(v, s) * sobolev_norm(w, s)
        worst = max(worst, abs(bilinear_B(problem, v, w)) / bound)
    return [
        _info(name, f"C on N = {grid.N}", C),
        _at_most(name, "sampled ratio", worst, 1.0 + 1e-10),
    ]


def galerkin_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """Weak-form defect, manufactured solution, and dense vs iterative agreement."""
    name, tol = "galerkin", lab_vars.MANUFACTURED_TOL
    problem = experiment.problem
    spec = experiment.config.forward
    f = experiment.bump(spec.datum, "forward.datum")
    report = solve_forward(problem, f)
    u_exact, F = manufactured_solution(problem, f, rng, spec.length_scale)
    manufactured = solve_forward(problem, f, F).u
    rows = [
        _at_most(name, "weak-form defect", galerkin_defect(problem, report.u), tol),
        _at_most(
            name,
            "manufactured relative error",
            l2_norm(manufactured - u_exact) / l2_norm(u_exact),
            tol,
        ),
    ]
    if problem.omega.count <= lab_vars.DENSE_MAX_NODES:
        dense = solve_forward(replace(problem, method="dense"), f).u
        iterative = solve_forward(replace(problem, method="iterative"), f).u
        deviation = l2_norm(dense - iterative) / l2_norm(dense)
        rows.append(_at_most(name, "dense vs iterative", deviation, tol))
    return rows


def quotient_suite(experiment: Experiment, rng: np.random.Generator) -> list[CheckRow]:
    """DN pairings ignore Ω-supported changes of the test datum."""
    dict1 = experiment.dictionary(Label.W1.value)
    dict2 = experiment.dictionary(Label.W2.value)
    dict1, dict2 = dict1.prefix(min(8, len(dict1))), dict2.prefix(min(8, len(dict2)))
    change = check_quotient_invariance(experiment.problem, dict1, dict2, rng)
    return [_at_most("quotient", "relative DN change", change, lab_vars.DUALITY_TOL)]


SUITES: dict[str, Callable[[Experiment, np.random.Generator], list[CheckRow]]] = {
    "symbols": symbols_suite,
    "adjoint": adjoint_suite,
    "coercivity": coercivity_suite,
    "duality": duality_suite,
    "alessandrini": alessandrini_suite,
    "multiplier": multiplier_suite,
    "poincare": poincare_suite,
    "kato_ponce": kato_ponce_suite,
    "ucp": ucp_suite,
    "boundedness": boundedness_suite,
    "galerkin": galerkin_suite,
    "quotient": quotient_suite,
}


def run_suites(
    experiment: Experiment, names: list[str] | None = None, progress: bool = False
) -> pd.DataFrame:
    """Run the selected suites (default: ``verify.suites``) and collect their rows."""
    names = experiment.config.verify.suites if names is None else names
    rows: list[CheckRow] = []
    for name in tqdm(names, desc="verify", disable=not progress):
        rng = np.random.default_rng([experiment.config.seed, lab_vars.VERIFY_SUITES.index(name)])
        with timer(f"Suite {name}"):
            rows.extend(SUITES[name](experiment, rng))
    return pd.DataFrame(rows, columns=list(CheckRow._fields))
