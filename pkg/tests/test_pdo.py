from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg

from fraclab.errors import GridError, ProblemError, SingularProblemError
from fraclab.geometry import make_nodeset, mollifier
from fraclab.grid import Grid, GridFunction, write_dump
from fraclab.pdo import (
    ForwardProblem,
    PDOCoefficients,
    apply_P,
    apply_P_adjoint,
    bilinear_B,
    bilinear_B_star,
    boundedness_constant,
    check_invertibility,
    coefficient_cutoff,
    coercivity_estimate,
    default_mu_max,
    dump_coefficient,
    galerkin_defect,
    gaussian_coefficient,
    polynomial_coefficient,
    regularity_tags,
    restricted_spectrum,
    solve_adjoint,
    solve_forward,
)
from fraclab.spectral import frac_laplacian, l2_norm, pairing, random_smooth_field
from fraclab.suites import coercivity_ramp, manufactured_solution

S = 0.7


@pytest.fixture
def datum(grid1d):
    return mollifier(grid1d, -1.5, 0.3)


def test_coefficient_ordering_and_arithmetic(coeffs1d):
    assert coeffs1d.alphas == [(0,), (1,)]
    assert (coeffs1d - coeffs1d).is_zero()
    assert coeffs1d.scaled(0.0).is_zero()
    doubled = coeffs1d + coeffs1d
    assert np.array_equal(doubled.get((1,)).values, 2 * coeffs1d.get((1,)).values)
    assert coeffs1d.get((2,)).is_zero()


@pytest.mark.parametrize(
    ("m", "entries", "match"),
    [
        (-1, {}, "must be >= 0"),
        (1, {(0, 0): None}, "invalid multi-index"),
        (0, {(1,): None}, "order > m"),
    ],
)
def test_coefficients_reject_bad_layout(grid1d, m, entries, match):
    entries = {alpha: GridFunction.zeros(grid1d) for alpha in entries}
    with pytest.raises(ProblemError, match=match):
        PDOCoefficients(grid1d, m, entries)


def test_apply_P_accepts_batches(coeffs1d, rng):
    grid = coeffs1d.grid
    fields = [random_smooth_field(grid, rng, 0.2) for _ in range(3)]
    batch = apply_P(coeffs1d, np.stack([u.values for u in fields]))
    for row, u in zip(batch, fields):
        assert np.allclose(row, apply_P(coeffs1d, u).values, rtol=0, atol=1e-13)


def test_adjoint_is_transpose(coeffs1d, rng):
    grid = coeffs1d.grid
    u = random_smooth_field(grid, rng, 0.2)
    v = random_smooth_field(grid, rng, 0.3)
    lhs = pairing(apply_P(coeffs1d, u), v)
    rhs = pairing(u, apply_P_adjoint(coeffs1d, v))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_constant_first_order_adjoint_flips_sign(rng):
    grid = Grid(1, 64, 2.0)
    P = PDOCoefficients(grid, 1, {(1,): GridFunction.constant(grid, 0.7)})
    u = random_smooth_field(grid, rng, 0.3)
    assert np.allclose(apply_P_adjoint(P, u).values, -apply_P(P, u).values, rtol=0, atol=1e-12)


def test_restricted_matrices_are_transposes(problem1d):
    scale = np.max(np.abs(problem1d.matrix))
    assert np.max(np.abs(problem1d.adjoint_matrix - problem1d.matrix.T)) <= 1e-12 * scale


def test_regularity_tags(grid1d):
    zero = GridFunction.zeros(grid1d)
    coeffs = PDOCoefficients(grid1d, 1, {(0,): zero, (1,): zero})
    assert regularity_tags(coeffs, 0.7, 0.01) == pytest.approx({(0,): 0.0, (1,): 0.3})
    # |α| - s = 1/2 picks up δ
    assert regularity_tags(coeffs, 0.5, 0.01) == pytest.approx({(0,): 0.0, (1,): 0.51})
    with pytest.raises(ProblemError, match="delta"):
        regularity_tags(coeffs, 0.7, 0.0)


def test_problem_assumptions(grid1d, omega1d, coeffs1d):
    with pytest.raises(ProblemError, match="non-integer"):
        ForwardProblem(grid1d, 1.0, coeffs1d, omega1d)
    with pytest.raises(ProblemError, match="positive"):
        ForwardProblem(grid1d, -0.3, coeffs1d, omega1d)
    with pytest.raises(ProblemError, match="m < 2s"):
        ForwardProblem(grid1d, 0.4, coeffs1d, omega1d)
    with pytest.raises(ProblemError, match="m < 2s"):
        ForwardProblem(grid1d, 0.5, coeffs1d, omega1d)
    with pytest.raises(ProblemError, match="solver method"):
        ForwardProblem(grid1d, S, coeffs1d, omega1d, method="cg")
    everywhere = PDOCoefficients(grid1d, 0, {(0,): GridFunction.constant(grid1d, 1.0)})
    with pytest.raises(ProblemError, match="not supported in Ω"):
        ForwardProblem(grid1d, S, everywhere, omega1d)


def test_manufactured_solution(problem1d, datum, rng):
    u_exact, F = manufactured_solution(problem1d, datum, rng)
    report = solve_forward(problem1d, datum, F)
    assert report.method == "dense"
    assert l2_norm(report.u - u_exact) / l2_norm(u_exact) <= 1e-8
    outside = ~problem1d.omega.mask
    assert np.array_equal(report.u.values[outside], datum.values[outside])


def test_dense_and_iterative_agree(problem1d, datum):
    dense = solve_forward(problem1d, datum)
    iterative = solve_forward(replace(problem1d, method="iterative"), datum)
    assert iterative.method == "iterative"
    assert iterative.iterations > 1
    assert l2_norm(dense.u - iterative.u) / l2_norm(dense.u) <= 1e-8


def test_adjoint_solve_satisfies_adjoint_equation(problem1d, datum):
    report = solve_adjoint(problem1d, datum)
    image = problem1d.apply(report.u, adjoint=True).values[problem1d.omega.mask]
    rhs = problem1d.apply(datum, adjoint=True).values[problem1d.omega.mask]
    assert np.linalg.norm(image) <= 1e-8 * np.linalg.norm(rhs)


def test_zero_datum_gives_zero_solution(problem1d):
    report = solve_forward(problem1d)
    assert report.u.is_zero()
    assert report.residual == 0.0


def test_solution_satisfies_galerkin_identity(problem1d, datum):
    report = solve_forward(problem1d, datum)
    assert galerkin_defect(problem1d, report.u) <= 1e-9


def test_unperturbed_coercivity(zero_problem1d):
    c0, mu = coercivity_estimate(zero_problem1d)
    assert mu == 0.0
    assert c0 >= 0.99


def test_coercivity_holds_on_samples(problem1d, omega1d, rng):
    c0, mu = coercivity_estimate(problem1d)
    support = coefficient_cutoff(omega1d)
    for _ in range(10):
        v = random_smooth_field(problem1d.grid, rng, rng.uniform(0.05, 0.4), support=support)
        form = bilinear_B(problem1d, v, v)
        slack = form - c0 * l2_norm(frac_laplacian(v, S / 2)) ** 2 + mu * l2_norm(v) ** 2
        assert slack >= -1e-10 * max(1.0, abs(form))


def test_strong_potential_needs_a_shift(grid1d, omega1d):
    a0 = gaussian_coefficient(omega1d, 0.0, 0.4, -20.0)
    problem = ForwardProblem(grid1d, S, PDOCoefficients(grid1d, 0, {(0,): a0}), omega1d)
    c0, mu = coercivity_estimate(problem, mu_max=1000.0)
    assert mu > 0
    assert c0 >= 0.49


@pytest.fixture(scope="module")
def potential_problem1d(grid1d, omega1d):
    a0 = gaussian_coefficient(omega1d, 0.0, 0.4, -20.0)
    return ForwardProblem(grid1d, S, PDOCoefficients(grid1d, 0, {(0,): a0}), omega1d)


@pytest.mark.parametrize("name", ["problem1d", "potential_problem1d"])
def test_coercivity_shift_grows_with_perturbation(name, request):
    problem = request.getfixturevalue(name)
    mu_max = default_mu_max(problem)
    scales = np.linspace(0.0, 1.0, 6)
    mus = [
        coercivity_estimate(problem.with_coefficients(problem.coeffs.scaled(eps)), mu_max=mu_max).mu
        for eps in scales
    ]
    assert mus[0] == 0.0
    assert np.all(np.diff(mus) >= 0.0)
    assert np.array_equal(coercivity_ramp(problem, tuple(scales)), mus)


def test_dirichlet_eigenvalue_is_rejected(zero_problem1d, datum):
    lam = scipy.linalg.eigvalsh(zero_problem1d.matrix, subset_by_index=[0, 0])[0]
    shifted = replace(zero_problem1d, lam=float(lam))
    assert check_invertibility(shifted).near_singular
    with pytest.raises(SingularProblemError, match="eigenvalue"):
        solve_forward(shifted, datum)
    assert not check_invertibility(zero_problem1d).near_singular


def test_restricted_spectrum_of_unperturbed_problem(zero_problem1d):
    eig = restricted_spectrum(zero_problem1d)
    assert np.all(np.diff(eig.real) >= 0)
    assert np.all(eig.real > 0)
    assert np.max(np.abs(eig.imag)) <= 1e-10 * np.max(eig.real)


def test_boundedness_constant():
    grid = Grid(1, 64, 2.0)
    omega = make_nodeset(grid, "ball", 0.0, radius=1.0)
    zero = ForwardProblem(grid, S, PDOCoefficients.zero(grid, 1), omega)
    # |ξ|^{2s} / (1 + |ξ|²)^s stays below 1
    assert 0.9 <= boundedness_constant(zero) <= 1.0 + 1e-12
    coeffs = PDOCoefficients(grid, 1, {(1,): gaussian_coefficient(omega, 0.0, 0.2, 2.0)})
    assert np.isfinite(boundedness_constant(zero.with_coefficients(coeffs)))


def test_bilinear_forms(problem1d, rng):
    grid = problem1d.grid
    u = random_smooth_field(grid, rng, 0.2)
    phi = random_smooth_field(grid, rng, 0.3)
    assert bilinear_B_star(problem1d, u, phi) == bilinear_B(problem1d, phi, u)
    expected = pairing(problem1d.apply(u), phi)
    assert bilinear_B(problem1d, u, phi) == pytest.approx(expected, rel=1e-10)
    shifted = replace(problem1d, lam=0.8)
    expected = bilinear_B(problem1d, u, phi) - 0.8 * pairing(u, phi)
    assert bilinear_B(shifted, u, phi) == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_with_coefficients(zero_problem1d, problem1d, coeffs1d):
    rebuilt = zero_problem1d.with_coefficients(coeffs1d)
    assert np.array_equal(rebuilt.matrix, problem1d.matrix)
    assert rebuilt.describe()["omega_nodes"] == problem1d.omega.count


def test_coefficient_families_vanish_outside_omega(omega1d):
    outside = ~omega1d.mask
    a = gaussian_coefficient(omega1d, 0.9, 0.5, 3.0)
    b = polynomial_coefficient(omega1d, {(0,): 1.0, (2,): -0.5})
    for c in (a, b):
        assert not np.any(c.values[outside])
        assert c.max_abs() > 0
    # plateau of the cutoff carries the raw polynomial
    assert b.values[omega1d.grid.nearest_node(0.0)] == pytest.approx(1.0)
    with pytest.raises(ProblemError, match="width"):
        gaussian_coefficient(omega1d, 0.0, 0.0, 1.0)


def test_dump_coefficient(tmp_path, omega1d, grid1d):
    a = gaussian_coefficient(omega1d, 0.0, 0.3, 1.0)
    path = write_dump(tmp_path / "a0.fcl", a)
    assert np.array_equal(dump_coefficient(path, grid1d).values, a.values)
    with pytest.raises(GridError, match="does not match"):
        dump_coefficient(path, Grid(1, 64, 2.0))
