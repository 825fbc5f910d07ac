from __future__ import annotations

import numpy as np
import pytest

from fraclab.dnmap import assemble_dn, assemble_dn_adjoint, make_dictionary
from fraclab.errors import GeometryError, ProblemError
from fraclab.geometry import Label, make_nodeset, mollifier, monomial_cutoff
from fraclab.grid import Grid
from fraclab.pdo import ForwardProblem, PDOCoefficients, gaussian_coefficient
from fraclab.recover import (
    RecoveryConfig,
    RungeSolver,
    mollified_truth,
    recover_coefficients,
    recover_oracle_mode,
    runge_approximate,
)
from fraclab.spectral import derivative, pairing

S = 0.7


@pytest.fixture(scope="module")
def wrap_host(grid1d):
    """36 nodes straddling the periodic seam; 32 radius-3h bumps fit inside."""
    h = grid1d.h
    return make_nodeset(grid1d, "ball", -grid1d.L + h / 2, radius=18 * h)


@pytest.fixture(scope="module")
def wrap_dictionary(wrap_host):
    return make_dictionary(wrap_host, stride=1)


@pytest.fixture(scope="module")
def oracle_problem():
    grid = Grid(1, 512, 2.5)
    omega = make_nodeset(grid, "ball", 0.0, radius=1.0, label=Label.OMEGA.value)
    coeffs = PDOCoefficients(
        grid,
        1,
        {
            (0,): gaussian_coefficient(omega, 0.3, 0.15, 1.0),
            (1,): gaussian_coefficient(omega, -0.2, 0.15, 0.5),
        },
    )
    return ForwardProblem(grid, S, coeffs, omega)


def oracle_errors(problem: ForwardProblem, config: RecoveryConfig) -> dict:
    recovered = recover_oracle_mode(problem, config)
    truth = {
        alpha: mollified_truth(problem.coeffs, alpha, recovered.centers, recovered.rho)
        for alpha in recovered.alphas
    }
    return recovered.relative_error(truth)


def test_wrap_dictionary_size(wrap_host, wrap_dictionary, omega1d):
    assert wrap_host.count == 36
    assert len(wrap_dictionary) == 32
    assert not np.any(wrap_host.mask & omega1d.mask)


def test_runge_error_monotone_in_dictionary_size(zero_problem1d, wrap_dictionary):
    target = mollifier(zero_problem1d.grid, 0.0, 0.5)
    results = [
        RungeSolver(zero_problem1d, wrap_dictionary.prefix(k), lam_reg=0, norm="l2").solve(target)
        for k in (8, 16, 32)
    ]
    errors = [r.achieved_error for r in results]
    for a, b in zip(errors, errors[1:]):
        assert b <= a + 1e-12 * max(1.0, a)
    assert results[-1].size == 32
    assert results[-1].relative_l2 <= 0.1
    for r in results:
        assert r.normal_residual <= 1e-10


def test_runge_fit_reproduces_its_datum(problem1d, wrap_dictionary):
    target = mollifier(problem1d.grid, 0.2, 0.4)
    result = runge_approximate(problem1d, target, wrap_dictionary.prefix(12))
    assert result.lam_reg > 0
    assert result.normal_residual <= 1e-10
    expected = wrap_dictionary.prefix(12).combine(result.coefficients)
    assert np.allclose(result.datum.values, expected.values)
    assert result.error_l2 == pytest.approx(result.relative_l2 * np.sqrt(pairing(target, target)))
    columns = {"size", "achieved_error", "error_hs", "error_l2", "normal_residual"}
    assert columns <= set(result.as_row())


def test_adjoint_runge(problem1d, wrap_dictionary):
    target = mollifier(problem1d.grid, -0.3, 0.3)
    forward = runge_approximate(problem1d, target, wrap_dictionary.prefix(16), lam_reg=0, norm="l2")
    adjoint = runge_approximate(
        problem1d, target, wrap_dictionary.prefix(16), lam_reg=0, adjoint=True, norm="l2"
    )
    assert adjoint.relative_l2 < 1.0
    assert forward.relative_l2 < 1.0


def test_runge_rejects_bad_input(zero_problem1d, wrap_dictionary, omega1d):
    solver = RungeSolver(zero_problem1d, wrap_dictionary.prefix(4), lam_reg=0)
    with pytest.raises(GeometryError, match="supported in Ω"):
        solver.solve(mollifier(zero_problem1d.grid, -1.9, 0.05))
    with pytest.raises(ValueError, match="norm"):
        RungeSolver(zero_problem1d, wrap_dictionary, norm="h1")
    with pytest.raises(ValueError, match="lam_reg"):
        RungeSolver(zero_problem1d, wrap_dictionary, lam_reg=-1.0)
    inside = make_dictionary(omega1d, stride=8)
    with pytest.raises(GeometryError, match="overlaps Ω"):
        RungeSolver(zero_problem1d, inside)


def test_alphas_and_lengths(grid1d):
    assert RecoveryConfig(m=1).alphas(2) == [(0, 0), (0, 1), (1, 0)]
    assert RecoveryConfig(m=1, reverse_ties=True).alphas(2) == [(0, 0), (1, 0), (0, 1)]
    rho, width = RecoveryConfig().lengths(grid1d)
    assert rho == pytest.approx(6 * grid1d.h)
    assert width == pytest.approx(8 * grid1d.h)


def test_monomial_annihilation():
    grid = Grid(2, 256, 2.0)
    plateau = make_nodeset(grid, "ball", 0.0, radius=0.3)
    psi = mollifier(grid, 0.0, 0.2)
    for alpha in [(1, 0), (0, 1)]:
        v = monomial_cutoff(alpha, plateau, cutoff_width=1.0)
        for beta in [(1, 0), (0, 1)]:
            value = pairing(derivative(v, beta), psi)
            if beta == alpha:
                assert value == pytest.approx(1.0, abs=1e-6)
            else:
                assert abs(value) <= 1e-6


def test_oracle_recovery_accuracy(oracle_problem):
    errors = oracle_errors(oracle_problem, RecoveryConfig(m=1, rho=6 * oracle_problem.grid.h))
    assert errors[(0,)] <= 0.05
    assert errors[(1,)] <= 0.05


def test_oracle_order_one_with_lower_order_near_edge(oracle_problem):
    grid, omega = oracle_problem.grid, oracle_problem.omega
    a0 = gaussian_coefficient(omega, 0.7, 0.15, 1.0)
    coeffs = PDOCoefficients(grid, 1, {(0,): a0})
    problem = ForwardProblem(grid, S, coeffs, omega)
    config = RecoveryConfig(m=1, rho=6 * grid.h)
    errors = oracle_errors(problem, config)
    recovered = recover_oracle_mode(problem, config)
    assert errors[(0,)] <= 0.05
    # a_1 vanishes, so every order-1 value is peeling residue
    assert np.max(np.abs(recovered.values[(1,)])) <= 0.02 * a0.max_abs()

    # order-1 centres keep their mollifier on order-0 centres
    order_zero = recover_oracle_mode(problem, RecoveryConfig(m=0, rho=6 * grid.h))
    reach = np.max(np.abs(order_zero.centers))
    assert np.max(np.abs(recovered.centers)) <= reach - 5 * grid.h + 1e-9


def test_oracle_error_is_mollification_error(oracle_problem):
    h = oracle_problem.grid.h
    coarse = oracle_errors(oracle_problem, RecoveryConfig(m=1, rho=6 * h))
    fine = oracle_errors(oracle_problem, RecoveryConfig(m=1, rho=3 * h))
    assert fine[(1,)] * 3 <= coarse[(1,)]


def test_peeling_ablation(oracle_problem):
    h = oracle_problem.grid.h
    peeled = oracle_errors(oracle_problem, RecoveryConfig(m=1, rho=6 * h))
    raw = oracle_errors(oracle_problem, RecoveryConfig(m=1, rho=6 * h, peel=False))
    assert raw[(0,)] == pytest.approx(peeled[(0,)])
    assert raw[(1,)] >= 10 * peeled[(1,)]


def test_tie_order_does_not_matter():
    grid = Grid(2, 64, 2.0)
    omega = make_nodeset(grid, "ball", 0.0, radius=1.0, label=Label.OMEGA.value)
    coeffs = PDOCoefficients(
        grid,
        1,
        {
            (0, 0): gaussian_coefficient(omega, [0.1, 0.0], 0.3, 1.0),
            (1, 0): gaussian_coefficient(omega, [0.0, 0.1], 0.3, 0.5),
            (0, 1): gaussian_coefficient(omega, [-0.1, 0.0], 0.3, -0.5),
        },
    )
    problem = ForwardProblem(grid, S, coeffs, omega)
    forward = recover_oracle_mode(problem, RecoveryConfig(m=1, rho=3 * grid.h))
    reverse = recover_oracle_mode(problem, RecoveryConfig(m=1, rho=3 * grid.h, reverse_ties=True))
    assert len(forward.centers) > 1
    for alpha in forward.alphas:
        assert np.array_equal(forward.values[alpha], reverse.values[alpha])


def test_recovered_table(oracle_problem, tmp_path):
    recovered = recover_oracle_mode(oracle_problem, RecoveryConfig(m=1))
    df = recovered.to_frame()
    assert list(df.columns) == ["alpha", "x0", "value", "runge_error", "peel_residual"]
    assert len(df) == 2 * len(recovered.centers)
    assert set(df["alpha"]) == {"0", "1"}
    assert not any(flags.any() for flags in recovered.flagged().values())
    assert recovered.order_residuals == {0: 0.0, 1: 0.0}
    peak = recovered.field((0,))
    assert peak.max_abs() == pytest.approx(np.max(np.abs(recovered.values[(0,)])))
    path = recovered.to_csv(tmp_path / "recovered.csv")
    assert path.read_text().splitlines()[0] == "alpha,x0,value,runge_error,peel_residual"


def test_zero_perturbation_recovers_zero(zero_problem1d, geometry1d):
    assert all(not v.any() for v in recover_oracle_mode(zero_problem1d).values.values())
    dict1 = make_dictionary(geometry1d[Label.W1.value])
    dict2 = make_dictionary(geometry1d[Label.W2.value])
    measured = assemble_dn(zero_problem1d, dict1, dict2)
    config = RecoveryConfig(m=1, fixed_point_sweeps=0)
    recovered = recover_coefficients(measured, zero_problem1d, config)
    assert all(not v.any() for v in recovered.values.values())


def test_recovery_needs_m_below_2s(problem1d):
    with pytest.raises(ProblemError, match="m < 2s"):
        recover_oracle_mode(problem1d, RecoveryConfig(m=2))


def test_recovery_rejects_adjoint_data(problem1d, geometry1d, grid1d):
    dict1 = make_dictionary(geometry1d[Label.W1.value])
    dict2 = make_dictionary(geometry1d[Label.W2.value])
    measured = assemble_dn_adjoint(problem1d, dict2, dict1)
    with pytest.raises(ProblemError, match="adjoint"):
        recover_coefficients(measured, problem1d.with_coefficients(PDOCoefficients.zero(grid1d, 1)))


@pytest.fixture(scope="module")
def stride1_dictionaries(geometry1d):
    return (
        make_dictionary(geometry1d[Label.W1.value], stride=1),
        make_dictionary(geometry1d[Label.W2.value], stride=1),
    )


def end_to_end(problem, reference, dictionaries, m):
    measured = assemble_dn(problem, *dictionaries)
    recovered = recover_coefficients(measured, reference, RecoveryConfig(m=m))
    diff = problem.coeffs - reference.coeffs
    truth = {
        alpha: mollified_truth(diff, alpha, recovered.centers, recovered.rho)
        for alpha in recovered.alphas
    }
    return recovered.relative_error(truth)


@pytest.mark.slow
def test_end_to_end_order_zero(grid1d, omega1d, zero_problem1d, stride1_dictionaries):
    a0 = gaussian_coefficient(omega1d, 0.2, 0.2, 1.0)
    problem = ForwardProblem(grid1d, S, PDOCoefficients(grid1d, 0, {(0,): a0}), omega1d)
    errors = end_to_end(problem, zero_problem1d, stride1_dictionaries, m=0)
    assert errors[(0,)] <= 0.1


@pytest.mark.slow
def test_end_to_end_error_shrinks_with_dictionary(grid1d, omega1d, zero_problem1d, geometry1d):
    a0 = gaussian_coefficient(omega1d, 0.2, 0.2, 1.0)
    problem = ForwardProblem(grid1d, S, PDOCoefficients(grid1d, 0, {(0,): a0}), omega1d)
    errors = []
    for stride in (4, 2, 1):
        dictionaries = (
            make_dictionary(geometry1d[Label.W1.value], stride=stride),
            make_dictionary(geometry1d[Label.W2.value], stride=stride),
        )
        errors.append(end_to_end(problem, zero_problem1d, dictionaries, m=0)[(0,)])
    for coarse, fine in zip(errors, errors[1:]):
        assert fine <= coarse + 1e-9


@pytest.mark.slow
def test_end_to_end_order_one(problem1d, zero_problem1d, stride1_dictionaries):
    errors = end_to_end(problem1d, zero_problem1d, stride1_dictionaries, m=1)
    assert errors[(0,)] <= 0.15
    assert errors[(1,)] <= 0.15
