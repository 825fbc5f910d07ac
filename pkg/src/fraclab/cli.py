"""
Command-line entry point: ``fraclab <command> --config exp.yaml --out DIR``.

Commands: forward, dn, alessandrini, runge, recover, verify. Exit codes are 0
on success, 1 when a check fails (or a solve breaks down) and 2 for config
errors. Outputs are CSV (17 significant digits, LF endings) or binary grid
dumps and carry no timestamps, so equal configs and seeds give equal files.
"""

from __future__ import annotations

import argparse
import logging
import logging.config
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import scipy.fft
from tabulate import tabulate
from tqdm import tqdm

from . import __version__, lab_vars
from .config import Experiment, default_config, load_config
from .dnmap import alessandrini, assemble_dn, assemble_dn_adjoint, duality_deviation
from .errors import ConfigError, FracLabError
from .geometry import Label
from .grid import write_dump
from .log_utils import log_config, set_verbosity
from .pdo import galerkin_defect, regularity_tags, solve_forward
from .recover import RungeSolver, mollified_truth, recover_coefficients, recover_oracle_mode
from .spectral import l2_norm
from .suites import CheckRow, alessandrini_cases, manufactured_solution, run_suites
from .utils import add_bool_arg, alpha_key, alpha_order, print_green, print_red, timer, write_csv

logger = logging.getLogger("fraclab.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def cmd_forward(experiment: Experiment, out: Path, progress: bool) -> int:  # noqa: ARG001
    """Solve the forward problem for the configured datum.

    Writes solution.fcl and forward_report.csv.
    """
    cfg = experiment.config
    problem = experiment.problem
    f = experiment.bump(cfg.forward.datum, "forward.datum")
    row = problem.describe()
    tags = regularity_tags(problem.coeffs, cfg.s, cfg.delta)
    row.update({f"r_{alpha_key(a)}": r for a, r in tags.items()})

    passed = True
    if cfg.forward.manufactured:
        rng = np.random.default_rng(cfg.seed)
        u_exact, F = manufactured_solution(problem, f, rng, cfg.forward.length_scale)
        report = solve_forward(problem, f, F)
        error = l2_norm(report.u - u_exact) / l2_norm(u_exact)
        passed = error <= lab_vars.MANUFACTURED_TOL
    else:
        F = None
        report = solve_forward(problem, f)
    row.update(report.as_row())
    row["galerkin_defect"] = galerkin_defect(problem, report.u, F)
    if cfg.forward.manufactured:
        row["manufactured_error"] = error
        log = logger.info if passed else logger.error
        log(f"Manufactured solution: relative error {error:.3e}")

    write_dump(out / "solution.fcl", report.u)
    write_csv(pd.DataFrame([row]), out / "forward_report.csv")
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_dn(experiment: Experiment, out: Path, progress: bool) -> int:
    """Assemble the DN matrix over the W1 x W2 dictionaries and its adjoint; check duality."""
    problem = experiment.problem
    dict1 = experiment.dictionary(Label.W1.value)
    dict2 = experiment.dictionary(Label.W2.value)
    dn = assemble_dn(problem, dict1, dict2, progress=progress)
    dn_adjoint = assemble_dn_adjoint(problem, dict2, dict1, progress=progress)
    deviation = duality_deviation(dn, dn_adjoint)

    passed = bool(deviation <= lab_vars.DUALITY_TOL)
    checks = [CheckRow("dn", "duality deviation", deviation, "<=", lab_vars.DUALITY_TOL, passed)]
    for label, dictionary in ((Label.W1.value, dict1), (Label.W2.value, dict2)):
        cond = dictionary.gram_condition()
        checks.append(
            CheckRow(
                "dn",
                f"Gram condition {label} ({len(dictionary)} bumps)",
                cond,
                "<=",
                lab_vars.GRAM_MAX_CONDITION,
                True,
            )
        )
    dn.to_csv(out / "dn_matrix.csv")
    dn_adjoint.to_csv(out / "dn_adjoint.csv")
    write_csv(pd.DataFrame(checks, columns=list(CheckRow._fields)), out / "dn_checks.csv")
    logger.info(f"DN matrix {dn.shape}, duality deviation {deviation:.3e}")
    return EXIT_OK if passed else EXIT_FAILURE


def cmd_alessandrini(experiment: Experiment, out: Path, progress: bool) -> int:
    """Both sides of the integral identity for the configured and randomized operator pairs."""
    rng = np.random.default_rng(experiment.config.seed)
    w1, w2 = experiment.geometry[Label.W1.value], experiment.geometry[Label.W2.value]
    rows = []
    cases = tqdm(alessandrini_cases(experiment, rng), desc="Alessandrini", disable=not progress)
    for i, (kind, p1, p2, f1, f2) in enumerate(cases):
        result = alessandrini(p1, p2, f1, f2, w1, w2)
        tol = lab_vars.ALESSANDRINI_EQUAL_TOL if kind == "equal" else lab_vars.ALESSANDRINI_TOL
        row = {"case": i, "kind": kind, **result.as_row()}
        rows.append({**row, "tolerance": tol, "passed": result.passes(tol)})
    df = pd.DataFrame(rows)
    write_csv(df, out / "alessandrini.csv")
    failures = int((~df["passed"]).sum())
    if failures:
        logger.error(f"{failures} of {len(df)} Alessandrini cases failed")
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_runge(experiment: Experiment, out: Path, progress: bool) -> int:
    """Runge approximation of the configured Ω target over nested dictionary prefixes."""
    spec = experiment.config.runge
    dictionary = experiment.dictionary(spec.host)
    target = experiment.bump(spec.target, "runge.target")
    sizes = [k for k in spec.sizes if k <= len(dictionary)]
    if not sizes:
        raise ConfigError(
            "runge.sizes", f"the {spec.host} dictionary has only {len(dictionary)} elements"
        )
    if len(sizes) < len(spec.sizes):
        logger.warning(f"Runge sizes above {len(dictionary)} dropped: {spec.sizes[len(sizes):]}")

    rows = []
    for k in sizes:
        solver = RungeSolver(
            experiment.problem,
            dictionary.prefix(k),
            adjoint=spec.adjoint,
            lam_reg=spec.lam_reg,
            norm=spec.norm,
            progress=progress,
        )
        rows.append(solver.solve(target).as_row())
    df = pd.DataFrame(rows)
    errors = df["achieved_error"].to_numpy()
    monotone = [True] + [
        b <= a + lab_vars.RUNGE_MONOTONE_TOL * max(1.0, a) for a, b in zip(errors[:-1], errors[1:])
    ]
    df["monotone"] = monotone
    write_csv(df, out / "runge.csv")
    # nested errors can only be guaranteed without regularization
    if spec.lam_reg == 0 and not all(monotone):
        logger.error(f"Runge errors increase with dictionary size: {errors.tolist()}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_recover(experiment: Experiment, out: Path, progress: bool) -> int:
    """Recover the mollified coefficient differences and compare them with the truth."""
    spec = experiment.config.recover
    rc = experiment.recovery_config(progress)
    if spec.mode == "oracle":
        reference = experiment.reference.coeffs
        recovered = recover_oracle_mode(experiment.problem, rc, reference=reference)
    else:
        measured = assemble_dn(
            experiment.problem,
            experiment.dictionary(Label.W1.value),
            experiment.dictionary(Label.W2.value),
            progress=progress,
        )
        recovered = recover_coefficients(measured, experiment.reference, rc)

    diff = experiment.problem.coeffs - experiment.reference.coeffs
    truth = {
        alpha: mollified_truth(diff, alpha, recovered.centers, recovered.rho)
        for alpha in recovered.alphas
    }
    errors = recovered.relative_error(truth)
    flagged = recovered.flagged(spec.runge_tolerance)
    rows = []
    for alpha in recovered.alphas:
        rows.append(
            {
                "alpha": alpha_key(alpha),
                "order": alpha_order(alpha),
                "relative_error": errors[alpha],
                "max_runge_error": float(np.max(recovered.runge_error[alpha])),
                "flagged_centers": int(np.sum(flagged[alpha])),
                "max_peel_residual": float(np.max(np.abs(recovered.peel_residual[alpha]))),
                "tolerance": spec.error_tolerance,
                "passed": errors[alpha] <= spec.error_tolerance,
            }
        )
    df = pd.DataFrame(rows)
    recovered.to_csv(out / "recovered.csv")
    write_csv(df, out / "recovery_errors.csv")
    for row in df.itertuples():
        log = logger.info if row.passed else logger.error
        log(f"a_{row.alpha}: relative error {row.relative_error:.3e} (tolerance {row.tolerance:g})")
    return EXIT_OK if bool(df["passed"].all()) else EXIT_FAILURE


def cmd_verify(experiment: Experiment, out: Path, progress: bool) -> int:
    """Run the configured verification suites; writes verify_report.csv."""
    report = run_suites(experiment, progress=progress)
    write_csv(report, out / "verify_report.csv")
    if report.empty:
        print("no checks run")
        return EXIT_OK
    print(tabulate(report, headers="keys", tablefmt="github", showindex=False, floatfmt=".3e"))
    failed = report[~report["passed"].astype(bool)]
    for row in failed.itertuples():
        print_red(
            f"FAILED {row.suite}: {row.check} = {row.value:.3e}, "
            f"needs {row.relation} {row.tolerance:g}"
        )
    if failed.empty:
        print_green(f"All {len(report)} checks passed")
        return EXIT_OK
    return EXIT_FAILURE


COMMANDS: dict[str, Callable[[Experiment, Path, bool], int]] = {
    "forward": cmd_forward,
    "dn": cmd_dn,
    "alessandrini": cmd_alessandrini,
    "runge": cmd_runge,
    "recover": cmd_recover,
    "verify": cmd_verify,
}


def parse_common_args(parser):
    parser.add_argument(
        "--config", default=None, help="experiment YAML config (default: built-in)", type=str
    )
    parser.add_argument("--out", default="out", help="output directory", type=str)
    parser.add_argument("--seed", default=None, help="override the config seed", type=int)
    parser.add_argument("--threads", default=1, help="FFT worker threads", type=int)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    add_bool_arg(parser, "progress", default=False, help="show progress bars")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclab",
        description="Numerical lab for the perturbed fractional Schrödinger equation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        sub = subparsers.add_parser(name, help=func.__doc__.splitlines()[0])
        parse_common_args(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error(f"--threads must be >= 1, got {args.threads}")

    logging.config.dictConfig(log_config)
    set_verbosity(args.verbose)

    try:
        cfg = default_config() if args.config is None else load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", f"must be >= 0, got {args.seed}")
            cfg = replace(cfg, seed=args.seed)
        experiment = cfg.build()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with scipy.fft.set_workers(args.threads), timer(f"fraclab {args.command}"):
            return COMMANDS[args.command](experiment, out, args.progress)
    except ConfigError as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_CONFIG
    except FracLabError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
