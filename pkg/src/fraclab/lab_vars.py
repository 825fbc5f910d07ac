"""
Default constants: tolerances, limits and geometry margins.
"""

from __future__ import annotations

# solvers
DENSE_TOL = 1e-10
ITERATIVE_TOL = 1e-8
MAX_CONDITION = 1e12
DENSE_MAX_NODES = 4000
ITERATIVE_MAX_ITER_FACTOR = 10

# dense analysis operators (multiplier norms, boundedness constant)
DENSE_MAX_GRID = 4096

# geometry, in units of h
SEPARATION_CELLS = 2.0
CUTOFF_WIDTH_CELLS = 8.0
DICT_RADIUS_CELLS = 3.0
DICT_STRIDE = 2
MOLLIFIER_RADIUS_CELLS = 6.0

# dictionaries and Runge approximation
GRAM_MAX_CONDITION = 1e10
RUNGE_REL_LAMBDA = 1e-8
RUNGE_MAX_CONDITION = 1e12
RUNGE_DROP_TOL = 1e-10

# identities and verification suites
SYMBOL_TOL = 1e-10
MANUFACTURED_TOL = 1e-8
DUALITY_TOL = 1e-8
ALESSANDRINI_TOL = 1e-7
ALESSANDRINI_EQUAL_TOL = 1e-9
COERCIVITY_SLACK_TOL = -1e-10
MULTIPLIER_SYMMETRY_TOL = 1e-9
KATO_PONCE_MAX_RATIO = 10.0
RUNGE_MONOTONE_TOL = 1e-12
SUITE_MAX_GRID = 256
VERIFY_SUITES = (
    "symbols",
    "adjoint",
    "coercivity",
    "duality",
    "alessandrini",
    "multiplier",
    "poincare",
    "kato_ponce",
    "ucp",
    "boundedness",
    "galerkin",
    "quotient",
)

# coercivity scan
COERCIVITY_TARGET = 0.5
COERCIVITY_DEFLATION = 1e-8
COERCIVITY_SCAN_POINTS = 25
# scales ε for the μ(ε) ramp of P -> εP
COERCIVITY_RAMP = (0.0, 0.25, 0.5, 0.75, 1.0)

# regularity tags
DEFAULT_DELTA = 0.01

# recovery
FIXED_POINT_SWEEPS = 2
RUNGE_FLAG_TOL = 0.5
RECOVERY_ERROR_TOL = 0.15

DUMP_MAGIC = b"FCL1"
