"""Exception hierarchy shared by every fraclab module."""

from __future__ import annotations


class FracLabError(Exception):
    """Base class for all errors raised by fraclab."""


class GridError(FracLabError, ValueError):
    """Invalid grid, non-finite samples, or mismatched grids/shapes."""


class GeometryError(FracLabError, ValueError):
    """Empty or overlapping node sets, or a support escaping its owner."""


SupportError = GeometryError


class ProblemError(FracLabError, ValueError):
    """A standing assumption on (s, m, P, Ω) is violated."""


class SingularProblemError(FracLabError, ArithmeticError):
    """The restricted exterior-value system is (numerically) singular."""

    def __init__(self, condition: float, lambda_shift: float = 0.0):
        self.condition = condition
        self.lambda_shift = lambda_shift
        super().__init__(
            f"restricted system is near-singular (condition estimate {condition:.3e}); "
            f"the problem requires that 0 is not a Dirichlet eigenvalue of "
            f"(-Δ)^s + P - λ on Ω (λ = {lambda_shift:g})"
        )


class ConvergenceError(FracLabError, RuntimeError):
    """An iterative solve stopped above its residual tolerance."""


class IllConditionedError(FracLabError, ArithmeticError):
    """A least-squares or Gram system exceeds its conditioning limit."""


class ConfigError(FracLabError, ValueError):
    """Schema violation in an experiment config, tagged with its key path."""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")
