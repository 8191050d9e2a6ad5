"""Semantic exception hierarchy for pnormlab.

Public functions never raise bare ValueError/ArithmeticError for contract
violations; they raise one of the classes below so callers (and the CLI)
can map failure modes to exit codes.
"""


class PnormLabError(Exception):
    """Base class for all pnormlab errors."""


class DomainError(PnormLabError, ValueError):
    """An argument is outside the documented domain of an operation."""


class ConfigError(PnormLabError, ValueError):
    """A plan, budget, or CLI configuration violates its contract."""


class CalibrationError(PnormLabError, ArithmeticError):
    """An analytic critical value is undefined for the requested setting.

    Typically raised when the bracketed quantity of the asymptotic formula
    is non-positive (tiny dimension with extreme level); the Monte Carlo
    calibration path remains available in that case.
    """


class NumericError(PnormLabError, ArithmeticError):
    """A computation lost essentially all significant digits."""


class RankError(PnormLabError):
    """A design matrix is (numerically) rank deficient."""
