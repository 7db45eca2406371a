"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: :class:`ConfigError` and
:class:`ContractError` give 2, :class:`NumericalError` gives 3.
"""

from __future__ import annotations


class MpenssarError(Exception):
    """Base class for library errors."""


class ContractError(MpenssarError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(MpenssarError, ValueError):
    """Invalid user configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(MpenssarError, ArithmeticError):
    """A numerical procedure failed (factorization, singular system, ...)."""


class SingularityError(NumericalError):
    pass


class GenerationError(NumericalError):
    pass


class PredictionInfeasibleError(NumericalError):
    pass


class HeuristicDegenerateError(NumericalError):
    pass


class ClusteringError(NumericalError):
    pass


class DimensionCapError(ContractError):
    def __init__(self, dim: int, cap: int):
        self.dim = dim
        self.cap = cap
        super().__init__(f"signature dimension {dim} exceeds cap {cap}")


class PreconditionViolatedError(ContractError):
    """Sample size below the thresholds required by the misselection bound."""

    def __init__(self, n: int, n1: int, n3: int):
        self.n, self.n1, self.n3 = n, n1, n3
        super().__init__(f"n={n} is below max(n1, n3) with n1={n1}, n3={n3}")
