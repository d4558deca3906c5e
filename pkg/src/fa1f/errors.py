"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and input problems exit
with 1, runtime numerical failures with 2.
"""


class PreconditionError(ValueError):
    """An operation was called on inputs violating its contract."""


class ResourceLimitError(ValueError):
    """Requested computation exceeds a hard size cap (e.g. exact enumeration)."""


class StructuralError(RuntimeError):
    """The problem instance is structurally unsolvable (disconnected graph,
    singular killed generator)."""


class NumericalError(RuntimeError):
    """A solver failed to reach its tolerance."""


class DegenerateEstimateError(NumericalError):
    """A ratio estimate has a vanishing denominator (zero variance or zero
    Dirichlet form)."""


class FitError(ValueError):
    """Not enough usable points for a fit."""
