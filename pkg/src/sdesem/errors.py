"""Exception taxonomy shared by all modules.

Validation-type errors (bad shapes, bad configs, bad files) map to CLI exit
code 2; numerical failures (non-PD covariances, singular structural parts,
diverging paths, hopeless fits) map to exit code 3.
"""


class SdesemError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SdesemError, ValueError):
    """Array input with the wrong shape or symmetry."""


class ValidationError(SdesemError, ValueError):
    """Structurally invalid template, config or argument."""


class ParseError(SdesemError, ValueError):
    """Malformed file content (JSON/CSV)."""


class NumericalError(SdesemError, RuntimeError):
    """Base class for numerical failures."""


class NotPositiveDefinite(NumericalError):
    """Factorization of a matrix required to be PD failed."""


class SingularPsi(NumericalError):
    """I - B is not invertible at the requested parameter."""


class NumericalBlowup(NumericalError):
    """A simulated path left the finite range (Euler divergence)."""


class AllStartsFailed(NumericalError):
    """Every optimizer start was infeasible or diverged."""


class NoConvergedModels(NumericalError):
    """Model ranking requested but no candidate fit converged."""


VALIDATION_EXIT = 2
NUMERICAL_EXIT = 3


def exit_code_for(exc: BaseException) -> int:
    """CLI exit code for an exception (0 is reserved for success)."""
    if isinstance(exc, NumericalError):
        return NUMERICAL_EXIT
    if isinstance(exc, (ShapeError, ValidationError, ParseError)):
        return VALIDATION_EXIT
    raise TypeError(f"no exit code mapping for {type(exc).__name__}")
