"""Exception hierarchy for the estimation engine."""


class GrmError(Exception):
    """Base class for all grmfit errors."""


class DomainError(GrmError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionError(GrmError, ValueError):
    """Response rows and item lists do not line up."""


class ResourceError(GrmError):
    """A request would need unreasonable memory or time."""


class InnerFailureError(GrmError, ArithmeticError):
    """The per-subject posterior mode search did not converge."""


class ItemUpdateError(GrmError, ArithmeticError):
    """An M-step item maximization could not find an ascent direction."""


class DegenerateItemError(GrmError, ValueError):
    """An item column carries a single observed category."""


class InfeasibleSimulationError(GrmError):
    """No dataset with all categories present was drawn within the attempt limit."""


class PairingError(GrmError, ValueError):
    """Estimates and truths (or paired fits) do not match up."""


class EmptyInputError(GrmError, ValueError):
    """An aggregation received no input."""


class PreconditionError(GrmError, ValueError):
    """Inputs violate a documented precondition (e.g. init outside bounds)."""


class ParseError(GrmError, ValueError):
    """Malformed CSV or JSON input."""

    def __init__(
        self,
        message: str,
        path: str | None = None,
        line: int | None = None,
        field: str | None = None,
    ) -> None:
        self.path = path
        self.line = line
        self.field = field
        where = ":".join(str(part) for part in (path, line) if part is not None)
        prefix = f"{where}: " if where else ""
        suffix = f" (field '{field}')" if field else ""
        super().__init__(f"{prefix}{message}{suffix}")


class UsageError(GrmError):
    """Command-line usage error."""
