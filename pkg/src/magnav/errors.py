"""Exception types shared across the magnav package."""


class MagnavError(Exception):
    """Base class for all magnav-specific errors."""


class ModelInvalidError(MagnavError):
    """A field or sensor model violates its own invariants."""


class ParseError(MagnavError):
    """A text input (coefficient file, grid file, manifest) is malformed.

    Carries the offending line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CoverageError(MagnavError):
    """A map query fell outside every layer's usable area."""


class DegenerateFieldError(MagnavError):
    """The field direction is undefined (magnitude too small)."""


class SingularSystemError(MagnavError):
    """A least-squares system is rank deficient and unregularized."""


class SpecError(MagnavError):
    """A scenario or trajectory specification is infeasible or invalid."""


class WarmStartError(MagnavError):
    """A coefficient snapshot cannot be installed (schema/vehicle mismatch)."""


class NotConvergedError(MagnavError):
    """Snapshot export requested before the confidence gate opened."""


class FilterDivergedError(MagnavError):
    """The fusion filter state became non-finite; the run is aborted."""
