"""Exception hierarchy shared by the simulator, the CLI and the service."""

from typing import List, Optional


class DropletError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(DropletError, ValueError):
    """Invalid parameters or scenario file.

    ``issues`` lists one entry per problem, each prefixed with the field path
    (and the JSON line number when the file did not parse).
    """

    def __init__(self, message: str, issues: Optional[List[str]] = None):
        self.issues = list(issues) if issues else [message]
        super().__init__(message)


class GeometryError(DropletError, ValueError):
    """Mask/domain mismatch or a violated geometric precondition."""


class OracleLimitError(DropletError, ValueError):
    """Exhaustive search requested over too many candidate cells."""


class SolverError(DropletError, RuntimeError):
    """The linear solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float = float('nan'), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class DomainTooSmallError(SolverError):
    """The wet region reached the truncation box."""

    def __init__(self, message: str, cell=None):
        self.cell = cell
        super().__init__(message)


class StepError(SolverError):
    """Error raised while computing trace index ``index``."""

    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        residual = getattr(cause, 'residual', float('nan'))
        super().__init__(f"step {index}: {cause}", residual=residual)


class FieldError(DropletError, ValueError):
    """Invalid profile, or a violated precondition of a field comparison."""
