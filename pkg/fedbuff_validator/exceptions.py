"""
Exceptions for the fedbuff-validator package.

Exit codes follow the CLI contract: 1 validation error, 2 runtime abort,
3 failed check (bound violated, traces diverge).
"""
from typing import Any, Dict, Optional


class FedBuffValidatorException(Exception):
    """Base exception for all fedbuff-validator exceptions."""

    def __init__(self, title: str, detail: str, name: Optional[str] = None):
        """Initialize the exception.

        Args:
            title: Short, human-readable summary of the problem
            detail: Human-readable explanation with details
            name: Optional unique identifier for the error type
        """
        self.title = title
        self.detail = detail
        self.name = name or self.__class__.__name__
        self.exit_code = 1

        super().__init__(f"{title}: {detail}")

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(title={self.title!r})"

    def to_dict(self) -> Dict[str, Any]:
        """Convert the exception to a dictionary.

        Returns:
            Dictionary representation of the exception
        """
        return {
            "name": self.name,
            "title": self.title,
            "detail": self.detail,
            "exit_code": self.exit_code,
        }


class ConfigError(FedBuffValidatorException):
    """Raised when a config file does not parse or violates an invariant.

    The title names the violated invariant, e.g. ``HyperParams.K``.
    """

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "config-error")
        self.exit_code = 1


class ContractError(FedBuffValidatorException):
    """Raised when an operation is called outside its preconditions."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "contract-error")
        self.exit_code = 1


class PreconditionRefused(FedBuffValidatorException):
    """Raised when an analysis command refuses to evaluate an experiment."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "precondition-refused")
        self.exit_code = 1


class TraceParseError(FedBuffValidatorException):
    """Raised when an event log line is not valid JSON."""

    def __init__(self, path: str, line_number: int, detail: str):
        super().__init__(
            "Malformed event log",
            f"{path}, line {line_number}: {detail}",
            "trace-parse-error",
        )
        self.path = path
        self.line_number = line_number
        self.exit_code = 1

    def to_dict(self) -> Dict[str, Any]:
        result = super().to_dict()
        result["path"] = self.path
        result["line_number"] = self.line_number
        return result


class SimulationAbort(FedBuffValidatorException):
    """Base class for aborted runs."""

    def __init__(self, title: str, detail: str, name: Optional[str] = None):
        super().__init__(title, detail, name or "simulation-abort")
        self.exit_code = 2


class StalenessViolation(SimulationAbort):
    """Raised when an applied update is staler than the configured bound."""

    def __init__(self, client_id: int, download_step: int, apply_step: int, tau_max: int):
        super().__init__(
            "Staleness bound violated",
            f"client {client_id} downloaded at server step {download_step} and its "
            f"update was applied at step {apply_step} (staleness "
            f"{apply_step - download_step} > tau_max {tau_max})",
            "staleness-violation",
        )
        self.client_id = client_id
        self.download_step = download_step
        self.apply_step = apply_step
        self.tau_max = tau_max


class NonFiniteError(SimulationAbort):
    """Raised when a model, iterate or delta contains NaN or Inf."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "non-finite")


class DeadlockError(SimulationAbort):
    """Raised when the event queue drains before the horizon is reached."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "deadlock")


class BoundViolated(FedBuffValidatorException):
    """Raised when the empirical average exceeds the theoretical bound."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "bound-violated")
        self.exit_code = 3


class TraceDivergence(FedBuffValidatorException):
    """Raised when two event logs differ."""

    def __init__(self, title: str, detail: str):
        super().__init__(title, detail, "trace-divergence")
        self.exit_code = 3
