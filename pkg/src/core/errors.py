from dataclasses import dataclass
from typing import Any

from . import constants as const


@dataclass
class ErrorData:
    """Structured error information written into run summaries."""

    source: str  # Component that raised (e.g. "fed_trainer", "kernel")
    message: str  # Human-readable error message
    code: str | None = None  # Stable error kind for programmatic handling
    details: str | None = None  # Additional details for debugging


class SimulationError(Exception):
    """Base class for every error the simulator raises on purpose."""

    exit_code = const.EXIT_USAGE
    code = "simulation-error"

    def __init__(self, message: str, *, source: str | None = None, details: str | None = None):
        super().__init__(message)
        self.message = message
        self.source = source or "simulator"
        self.details = details

    def to_error_data(self) -> ErrorData:
        return ErrorData(
            source=self.source, message=self.message, code=self.code, details=self.details
        )


class DimensionError(SimulationError, ValueError):
    code = "dimension"


class ShapeError(SimulationError, ValueError):
    code = "shape"


class ParameterError(SimulationError, ValueError):
    code = "parameter"


class ConfigError(SimulationError, ValueError):
    code = "config"


class ValidationError(SimulationError, ValueError):
    code = "validation"


class ContractError(SimulationError, RuntimeError):
    code = "contract"


class ConsistencyError(SimulationError, RuntimeError):
    """An identity that holds algebraically was violated: an implementation bug."""

    code = "internal-consistency"


class ParseError(SimulationError, ValueError):
    exit_code = const.EXIT_IO
    code = "parse"

    def __init__(self, message: str, *, line: int | None = None, **kwargs: Any):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, **kwargs)
        self.line = line


class NotPositiveDefiniteError(SimulationError, ArithmeticError):
    exit_code = const.EXIT_DEGENERATE
    code = "not-positive-definite"

    def __init__(self, message: str, *, index: int, **kwargs: Any):
        super().__init__(message, details=f"pivot index {index}", **kwargs)
        self.index = index


class DegenerateSpectrumError(SimulationError, ArithmeticError):
    exit_code = const.EXIT_DEGENERATE
    code = "degenerate-spectrum"

    def __init__(
        self,
        message: str,
        *,
        lambda_min: float | None = None,
        pair: tuple[int, int] | None = None,
        **kwargs: Any,
    ):
        super().__init__(message, **kwargs)
        self.lambda_min = lambda_min
        self.pair = pair


class DivergenceError(SimulationError, ArithmeticError):
    exit_code = const.EXIT_DIVERGENCE
    code = "divergence"

    def __init__(
        self,
        message: str,
        *,
        client: int | None = None,
        step: int | None = None,
        round_index: int | None = None,
        trace: Any = None,
        **kwargs: Any,
    ):
        super().__init__(message, **kwargs)
        self.client = client
        self.step = step
        self.round_index = round_index
        # Partial TrainTrace up to the failing round, attached by train()
        self.trace = trace


class RegimeWarning(UserWarning):
    """A closed-form quantity fell outside the regime the bounds assume."""
