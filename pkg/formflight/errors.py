from __future__ import annotations

import traceback
import uuid
from typing import Any

import structlog
from pydantic import ValidationError as PydanticValidationError

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_STRING_UNSTABLE = 2
EXIT_NOT_CONVERGED = 3


class FormFlightError(Exception):
    """Base exception for toolkit errors."""

    def __init__(self, message: str, error_type: str = "toolkit_error", exit_code: int = EXIT_ERROR):
        super().__init__(message)
        self.message = message
        self.error_type = error_type
        self.exit_code = exit_code


class ConfigurationError(FormFlightError):
    """Malformed configuration, incompatible dimensions or missing inputs."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message, "configuration_error")
        self.diagnostics = diagnostics or []


class DomainError(FormFlightError):
    """Arguments outside an operation's domain."""

    def __init__(self, message: str, error_type: str = "domain_error"):
        super().__init__(message, error_type)


class OutOfRangeError(DomainError):
    """Query outside the sampled extent."""

    def __init__(self, message: str):
        super().__init__(message, "out_of_range")


class NumericalError(FormFlightError):
    """A numerical routine failed to converge or produce a usable result."""

    def __init__(self, message: str, error_type: str = "numerical_error"):
        super().__init__(message, error_type)


class TransferFunctionError(NumericalError):
    """State-space to polynomial conversion was too ill-conditioned."""

    def __init__(self, message: str, condition_number: float):
        super().__init__(message, "conversion_failure")
        self.condition_number = condition_number


class SynthesisError(FormFlightError):
    """Controller synthesis failed its own acceptance checks."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message, "synthesis_error")
        self.diagnostics = diagnostics or {}


class SimulationDivergedError(FormFlightError):
    """A simulated state grew past the divergence threshold."""

    def __init__(self, aircraft: int, time_s: float, magnitude: float):
        super().__init__(
            f"aircraft {aircraft} diverged at t={time_s:.3f} s (|x|={magnitude:.3e})",
            "simulation_diverged",
        )
        self.aircraft = aircraft
        self.time_s = time_s
        self.magnitude = magnitude

    def __reduce__(self):
        return type(self), (self.aircraft, self.time_s, self.magnitude)


class ResourceExhaustedError(FormFlightError):
    """Error when a request would exceed a configured resource cap."""

    def __init__(self, message: str):
        super().__init__(message, "resource_exhausted")


class ErrorHandler:
    """Centralized error reporting for command runs."""

    @staticmethod
    def generate_run_id() -> str:
        """Generate a unique run ID for error tracking."""
        return f"run_{uuid.uuid4().hex[:12]}"

    @staticmethod
    def format_validation_error(exc: PydanticValidationError, prefix: str = "") -> list[str]:
        errors = []
        for error in exc.errors():
            field = ".".join(str(x) for x in error["loc"]) if error["loc"] else "root"
            if prefix:
                field = f"{prefix}.{field}"
            errors.append(f"{field}: {error['msg']}")
        return errors

    @staticmethod
    def create_error_response(
        error: Exception, run_id: str | None = None, include_traceback: bool = False
    ) -> tuple[dict[str, Any], int]:
        """Create a standardized error document and the matching exit code."""
        if run_id is None:
            run_id = ErrorHandler.generate_run_id()

        details: dict[str, Any] = {}
        if isinstance(error, FormFlightError):
            error_type = error.error_type
            message = error.message
            exit_code = error.exit_code
            if isinstance(error, ConfigurationError) and error.diagnostics:
                details["diagnostics"] = error.diagnostics
            elif isinstance(error, TransferFunctionError):
                details["condition_number"] = error.condition_number
            elif isinstance(error, SynthesisError):
                details["diagnostics"] = error.diagnostics
            elif isinstance(error, SimulationDivergedError):
                details["aircraft"] = error.aircraft
                details["time_s"] = error.time_s
        elif isinstance(error, PydanticValidationError):
            error_type = "configuration_error"
            diagnostics = ErrorHandler.format_validation_error(error)
            message = "Validation failed: " + "; ".join(diagnostics)
            details["diagnostics"] = diagnostics
            exit_code = EXIT_ERROR
        elif isinstance(error, OSError):
            error_type = "io_error"
            message = str(error)
            exit_code = EXIT_ERROR
        else:
            error_type = "internal_error"
            message = "An internal error occurred"
            exit_code = EXIT_ERROR

        error_response: dict[str, Any] = {
            "error": message,
            "error_type": error_type,
            "run_id": run_id,
            **details,
        }

        if include_traceback and not isinstance(error, FormFlightError):
            error_response["traceback"] = traceback.format_exc()

        logger.error(
            "command_error",
            error_type=error_type,
            message=message,
            run_id=run_id,
            exception=str(error),
        )

        return error_response, exit_code


class ErrorContext:
    """Context manager logging the lifecycle of one named operation."""

    def __init__(self, operation_name: str, run_id: str | None = None, **fields: Any):
        self.operation_name = operation_name
        self.run_id = run_id or ErrorHandler.generate_run_id()
        self.fields = fields

    def __enter__(self) -> ErrorContext:
        logger.info(f"Starting {self.operation_name}", run_id=self.run_id, **self.fields)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> bool:
        if exc_type is not None:
            if isinstance(exc_val, FormFlightError):
                logger.error(
                    f"Operation {self.operation_name} failed",
                    error_type=exc_val.error_type,
                    message=exc_val.message,
                    run_id=self.run_id,
                )
            else:
                logger.exception(
                    f"Unexpected error in {self.operation_name}",
                    run_id=self.run_id,
                    exception=str(exc_val),
                )
        else:
            logger.info(f"Completed {self.operation_name}", run_id=self.run_id)

        return False  # Don't suppress exceptions
