"""
Custom exceptions for the MOBO engine
"""

from typing import Optional, Dict, Any, Sequence


class MoboException(Exception):
    """Base exception for the MOBO engine"""

    def __init__(
        self,
        message: str,
        exit_code: int = 1,
        error_code: str = "INTERNAL_ERROR",
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.exit_code = exit_code
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)


class ValidationError(MoboException):
    """Rejected input to a numerical operation"""

    def __init__(self, message: str = "Validation failed", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="VALIDATION_ERROR",
            details=details
        )


class ConfigurationError(MoboException):
    """Invalid or unreadable run configuration"""

    def __init__(self, message: str = "Invalid configuration", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            exit_code=2,
            error_code="CONFIGURATION_ERROR",
            details=details
        )


class NotFoundError(MoboException):
    """Missing file or resource"""

    def __init__(self, resource: str = "Resource", path: Optional[str] = None):
        message = f"{resource} not found"
        if path:
            message += f": {path}"
        super().__init__(
            message=message,
            exit_code=2,
            error_code="NOT_FOUND"
        )


class FittingError(MoboException):
    """Gaussian-process fitting failed after jitter escalation"""

    def __init__(self, message: str = "GP fitting failed", condition_number: Optional[float] = None):
        super().__init__(
            message=message,
            error_code="FITTING_ERROR",
            details={"condition_number": condition_number}
        )
        self.condition_number = condition_number


class EvaluatorError(MoboException):
    """Black-box evaluation failed"""

    def __init__(self, message: str = "Evaluation failed", weights: Optional[Sequence[float]] = None):
        super().__init__(
            message=message,
            error_code="EVALUATOR_ERROR",
            details={"weights": list(weights) if weights is not None else None}
        )
        self.weights = list(weights) if weights is not None else None


class ArchiveError(MoboException):
    """Corrupt or inconsistent archive file"""

    def __init__(self, message: str = "Archive error", line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(
            message=message,
            error_code="ARCHIVE_ERROR",
            details={"line_number": line_number}
        )
        self.line_number = line_number


class ArchiveLockedError(MoboException):
    """Another process owns the archive"""

    def __init__(self, lock_path: str):
        super().__init__(
            message=f"Archive is locked by a running process ({lock_path})",
            exit_code=3,
            error_code="ARCHIVE_LOCKED",
            details={"lock_path": lock_path}
        )
