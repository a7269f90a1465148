"""
QRobust Error Handling Module
Centralised error handling, custom exceptions, and error reporting for the
simulation, training, attack and robustness pipeline.
"""

import functools
import logging
import sys
import traceback
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence


class ErrorSeverity(Enum):
    """Error severity levels for classification and handling."""

    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Categories of errors for better organisation and handling."""

    SIMULATION_ERROR = "simulation_error"
    CIRCUIT_ERROR = "circuit_error"
    DATA_ERROR = "data_error"
    TRAINING_ERROR = "training_error"
    ATTACK_ERROR = "attack_error"
    ROBUSTNESS_ERROR = "robustness_error"
    MITIGATION_ERROR = "mitigation_error"
    CONFIGURATION_ERROR = "configuration_error"
    FILE_ERROR = "file_error"
    VALIDATION_ERROR = "validation_error"
    SYSTEM_ERROR = "system_error"


@dataclass
class ErrorReport:
    """Error report with context and metadata."""

    error_id: str
    timestamp: datetime
    message: str
    category: ErrorCategory
    severity: ErrorSeverity
    exception_type: str
    traceback_str: Optional[str] = None
    context: Dict[str, Any] = field(default_factory=dict)
    module: Optional[str] = None
    function: Optional[str] = None
    line_number: Optional[int] = None
    recovery_suggestion: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_id": self.error_id,
            "timestamp": self.timestamp.isoformat(),
            "message": self.message,
            "category": self.category.value,
            "severity": self.severity.value,
            "exception_type": self.exception_type,
            "context": {k: str(v) for k, v in self.context.items()},
            "module": self.module,
            "function": self.function,
            "line_number": self.line_number,
            "recovery_suggestion": self.recovery_suggestion,
        }


# QRobust Custom Exceptions
class QRobustError(Exception):
    """Base exception for all QRobust errors."""

    def __init__(
        self,
        message: str,
        category: ErrorCategory = ErrorCategory.SYSTEM_ERROR,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        super().__init__(message)
        self.message = message
        self.category = category
        self.severity = severity
        self.context = context or {}
        self.timestamp = datetime.now()


class SimulationError(QRobustError):
    """Errors raised by the statevector engine (bad indices, non-physical states)."""

    def __init__(
        self,
        message: str,
        qubit: int = None,
        num_qubits: int = None,
        severity: ErrorSeverity = ErrorSeverity.HIGH,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if qubit is not None:
            context["qubit"] = qubit
        if num_qubits is not None:
            context["num_qubits"] = num_qubits
        super().__init__(message, ErrorCategory.SIMULATION_ERROR, severity, context)


class CircuitError(QRobustError):
    """Errors related to circuit construction and parameter binding."""

    def __init__(
        self,
        message: str,
        slot_id: int = None,
        severity: ErrorSeverity = ErrorSeverity.HIGH,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if slot_id is not None:
            context["slot_id"] = slot_id
        super().__init__(message, ErrorCategory.CIRCUIT_ERROR, severity, context)


class DataError(QRobustError):
    """Errors related to dataset ingestion and preprocessing."""

    def __init__(
        self,
        message: str,
        data_source: str = None,
        expected_format: str = None,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if data_source:
            context["data_source"] = data_source
        if expected_format:
            context["expected_format"] = expected_format
        super().__init__(message, ErrorCategory.DATA_ERROR, severity, context)


class TrainingError(QRobustError):
    """Errors raised while optimising a classifier, including divergence."""

    def __init__(
        self,
        message: str,
        epoch: int = None,
        step: int = None,
        severity: ErrorSeverity = ErrorSeverity.HIGH,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if epoch is not None:
            context["epoch"] = epoch
        if step is not None:
            context["step"] = step
        super().__init__(message, ErrorCategory.TRAINING_ERROR, severity, context)


class AttackError(QRobustError):
    """Errors related to mask construction and adversarial example generation."""

    def __init__(
        self,
        message: str,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        super().__init__(message, ErrorCategory.ATTACK_ERROR, severity, context)


class RobustnessError(QRobustError):
    """Errors related to sensitivity scoring and robustness bounds."""

    def __init__(
        self,
        message: str,
        sample_id: int = None,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if sample_id is not None:
            context["sample_id"] = sample_id
        super().__init__(message, ErrorCategory.ROBUSTNESS_ERROR, severity, context)


class FitError(RobustnessError):
    """cos² fit failed to converge from every start."""

    def __init__(
        self,
        message: str,
        residuals: Sequence[float] = None,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        self.residuals = list(residuals) if residuals is not None else []
        if residuals is not None:
            context["residuals"] = [float(r) for r in self.residuals]
        super().__init__(message, severity=severity, context=context)


class NoCrossingError(RobustnessError):
    """The fitted probability never reaches the decision boundary in range."""


class MitigationError(QRobustError):
    """Errors related to readout noise emulation and unfolding."""

    def __init__(
        self,
        message: str,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        super().__init__(message, ErrorCategory.MITIGATION_ERROR, severity, context)


class ValidationError(QRobustError):
    """Errors related to data validation and input checking."""

    def __init__(
        self,
        message: str,
        field_name: str = None,
        field_value: Any = None,
        severity: ErrorSeverity = ErrorSeverity.LOW,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if field_name:
            context["field_name"] = field_name
        if field_value is not None:
            context["field_value"] = str(field_value)
        super().__init__(message, ErrorCategory.VALIDATION_ERROR, severity, context)


class ConfigurationError(QRobustError):
    """Errors related to configuration and setup."""

    def __init__(
        self,
        message: str,
        config_key: str = None,
        config_file: str = None,
        severity: ErrorSeverity = ErrorSeverity.HIGH,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if config_key:
            context["config_key"] = config_key
        if config_file:
            context["config_file"] = config_file
        self.config_key = config_key
        super().__init__(message, ErrorCategory.CONFIGURATION_ERROR, severity, context)


class FileOperationError(QRobustError):
    """Errors related to file operations."""

    def __init__(
        self,
        message: str,
        file_path: str = None,
        operation: str = None,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        context: Dict[str, Any] = None,
    ):
        context = context or {}
        if file_path:
            context["file_path"] = str(file_path)
        if operation:
            context["operation"] = operation
        super().__init__(message, ErrorCategory.FILE_ERROR, severity, context)


class ErrorHandler:
    """Centralised error handling and reporting system."""

    def __init__(self, logger: Optional[logging.Logger] = None):
        self.logger = logger or logging.getLogger(__name__)
        self.error_reports: List[ErrorReport] = []
        self.error_counts: Dict[str, int] = {}

        self.recovery_suggestions = {
            ErrorCategory.SIMULATION_ERROR: "Check qubit indices and register size of the circuit being simulated.",
            ErrorCategory.CIRCUIT_ERROR: "Check block sizes, feature count and parameter vector length against the model.",
            ErrorCategory.DATA_ERROR: "Check dataset paths and IDX files, or run the prepare stage again.",
            ErrorCategory.TRAINING_ERROR: "Lower the learning rate or change the seed; inspect the epoch history.",
            ErrorCategory.ATTACK_ERROR: "Check the mask fraction and the gradient samples used to build the mask.",
            ErrorCategory.ROBUSTNESS_ERROR: "Widen the perturbation grid or inspect the per-sample attack curve.",
            ErrorCategory.MITIGATION_ERROR: "Check readout fidelities and that the assignment matrix is invertible in practice.",
            ErrorCategory.CONFIGURATION_ERROR: "Review the run configuration file and profile name.",
            ErrorCategory.FILE_ERROR: "Check file permissions and disk space. Ensure file paths are correct.",
            ErrorCategory.VALIDATION_ERROR: "Verify input shapes and value ranges.",
            ErrorCategory.SYSTEM_ERROR: "Check system resources and dependencies. Review logs for additional context.",
        }

    def generate_error_id(self) -> str:
        return f"QR_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{str(uuid.uuid4())[:8]}"

    def handle_error(
        self, error: Exception, context: Dict[str, Any] = None
    ) -> ErrorReport:
        """
        Handle and report an error.

        Args:
            error: The exception that occurred
            context: Additional context information

        Returns:
            ErrorReport: Detailed error report
        """
        exc_info = sys.exc_info()
        tb = traceback.extract_tb(exc_info[2]) if exc_info[2] else []

        frame_info = tb[-1] if tb else None
        module_name = frame_info.filename.split("/")[-1] if frame_info else None
        function_name = frame_info.name if frame_info else None
        line_number = frame_info.lineno if frame_info else None

        if isinstance(error, QRobustError):
            category = error.category
            severity = error.severity
            error_context = {**(error.context or {}), **(context or {})}
        else:
            category = self._classify_error(error)
            severity = self._determine_severity(error, category)
            error_context = context or {}

        error_report = ErrorReport(
            error_id=self.generate_error_id(),
            timestamp=datetime.now(),
            message=str(error),
            category=category,
            severity=severity,
            exception_type=type(error).__name__,
            traceback_str=traceback.format_exc() if exc_info[2] else None,
            context=error_context,
            module=module_name,
            function=function_name,
            line_number=line_number,
            recovery_suggestion=self.recovery_suggestions.get(category),
        )

        self._log_error(error_report)
        self.error_reports.append(error_report)
        key = category.value
        self.error_counts[key] = self.error_counts.get(key, 0) + 1

        return error_report

    def _classify_error(self, error: Exception) -> ErrorCategory:
        """Classify a foreign exception based on its type."""
        if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
            return ErrorCategory.FILE_ERROR
        if isinstance(error, (ValueError, TypeError, IndexError)):
            return ErrorCategory.VALIDATION_ERROR
        if isinstance(error, (FloatingPointError, ArithmeticError)):
            return ErrorCategory.TRAINING_ERROR
        return ErrorCategory.SYSTEM_ERROR

    def _determine_severity(
        self, error: Exception, category: ErrorCategory
    ) -> ErrorSeverity:
        if isinstance(error, (MemoryError, KeyboardInterrupt)):
            return ErrorSeverity.CRITICAL
        if category in (ErrorCategory.FILE_ERROR, ErrorCategory.SYSTEM_ERROR):
            return ErrorSeverity.HIGH
        return ErrorSeverity.MEDIUM

    def _log_error(self, error_report: ErrorReport) -> None:
        """Log error report with appropriate level."""
        log_message = f"[{error_report.error_id}] {error_report.message}"
        extra = {"error_report": error_report.to_dict()}

        if error_report.severity == ErrorSeverity.CRITICAL:
            self.logger.critical(log_message, extra=extra)
        elif error_report.severity == ErrorSeverity.HIGH:
            self.logger.error(log_message, extra=extra)
        elif error_report.severity == ErrorSeverity.MEDIUM:
            self.logger.warning(log_message, extra=extra)
        else:
            self.logger.info(log_message, extra=extra)

        if error_report.traceback_str and error_report.severity in (
            ErrorSeverity.HIGH,
            ErrorSeverity.CRITICAL,
        ):
            self.logger.debug(
                f"[{error_report.error_id}] Traceback:\n{error_report.traceback_str}"
            )

    def get_error_summary(self) -> Dict[str, Any]:
        """Get summary of error statistics."""
        total_errors = len(self.error_reports)
        if total_errors == 0:
            return {"total_errors": 0, "categories": {}, "severities": {}}

        severity_counts: Dict[str, int] = {}
        for report in self.error_reports:
            severity_counts[report.severity.value] = (
                severity_counts.get(report.severity.value, 0) + 1
            )

        return {
            "total_errors": total_errors,
            "categories": dict(self.error_counts),
            "severities": severity_counts,
            "recent_errors": [r.to_dict() for r in self.error_reports[-10:]],
        }


# Global error handler instance
error_handler = ErrorHandler()


def handle_errors(category: ErrorCategory = None, severity: ErrorSeverity = None):
    """
    Decorator that reports any exception through the global handler and re-raises it.

    Args:
        category: Override error category classification
        severity: Override error severity determination
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except Exception as e:
                if isinstance(e, QRobustError):
                    if category:
                        e.category = category
                    if severity:
                        e.severity = severity

                error_handler.handle_error(e, {"function": func.__name__})
                raise

        return wrapper

    return decorator
