"""Error hierarchy and failure aggregation."""

import time
from enum import Enum
from typing import Any, Dict, List, Optional

from sleepkd.logging import get_logger


class ErrorType(str, Enum):
    """Error type classification."""

    INGEST = "ingest"
    ALIGNMENT = "alignment"
    SCHEMA = "schema"
    SPLIT = "split"
    WEIGHTS = "weights"
    CONFIG = "config"
    SHAPE = "shape"
    CHECKPOINT = "checkpoint"
    LOSS = "loss"
    TRAINING = "training"
    LABEL = "label"
    METRIC = "metric"
    RUN_DIRECTORY = "run_directory"
    UNKNOWN = "unknown"


class ErrorSeverity(str, Enum):
    """Error severity levels."""

    CRITICAL = "critical"  # Stop the run
    HIGH = "high"  # Skip the item, record the failure
    LOW = "low"  # Log warning, continue


class SleepKDError(Exception):
    """Base exception for toolkit errors."""

    error_type: ErrorType = ErrorType.UNKNOWN
    severity: ErrorSeverity = ErrorSeverity.CRITICAL

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None) -> None:
        """Initialize the error.

        Args:
            message: Error message
            context: Additional context
        """
        super().__init__(message)
        self.context = context or {}


class IngestError(SleepKDError):
    """A record or annotation file could not be read."""

    error_type = ErrorType.INGEST
    severity = ErrorSeverity.HIGH


class ChannelNotFound(IngestError):
    """The requested channel is absent from a recording."""


class AlignmentError(SleepKDError):
    """Signal and annotation spans do not line up."""

    error_type = ErrorType.ALIGNMENT
    severity = ErrorSeverity.HIGH


class SchemaError(SleepKDError):
    """A stage token does not belong to the expected alphabet."""

    error_type = ErrorType.SCHEMA
    severity = ErrorSeverity.HIGH


class SplitError(SleepKDError):
    """Subjects cannot be partitioned."""

    error_type = ErrorType.SPLIT


class WeightError(SleepKDError):
    """Class weights are undefined for the given labels."""

    error_type = ErrorType.WEIGHTS


class ConfigError(SleepKDError):
    """Configuration is inconsistent."""

    error_type = ErrorType.CONFIG


class ShapeError(SleepKDError):
    """Array shapes are incompatible."""

    error_type = ErrorType.SHAPE


class CheckpointError(SleepKDError):
    """A checkpoint file is corrupt or of an unsupported version."""

    error_type = ErrorType.CHECKPOINT


class LossError(SleepKDError):
    """A loss is undefined for its inputs."""

    error_type = ErrorType.LOSS


class TrainingError(SleepKDError):
    """Training diverged."""

    error_type = ErrorType.TRAINING


class LabelError(SleepKDError):
    """A label lies outside [0, K)."""

    error_type = ErrorType.LABEL


class MetricError(SleepKDError):
    """A metric is undefined (nothing was scored)."""

    error_type = ErrorType.METRIC


class RunDirectoryError(SleepKDError):
    """A run directory is in use or would be overwritten."""

    error_type = ErrorType.RUN_DIRECTORY


class ErrorCollector:
    """Aggregate per-item failures so a batch job can finish and report them."""

    def __init__(self, continue_on_error: bool = True) -> None:
        """Initialize the collector.

        Args:
            continue_on_error: Whether HIGH severity errors are recorded instead of raised
        """
        self.continue_on_error = continue_on_error
        self.logger = get_logger("error_collector")
        self.error_counts: Dict[ErrorType, int] = {}
        self.error_log: List[Dict[str, Any]] = []

    def classify_error(self, error: Exception) -> ErrorType:
        """Classify an error by type.

        Args:
            error: Exception to classify

        Returns:
            Error type
        """
        if isinstance(error, SleepKDError):
            return error.error_type
        if isinstance(error, (FileNotFoundError, PermissionError, EOFError)):
            return ErrorType.INGEST
        if isinstance(error, ValueError):
            return ErrorType.SCHEMA
        return ErrorType.UNKNOWN

    def determine_severity(self, error: Exception) -> ErrorSeverity:
        """Determine error severity.

        Args:
            error: Exception

        Returns:
            Error severity
        """
        if isinstance(error, SleepKDError):
            return error.severity
        if self.classify_error(error) == ErrorType.UNKNOWN:
            return ErrorSeverity.CRITICAL
        return ErrorSeverity.HIGH

    def record(self, item: str, error: Exception) -> None:
        """Record a failure for one item, re-raising critical ones.

        Args:
            item: Identifier of the failed item (subject id, file name)
            error: The failure

        Raises:
            Exception: The original error when it is critical or recording is disabled
        """
        error_type = self.classify_error(error)
        severity = self.determine_severity(error)
        self.error_counts[error_type] = self.error_counts.get(error_type, 0) + 1

        error_record = {
            "timestamp": time.time(),
            "item": item,
            "error_type": error_type.value,
            "severity": severity.value,
            "message": str(error),
            "exception_type": type(error).__name__,
        }
        if isinstance(error, SleepKDError):
            error_record["context"] = error.context
        self.error_log.append(error_record)

        self.logger.error("item_failed", **error_record)

        if severity == ErrorSeverity.CRITICAL or not self.continue_on_error:
            raise error

    @property
    def has_failures(self) -> bool:
        """Whether any failure was recorded."""
        return bool(self.error_log)

    def failed_items(self) -> List[str]:
        """Items that failed, in the order they were recorded."""
        return [entry["item"] for entry in self.error_log]

    def summary(self) -> Dict[str, Any]:
        """Get error summary statistics.

        Returns:
            Error summary
        """
        return {
            "total_errors": len(self.error_log),
            "error_counts": {k.value: v for k, v in self.error_counts.items()},
            "failures": [
                {"item": e["item"], "error_type": e["error_type"], "message": e["message"]}
                for e in self.error_log
            ],
        }
