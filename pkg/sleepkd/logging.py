"""Structured run and epoch logging for the distillation toolkit."""

import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, List, Optional

import structlog
from rich.console import Console
from rich.logging import RichHandler

from sleepkd.config import LoggingConfig

_SHARED_PROCESSORS = [
    structlog.stdlib.add_logger_name,
    structlog.stdlib.add_log_level,
    structlog.processors.TimeStamper(fmt="iso"),
    structlog.processors.format_exc_info,
]


def _console_handler(json_lines: bool) -> logging.Handler:
    if json_lines:
        return logging.StreamHandler(sys.stderr)
    return RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)


class ExperimentLogger:
    """Process-wide logger for runs, epochs and failures."""

    _instance: Optional["ExperimentLogger"] = None
    _handlers: List[logging.Handler] = []

    def __new__(cls) -> "ExperimentLogger":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def configure(self, config: LoggingConfig) -> None:
        """Route structlog events to the console and/or a size-rotated file.

        Both sinks receive the same rendered line: one JSON object per event
        with ``format: json``, the structlog console layout otherwise.

        Args:
            config: Logging configuration
        """
        json_lines = config.format == "json"
        renderer = (
            structlog.processors.JSONRenderer()
            if json_lines
            else structlog.dev.ConsoleRenderer(colors=False)
        )
        structlog.configure(
            processors=[*_SHARED_PROCESSORS, renderer],
            context_class=dict,
            logger_factory=structlog.stdlib.LoggerFactory(),
            cache_logger_on_first_use=False,
        )

        level = getattr(logging, config.level.value)
        root = logging.getLogger()
        root.setLevel(level)
        for handler in root.handlers[:]:
            root.removeHandler(handler)
        for handler in self._handlers:
            handler.close()

        handlers: List[logging.Handler] = []
        if config.console:
            handlers.append(_console_handler(json_lines))
        if config.file:
            config.file.parent.mkdir(parents=True, exist_ok=True)
            handlers.append(
                RotatingFileHandler(
                    config.file,
                    maxBytes=config.rotation_size,
                    backupCount=config.backup_count,
                    encoding="utf-8",
                )
            )
        for handler in handlers:
            handler.setLevel(level)
            root.addHandler(handler)
        self._handlers = handlers

    def get_logger(self, name: Optional[str] = None) -> structlog.BoundLogger:
        """Logger bound to a component name, resolved against the current configuration."""
        return structlog.get_logger(component=name) if name else structlog.get_logger()

    def log_run_start(self, run_id: str, mode: str, config: Dict[str, Any]) -> None:
        self.get_logger().info(
            "run_started",
            run_id=run_id,
            mode=mode,
            config=config,
        )

    def log_run_complete(
        self, run_id: str, weighted_f1: float, accuracy: float, duration_seconds: float
    ) -> None:
        self.get_logger().info(
            "run_completed",
            run_id=run_id,
            weighted_f1=weighted_f1,
            accuracy=accuracy,
            duration_seconds=duration_seconds,
        )

    def log_epoch(
        self, step: str, epoch: int, split: str = "train", **metrics: Optional[float]
    ) -> None:
        """Log one epoch of a training step; unset metrics are dropped."""
        self.get_logger().info(
            "epoch_completed",
            step=step,
            epoch=epoch,
            split=split,
            **{k: v for k, v in metrics.items() if v is not None},
        )

    def log_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
        """Log a failure with the error's type, message and context.

        Args:
            error: The raised error (toolkit errors carry ``error_type`` and ``context``)
            context: Extra fields, e.g. the failing command
        """
        error_type = getattr(error, "error_type", None)
        fields: Dict[str, Any] = {
            "error_type": getattr(error_type, "value", type(error).__name__),
            "message": str(error),
        }
        fields.update(getattr(error, "context", None) or {})
        fields.update(context or {})
        self.get_logger().error("error_occurred", **fields)


logger = ExperimentLogger()


def get_logger(name: Optional[str] = None) -> structlog.BoundLogger:
    """Get a logger bound to a component name."""
    return logger.get_logger(name)
