"""Utility modules for the distillation toolkit."""

from sleepkd.utils.errors import ErrorCollector, SleepKDError
from sleepkd.utils.progress import TrainingProgress

__all__ = ["ErrorCollector", "SleepKDError", "TrainingProgress"]
