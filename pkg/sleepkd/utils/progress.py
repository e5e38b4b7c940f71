"""Rich progress display for training loops."""

import time
from typing import Dict, Optional

from rich.console import Console
from rich.live import Live
from rich.panel import Panel
from rich.progress import (
    BarColumn,
    MofNCompleteColumn,
    Progress,
    SpinnerColumn,
    TaskID,
    TextColumn,
    TimeElapsedColumn,
    TimeRemainingColumn,
)
from rich.table import Table

from sleepkd.logging import get_logger


class TrainingProgress:
    """Track and display epochs of one training step.

    With ``enabled=False`` every method only keeps counters, so loops can
    call it unconditionally.
    """

    def __init__(self, enabled: bool = True, console: Optional[Console] = None) -> None:
        """Initialize progress tracker.

        Args:
            enabled: Render a live display on the console
            console: Rich console for output (stderr by default)
        """
        self.enabled = enabled
        self.console = console or Console(stderr=True)
        self.logger = get_logger("progress")

        self.step = ""
        self.total_epochs = 0
        self.completed_epochs = 0
        self.best_metric: Optional[float] = None
        self.last_metrics: Dict[str, float] = {}
        self.start_time: Optional[float] = None

        self.progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TimeElapsedColumn(),
            TimeRemainingColumn(),
            console=self.console,
        )
        self.task: Optional[TaskID] = None
        self.live: Optional[Live] = None

    def start(self, step: str, total_epochs: int) -> None:
        """Begin a training step.

        Args:
            step: Step name (teacher, feature, final)
            total_epochs: Epoch budget
        """
        self.step = step
        self.total_epochs = total_epochs
        self.completed_epochs = 0
        self.best_metric = None
        self.last_metrics = {}
        self.start_time = time.monotonic()

        if self.enabled:
            self.task = self.progress.add_task(f"Training ({step})", total=total_epochs)
            self.live = Live(self._create_display(), console=self.console, refresh_per_second=2)
            self.live.start()

    def update(self, epoch: int, best: Optional[float] = None, **metrics: Optional[float]) -> None:
        """Record a finished epoch.

        Args:
            epoch: 1-based epoch number
            best: Best validation metric so far
            **metrics: Latest loss and metric values
        """
        self.completed_epochs = epoch
        self.best_metric = best if best is not None else self.best_metric
        self.last_metrics = {k: v for k, v in metrics.items() if v is not None}

        if self.task is not None:
            self.progress.update(self.task, completed=epoch)
        if self.live:
            self.live.update(self._create_display())

    def _create_display(self) -> Panel:
        stats = Table(show_header=False, box=None)
        stats.add_column("Label", style="cyan")
        stats.add_column("Value", style="green")
        for name, value in self.last_metrics.items():
            stats.add_row(name, f"{value:.4f}")
        if self.best_metric is not None:
            stats.add_row("best val weighted F1", f"{self.best_metric:.4f}")

        display = Table.grid()
        display.add_column()
        display.add_row(self.progress)
        display.add_row("")
        display.add_row(stats)
        return Panel(display, title=f"Training: {self.step}", border_style="blue")

    def finish(self) -> Dict[str, float]:
        """Stop the display and return a summary."""
        if self.live:
            self.live.stop()
            self.live = None
        if self.task is not None:
            self.progress.remove_task(self.task)
            self.task = None

        elapsed = time.monotonic() - self.start_time if self.start_time else 0.0
        summary = {
            "epochs": float(self.completed_epochs),
            "elapsed_seconds": elapsed,
        }
        if self.best_metric is not None:
            summary["best_metric"] = self.best_metric
        self.logger.debug("progress_finished", step=self.step, **summary)
        return summary
