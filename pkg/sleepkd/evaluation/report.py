"""Experiment reports and the mode-by-metric result tables."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from sleepkd.config import StageSchema
from sleepkd.evaluation.metrics import ConfusionMatrix, accuracy, per_class_f1, weighted_f1
from sleepkd.logging import get_logger

logger = get_logger("report")

CSV_FLOAT_FORMAT = "%.4f"


class ExperimentReport(BaseModel):
    """Held-out results of one run."""

    run_id: str = ""
    mode: str
    class_scheme: StageSchema
    class_names: List[str]
    weighted_f1: float
    accuracy: float
    per_class_f1: List[float]
    confusion: List[List[int]]
    partition: str = "test"
    best_epoch: Optional[int] = None
    epochs: Optional[int] = None
    learning_rate: Optional[float] = None
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def classes(self) -> str:
        """Class tokens joined as in ``W-L-D-R``."""
        return "-".join(self.class_names)

    @classmethod
    def from_confusion(
        cls,
        cm: ConfusionMatrix,
        mode: str,
        class_scheme: StageSchema,
        class_names: List[str],
        **extra: Any,
    ) -> "ExperimentReport":
        """Compute the headline metrics of a confusion matrix."""
        return cls(
            mode=mode,
            class_scheme=class_scheme,
            class_names=class_names,
            weighted_f1=weighted_f1(cm),
            accuracy=accuracy(cm),
            per_class_f1=[float(v) for v in per_class_f1(cm)],
            confusion=cm.to_list(),
            **extra,
        )

    def write(self, path: Path) -> None:
        """Write the report as JSON."""
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "ExperimentReport":
        """Read a JSON report."""
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def summary_table(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """Mode x (weighted-F1, accuracy)."""
    return pd.DataFrame(
        [
            {
                "mode": r.mode,
                "classes": r.classes,
                "weighted_f1": r.weighted_f1,
                "accuracy": r.accuracy,
            }
            for r in reports
        ],
        columns=["mode", "classes", "weighted_f1", "accuracy"],
    )


def class_table(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """Mode x per-class F1; schemes with other classes leave blanks."""
    columns: List[str] = []
    rows = []
    for r in reports:
        row: Dict[str, Any] = {"mode": r.mode, "classes": r.classes}
        for name, value in zip(r.class_names, r.per_class_f1):
            column = f"f1_{name}"
            if column not in columns:
                columns.append(column)
            row[column] = value
        rows.append(row)
    return pd.DataFrame(rows, columns=["mode", "classes"] + columns)


def report(reports: Sequence[ExperimentReport]) -> pd.DataFrame:
    """Combined table: ``mode,classes,weighted_f1,accuracy,f1_<class>...``.

    Raises:
        ValueError: If no report is given
    """
    if not reports:
        raise ValueError("At least one report is required")
    per_class = class_table(reports).drop(columns=["mode", "classes"])
    return pd.concat([summary_table(reports), per_class], axis=1)


def write_report_csv(reports: Sequence[ExperimentReport], path: Path) -> pd.DataFrame:
    """Write the combined table with four decimals."""
    table = report(reports)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("report_written", path=str(path), rows=len(table))
    return table


def render_tables(reports: Sequence[ExperimentReport], console: Optional[Console] = None) -> None:
    """Print the summary and per-class tables."""
    console = console or Console()

    summary = Table(title="Performance by mode")
    summary.add_column("Mode", style="cyan")
    summary.add_column("Classes")
    summary.add_column("Weighted F1", justify="right", style="green")
    summary.add_column("Accuracy", justify="right", style="green")
    for r in reports:
        summary.add_row(r.mode, r.classes, f"{r.weighted_f1:.4f}", f"{r.accuracy:.4f}")
    console.print(summary)

    for classes in dict.fromkeys(r.classes for r in reports):
        subset = [r for r in reports if r.classes == classes]
        per_class = Table(title=f"Class-wise F1 ({classes})")
        per_class.add_column("Mode", style="cyan")
        for name in subset[0].class_names:
            per_class.add_column(name, justify="right")
        for r in subset:
            per_class.add_row(r.mode, *(f"{v:.4f}" for v in r.per_class_f1))
        console.print(per_class)
