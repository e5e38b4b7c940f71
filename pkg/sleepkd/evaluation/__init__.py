"""Evaluation metrics and reports."""

from sleepkd.evaluation.metrics import (
    ConfusionMatrix,
    accuracy,
    confusion,
    per_class_f1,
    weighted_f1,
)
from sleepkd.evaluation.report import ExperimentReport, render_tables, report, write_report_csv

__all__ = [
    "ConfusionMatrix",
    "ExperimentReport",
    "accuracy",
    "confusion",
    "per_class_f1",
    "render_tables",
    "report",
    "weighted_f1",
    "write_report_csv",
]
