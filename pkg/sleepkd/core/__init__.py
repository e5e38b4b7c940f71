"""Training, orchestration and run-directory management."""

from sleepkd.core.orchestrator import ExperimentOrchestrator, run_experiment, run_matrix
from sleepkd.core.rundir import RunDirectory, compute_run_id
from sleepkd.core.trainer import StepResult, Trainer, evaluate

__all__ = [
    "ExperimentOrchestrator",
    "RunDirectory",
    "StepResult",
    "Trainer",
    "compute_run_id",
    "evaluate",
    "run_experiment",
    "run_matrix",
]
