"""Experiment orchestration: one run per mode, and the full mode x scheme matrix."""

import time
from pathlib import Path
from typing import Dict, List, Optional

from sleepkd.config import DistillConfig, ExperimentMode, Settings, StageSchema
from sleepkd.core.rundir import RunDirectory, compute_run_id
from sleepkd.core.trainer import StepResult, Trainer, evaluate
from sleepkd.evaluation.report import ExperimentReport, write_report_csv
from sleepkd.logging import get_logger, logger as experiment_logger
from sleepkd.models.checkpoint import load_checkpoint
from sleepkd.models.segmodel import SegmentationNet
from sleepkd.records.annotations import class_names
from sleepkd.records.dataset import PairedDataset
from sleepkd.utils.errors import ConfigError

# Order of the experiment matrix; the EEG baseline trains the teacher of the rest
MATRIX_MODES = (
    ExperimentMode.EEG_BASELINE,
    ExperimentMode.ECG_BASELINE,
    ExperimentMode.SD_CL,
    ExperimentMode.AT_CL,
    ExperimentMode.AT_SD_CL,
)


def with_mode(
    config: DistillConfig, mode: ExperimentMode, scheme: Optional[StageSchema] = None
) -> DistillConfig:
    """Copy of `config` with another mode (and class scheme), re-validated."""
    data = config.model_dump()
    data["mode"] = mode
    if scheme is not None:
        data["class_scheme"] = scheme
    return DistillConfig(**data)


class ExperimentOrchestrator:
    """Runs experiments described by a Settings object."""

    def __init__(self, settings: Settings) -> None:
        """Initialize the orchestrator.

        Args:
            settings: Effective configuration
        """
        self.settings = settings
        self.logger = get_logger("orchestrator")
        self._last_result: Optional[StepResult] = None

    def _resolve_teacher(
        self, config: DistillConfig, teacher: Optional[SegmentationNet]
    ) -> Optional[SegmentationNet]:
        if not config.mode.is_distillation:
            return None
        if teacher is not None:
            return teacher
        if config.teacher_checkpoint is None:
            raise ConfigError(
                f"Mode {config.mode.value} needs a teacher checkpoint",
                {"mode": config.mode.value},
            )
        return load_checkpoint(config.teacher_checkpoint)

    def run_experiment(
        self,
        config: DistillConfig,
        dataset: PairedDataset,
        run_dir: Optional[RunDirectory] = None,
        teacher: Optional[SegmentationNet] = None,
    ) -> ExperimentReport:
        """Train per the config's mode and report on the held-out test subjects.

        EEG_BASELINE and ECG_BASELINE train on weighted cross entropy alone;
        SD_CL runs the final step only; AT_CL and AT_SD_CL run the feature step
        then the final step with the alpha of ``config.plan()``.

        Args:
            config: Experiment configuration
            dataset: Split dataset under the config's class scheme
            run_dir: Open run directory for logs, checkpoint and report
            teacher: Trained teacher (loaded from ``teacher_checkpoint`` when omitted)

        Returns:
            ExperimentReport of the best checkpoint on the test partition

        Raises:
            ConfigError: If a distillation mode has no teacher
        """
        start = time.monotonic()
        plan = config.plan()
        teacher = self._resolve_teacher(config, teacher)
        run_id = compute_run_id(config)
        experiment_logger.log_run_start(run_id, config.mode.value, config.model_dump(mode="json"))

        trainer = Trainer(
            config,
            self.settings.data.window_epochs,
            run_dir=run_dir,
            show_progress=self.settings.show_progress,
        )

        result: StepResult
        if teacher is None:
            result = trainer.train_baseline(dataset, plan.modality)
        else:
            student = trainer.new_model()
            if plan.feature_step:
                student = trainer.feature_train(student, teacher, dataset).model
            result = trainer.final_train(student, teacher, dataset, config.weights)

        test_windows = dataset.windows("test", plan.modality, self.settings.data.window_epochs)
        cm = evaluate(result.model, test_windows, config.batch_size)
        report = ExperimentReport.from_confusion(
            cm,
            mode=config.mode.value,
            class_scheme=config.class_scheme,
            class_names=class_names(config.class_scheme),
            run_id=run_id,
            best_epoch=result.state.best_epoch,
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            config=config.model_dump(mode="json"),
        )
        if run_dir is not None:
            report.write(run_dir.report_path)

        experiment_logger.log_run_complete(
            run_id, report.weighted_f1, report.accuracy, time.monotonic() - start
        )
        self._last_result = result
        return report

    def run_matrix(
        self,
        datasets: Dict[StageSchema, PairedDataset],
        out_dir: Optional[Path] = None,
        force: bool = False,
        modes: Optional[List[ExperimentMode]] = None,
    ) -> List[ExperimentReport]:
        """Run every mode for every class scheme.

        Per scheme the EEG baseline runs first and its best model becomes the
        teacher of the distillation modes. With `out_dir`, each run gets
        ``<out_dir>/<scheme>/<mode>`` and a combined ``report.csv`` is written.

        Args:
            datasets: Dataset per class scheme
            out_dir: Root of the run directories
            force: Clear existing run directories
            modes: Subset of modes (EEG_BASELINE is always included)

        Returns:
            One report per (scheme, mode)
        """
        wanted = [m for m in MATRIX_MODES if modes is None or m in modes]
        if ExperimentMode.EEG_BASELINE not in wanted:
            wanted.insert(0, ExperimentMode.EEG_BASELINE)

        reports: List[ExperimentReport] = []
        base = self.settings.experiment
        for scheme, dataset in datasets.items():
            teacher: Optional[SegmentationNet] = None
            teacher_path: Optional[Path] = None
            for mode in wanted:
                config = with_mode(base, mode, scheme)
                if mode.is_distillation and teacher_path is not None:
                    config = config.model_copy(update={"teacher_checkpoint": teacher_path})
                self.logger.info("matrix_run", scheme=scheme.value, mode=mode.value)

                if out_dir is None:
                    report = self.run_experiment(config, dataset, teacher=teacher)
                else:
                    settings = self.settings.model_copy(update={"experiment": config})
                    with RunDirectory(out_dir / scheme.value / mode.value, force) as run_dir:
                        run_dir.start(settings, "matrix")
                        report = self.run_experiment(config, dataset, run_dir, teacher)
                    if mode == ExperimentMode.EEG_BASELINE:
                        teacher_path = run_dir.best_checkpoint

                if mode == ExperimentMode.EEG_BASELINE and self._last_result is not None:
                    teacher = self._last_result.model
                reports.append(report)

        if out_dir is not None:
            write_report_csv(reports, out_dir / "report.csv")
        return reports


def run_experiment(
    settings: Settings,
    dataset: PairedDataset,
    run_dir: Optional[RunDirectory] = None,
    teacher: Optional[SegmentationNet] = None,
) -> ExperimentReport:
    """Run the experiment of ``settings.experiment`` on `dataset`."""
    return ExperimentOrchestrator(settings).run_experiment(
        settings.experiment, dataset, run_dir, teacher
    )


def run_matrix(
    settings: Settings,
    datasets: Dict[StageSchema, PairedDataset],
    out_dir: Optional[Path] = None,
    force: bool = False,
) -> List[ExperimentReport]:
    """Run the full mode x class-scheme matrix."""
    return ExperimentOrchestrator(settings).run_matrix(datasets, out_dir, force)
