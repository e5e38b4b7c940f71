"""Tests for experiment orchestration."""

import json

import pandas as pd
import pytest
import torch

from sleepkd.config import DataConfig, DistillConfig, ExperimentMode, StageSchema
from sleepkd.core.orchestrator import (
    MATRIX_MODES,
    ExperimentOrchestrator,
    run_experiment,
    with_mode,
)
from sleepkd.core.rundir import RunDirectory, read_run_info
from sleepkd.models.checkpoint import parameter_checksum, save_checkpoint
from sleepkd.models.segmodel import build_model
from sleepkd.utils.errors import ConfigError


class TestWithMode:
    def test_mode_and_scheme(self, distill_config):
        config = with_mode(distill_config, ExperimentMode.SD_CL, StageSchema.THREE_CLASS)

        assert config.mode == ExperimentMode.SD_CL
        assert config.class_scheme == StageSchema.THREE_CLASS
        assert config.network.n_classes == 3
        assert distill_config.mode == ExperimentMode.EEG_BASELINE
        assert distill_config.network.n_classes == 4

    def test_keeps_other_fields(self, distill_config):
        config = with_mode(distill_config, ExperimentMode.AT_CL)

        assert config.epochs == distill_config.epochs
        assert config.network == distill_config.network
        assert config.plan().alpha == 0.0


class TestRunExperiment:
    """Single runs."""

    def test_distillation_needs_a_teacher(self, settings, paired_dataset):
        settings.experiment = with_mode(settings.experiment, ExperimentMode.SD_CL)

        with pytest.raises(ConfigError, match="teacher"):
            run_experiment(settings, paired_dataset)

    def test_baseline_report(self, settings, paired_dataset, tmp_path):
        settings.experiment = with_mode(settings.experiment, ExperimentMode.ECG_BASELINE)

        with RunDirectory(tmp_path / "run") as run_dir:
            run_dir.start(settings, "train")
            report = run_experiment(settings, paired_dataset, run_dir)

        assert report.mode == "ecg_baseline"
        assert report.classes == "W-L-D-R"
        assert sum(map(sum, report.confusion)) == 24
        assert 0.0 <= report.weighted_f1 <= 1.0
        stored = json.loads((tmp_path / "run" / "report.json").read_text())
        assert stored["run_id"] == report.run_id
        assert read_run_info(tmp_path / "run")["status"] == "completed"

    def test_teacher_loaded_from_checkpoint(self, settings, paired_dataset, tmp_path):
        orchestrator = ExperimentOrchestrator(settings)
        teacher = orchestrator.run_experiment(settings.experiment, paired_dataset)
        assert teacher.mode == "eeg_baseline"
        path = tmp_path / "teacher.ckpt"
        save_checkpoint(orchestrator._last_result.model, path)

        config = with_mode(settings.experiment, ExperimentMode.AT_SD_CL).model_copy(
            update={"teacher_checkpoint": path}
        )
        report = orchestrator.run_experiment(config, paired_dataset)

        assert report.mode == "at_sd_cl"
        assert report.config["teacher_checkpoint"] == str(path)

    def test_run_id_is_deterministic(self, settings, paired_dataset):
        first = run_experiment(settings, paired_dataset)
        second = run_experiment(settings, paired_dataset)

        assert first.run_id == second.run_id
        assert first.confusion == second.confusion


def _run_in(tmp_path, name, settings, config, dataset, teacher=None):
    orchestrator = ExperimentOrchestrator(settings)
    with RunDirectory(tmp_path / name) as run_dir:
        orchestrator.run_experiment(config, dataset, run_dir, teacher)
    return run_dir, orchestrator._last_result.model


class TestReproducibility:
    """Runs with equal settings leave equal files behind."""

    @pytest.fixture
    def teacher(self, distill_config):
        torch.manual_seed(11)
        return build_model(distill_config.network)

    @pytest.mark.parametrize("mode", [ExperimentMode.ECG_BASELINE, ExperimentMode.AT_SD_CL])
    def test_reruns_are_byte_identical(self, settings, paired_dataset, teacher, tmp_path, mode):
        config = with_mode(settings.experiment, mode)

        first, _ = _run_in(tmp_path, "first", settings, config, paired_dataset, teacher)
        second, _ = _run_in(tmp_path, "second", settings, config, paired_dataset, teacher)

        assert first.log_path.read_bytes() == second.log_path.read_bytes()
        assert first.report_path.read_bytes() == second.report_path.read_bytes()
        assert first.best_checkpoint.read_bytes() == second.best_checkpoint.read_bytes()

    def test_at_cl_equals_at_sd_cl_at_alpha_zero(
        self, settings, paired_dataset, teacher, tmp_path
    ):
        at_cl = with_mode(settings.experiment, ExperimentMode.AT_CL).model_copy(
            update={"alpha": 0.7}
        )
        at_sd_cl = with_mode(settings.experiment, ExperimentMode.AT_SD_CL).model_copy(
            update={"alpha": 0.0}
        )

        first, first_model = _run_in(tmp_path, "at_cl", settings, at_cl, paired_dataset, teacher)
        second, second_model = _run_in(
            tmp_path, "at_sd_cl", settings, at_sd_cl, paired_dataset, teacher
        )

        assert at_cl.weights.alpha == at_sd_cl.weights.alpha == 0.0
        assert first.log_path.read_bytes() == second.log_path.read_bytes()
        assert parameter_checksum(first_model) == parameter_checksum(second_model)

    def test_sd_cl_equals_at_sd_cl_without_feature_epochs(
        self, settings, paired_dataset, teacher, tmp_path
    ):
        base = settings.experiment.model_copy(update={"feature_epochs": 0})

        sd_cl_config = with_mode(base, ExperimentMode.SD_CL)
        at_sd_cl_config = with_mode(base, ExperimentMode.AT_SD_CL)

        _, sd_cl = _run_in(tmp_path, "sd_cl", settings, sd_cl_config, paired_dataset, teacher)
        _, at_sd_cl = _run_in(
            tmp_path, "at_sd_cl", settings, at_sd_cl_config, paired_dataset, teacher
        )

        assert parameter_checksum(sd_cl) == parameter_checksum(at_sd_cl)


@pytest.mark.slow
class TestRunMatrix:
    def test_full_matrix(self, settings, paired_dataset, three_class_dataset, tmp_path):
        settings.experiment.epochs = 1
        settings.experiment.feature_epochs = 1
        out = tmp_path / "matrix"

        reports = ExperimentOrchestrator(settings).run_matrix(
            {
                StageSchema.FOUR_CLASS: paired_dataset,
                StageSchema.THREE_CLASS: three_class_dataset,
            },
            out,
        )

        assert len(reports) == 2 * len(MATRIX_MODES)
        assert [r.mode for r in reports[:5]] == [m.value for m in MATRIX_MODES]
        assert {r.classes for r in reports} == {"W-L-D-R", "W-N-R"}
        for mode in MATRIX_MODES:
            assert (out / "three_class" / mode.value / "report.json").exists()
        table = pd.read_csv(out / "report.csv")
        assert len(table) == 10
        info = read_run_info(out / "four_class" / "sd_cl")
        assert info["teacher_checkpoint"].endswith("best.ckpt")

    def test_subset_always_trains_the_teacher(self, settings, paired_dataset):
        settings.experiment.epochs = 1

        reports = ExperimentOrchestrator(settings).run_matrix(
            {StageSchema.FOUR_CLASS: paired_dataset}, modes=[ExperimentMode.SD_CL]
        )

        assert [r.mode for r in reports] == ["eeg_baseline", "sd_cl"]

    def test_distilled_student_keeps_up_with_the_ecg_baseline(
        self, settings, acceptance_model_config, acceptance_dataset
    ):
        experiment = DistillConfig(
            epochs=200,
            batch_size=4,
            learning_rate=3e-3,
            seed=0,
            network=acceptance_model_config,
            class_scheme=StageSchema.FOUR_CLASS,
        )
        settings = settings.model_copy(
            update={
                "experiment": experiment,
                "data": DataConfig(sample_rate=20, window_epochs=10),
            }
        )

        reports = ExperimentOrchestrator(settings).run_matrix(
            {StageSchema.FOUR_CLASS: acceptance_dataset},
            modes=[ExperimentMode.ECG_BASELINE, ExperimentMode.SD_CL],
        )

        by_mode = {r.mode: r for r in reports}
        assert by_mode["sd_cl"].weighted_f1 >= by_mode["ecg_baseline"].weighted_f1 - 0.02
