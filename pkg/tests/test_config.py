"""Tests for configuration loading and mode canonicalization."""

import os
from pathlib import Path

import pytest
from pydantic import ValidationError

from sleepkd.config import (
    ATConfig,
    DataConfig,
    DistillConfig,
    ExperimentMode,
    ModelConfig,
    Settings,
    StageSchema,
    apply_overrides,
    load_config,
)

EXAMPLE_CONFIG = Path(__file__).resolve().parent.parent / "config.example.yaml"


class TestTrainingPlan:
    """Experiment modes reduce to a modality and two optional steps."""

    @pytest.mark.parametrize(
        "mode, modality, feature_step, distill_step, alpha",
        [
            (ExperimentMode.EEG_BASELINE, "eeg", False, False, 0.0),
            (ExperimentMode.ECG_BASELINE, "ecg", False, False, 0.0),
            (ExperimentMode.SD_CL, "ecg", False, True, 0.3),
            (ExperimentMode.AT_CL, "ecg", True, True, 0.0),
            (ExperimentMode.AT_SD_CL, "ecg", True, True, 0.3),
        ],
    )
    def test_plan(self, mode, modality, feature_step, distill_step, alpha):
        plan = DistillConfig(mode=mode, alpha=0.3).plan()

        assert (plan.modality, plan.feature_step, plan.distill_step) == (
            modality,
            feature_step,
            distill_step,
        )
        assert plan.alpha == alpha

    def test_at_cl_equals_at_sd_cl_at_alpha_zero(self):
        at_cl = DistillConfig(mode=ExperimentMode.AT_CL, alpha=0.8).plan()
        at_sd_cl = DistillConfig(mode=ExperimentMode.AT_SD_CL, alpha=0.0).plan()

        assert at_cl == at_sd_cl

    def test_distillation_modes(self):
        assert not ExperimentMode.EEG_BASELINE.is_distillation
        assert not ExperimentMode.ECG_BASELINE.is_distillation
        assert all(
            m.is_distillation
            for m in (ExperimentMode.SD_CL, ExperimentMode.AT_CL, ExperimentMode.AT_SD_CL)
        )

    def test_weights(self):
        config = DistillConfig(mode=ExperimentMode.SD_CL, alpha=0.25, temperature=4.0)

        assert config.weights.alpha == 0.25
        assert config.weights.temperature == 4.0


class TestDistillConfig:
    def test_head_follows_the_class_scheme(self):
        config = DistillConfig(class_scheme=StageSchema.THREE_CLASS)

        assert config.network.n_classes == 3

    def test_raw_scheme_is_rejected(self):
        with pytest.raises(ValidationError):
            DistillConfig(class_scheme=StageSchema.RAW_RK)

    def test_raw_scheme_has_no_classes(self):
        with pytest.raises(ValueError):
            StageSchema.RAW_RK.n_classes

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValidationError):
            DistillConfig(alpha=alpha)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValidationError):
            DistillConfig(temperature=0.0)

    def test_canonical_json_is_stable(self):
        a = DistillConfig(seed=3, alpha=0.2)
        b = DistillConfig(alpha=0.2, seed=3)

        assert a.canonical_json() == b.canonical_json()
        assert a.canonical_json() != DistillConfig(seed=4, alpha=0.2).canonical_json()


class TestSectionValidation:
    def test_epoch_duration(self):
        assert DataConfig(epoch_duration=20).samples_per_epoch == 4000
        with pytest.raises(ValidationError):
            DataConfig(epoch_duration=25)

    def test_empty_layer_set(self):
        with pytest.raises(ValidationError):
            ATConfig(layers=[])

    def test_model_check(self):
        problems = ModelConfig(
            depth=2, filters_per_stage=[4], pool_sizes=[2, 3], kernel_size=4
        ).check()

        assert len(problems) == 2
        assert "filters_per_stage" in problems[0]
        assert "odd" in problems[1]


class TestLoading:
    """Files, overrides and environment."""

    def test_example_config_loads(self):
        settings = Settings.from_file(EXAMPLE_CONFIG)

        assert settings.experiment == DistillConfig()
        assert settings.data == DataConfig()

    def test_overrides_win(self):
        settings = Settings.from_file(
            EXAMPLE_CONFIG, {"experiment.seed": 7, "data.window_epochs": 10, "data_dir": None}
        )

        assert settings.experiment.seed == 7
        assert settings.data.window_epochs == 10
        assert settings.data_dir == Path("data")

    def test_apply_overrides_creates_sections(self):
        assert apply_overrides({}, {"experiment.at.p": 1}) == {"experiment": {"at": {"p": 1}}}

    def test_round_trip(self, tmp_path, settings):
        path = tmp_path / "echo.yaml"

        settings.to_file(path)

        assert Settings.from_file(path) == settings

    def test_json_and_unknown_formats(self, tmp_path, settings):
        settings.to_file(tmp_path / "echo.json")
        assert Settings.from_file(tmp_path / "echo.json").experiment == settings.experiment

        with pytest.raises(ValueError):
            settings.to_file(tmp_path / "echo.toml")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.yaml")

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("XKD_DATA_DIR", "/srv/sleep")
        monkeypatch.setenv("XKD_EXPERIMENT__SEED", "5")

        settings = load_config()

        assert settings.data_dir == Path("/srv/sleep")
        assert settings.experiment.seed == 5

    def test_env_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv("XKD_DATA_DIR", raising=False)
        env_file = tmp_path / "test.env"
        env_file.write_text("XKD_DATA_DIR=/mnt/psg\n")

        try:
            settings = load_config(env_file=env_file)
        finally:
            os.environ.pop("XKD_DATA_DIR", None)

        assert settings.data_dir == Path("/mnt/psg")
