"""Configuration management for the distillation toolkit."""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class LogLevel(str, Enum):
    """Logging levels."""

    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"


class StageSchema(str, Enum):
    """Sleep-stage alphabets."""

    RAW_RK = "raw_rk"
    FOUR_CLASS = "four_class"
    THREE_CLASS = "three_class"

    @property
    def n_classes(self) -> int:
        """Number of scored classes K (RAW_RK has none)."""
        if self == StageSchema.FOUR_CLASS:
            return 4
        if self == StageSchema.THREE_CLASS:
            return 3
        raise ValueError("RAW_RK hypnograms must be merged before they define classes")


class ExperimentMode(str, Enum):
    """Experiment modes: two baselines and three distillation variants."""

    EEG_BASELINE = "eeg_baseline"
    ECG_BASELINE = "ecg_baseline"
    SD_CL = "sd_cl"
    AT_CL = "at_cl"
    AT_SD_CL = "at_sd_cl"

    @property
    def is_distillation(self) -> bool:
        """Whether the mode needs a trained teacher."""
        return self in (ExperimentMode.SD_CL, ExperimentMode.AT_CL, ExperimentMode.AT_SD_CL)


class Activation(str, Enum):
    """Nonlinearities available to the segmentation network."""

    RELU = "relu"
    ELU = "elu"
    GELU = "gelu"
    TANH = "tanh"


class Norm(str, Enum):
    """Normalization after each convolution."""

    BATCH = "batch"
    NONE = "none"


class ModelConfig(BaseModel):
    """Hyperparameters of the encoder-decoder segmentation network."""

    depth: int = Field(default=5, ge=1, description="Number of encoder stages")
    filters_per_stage: List[int] = Field(
        default_factory=lambda: [16, 32, 64, 128, 256],
        description="Output channels of each encoder stage",
    )
    bottleneck_filters: Optional[int] = Field(
        default=None, ge=1, description="Bottleneck channels (defaults to twice the last stage)"
    )
    kernel_size: int = Field(default=5, ge=1, description="Convolution kernel size (odd)")
    pool_sizes: List[int] = Field(
        default_factory=lambda: [10, 5, 5, 4, 3],
        description="Max-pool factor after each encoder stage",
    )
    n_classes: int = Field(default=4, ge=2, description="Number of classes K")
    samples_per_epoch: int = Field(default=6000, ge=1, description="Samples per segment i")
    dilation: int = Field(default=9, ge=1, description="Dilation of encoder convolutions")
    activation: Activation = Field(default=Activation.RELU, description="Nonlinearity")
    norm: Norm = Field(default=Norm.BATCH, description="Normalization layer")

    @property
    def bottleneck_channels(self) -> int:
        """Channels of the bottleneck stage."""
        if self.bottleneck_filters is not None:
            return self.bottleneck_filters
        return 2 * self.filters_per_stage[-1]

    @property
    def total_pool(self) -> int:
        """Product of all pool sizes."""
        return math.prod(self.pool_sizes)

    def check(self) -> List[str]:
        """Validate cross-field invariants.

        Returns:
            List of problems; empty when the config can be built
        """
        problems = []
        if len(self.filters_per_stage) != self.depth:
            problems.append(
                f"filters_per_stage has {len(self.filters_per_stage)} entries, "
                f"depth is {self.depth}"
            )
        if len(self.pool_sizes) != self.depth:
            problems.append(f"pool_sizes has {len(self.pool_sizes)} entries, depth is {self.depth}")
        if any(p < 1 for p in self.pool_sizes):
            problems.append("pool sizes must be positive")
        elif self.samples_per_epoch % self.total_pool != 0:
            problems.append(
                f"product of pool_sizes ({self.total_pool}) does not divide "
                f"samples_per_epoch ({self.samples_per_epoch})"
            )
        if any(f < 1 for f in self.filters_per_stage):
            problems.append("filter counts must be positive")
        if self.kernel_size % 2 == 0:
            problems.append(f"kernel_size must be odd for same padding, got {self.kernel_size}")
        return problems


class ATConfig(BaseModel):
    """Attention-transfer settings."""

    p: int = Field(default=2, ge=1, description="Power applied to activations before channel sum")
    layers: Optional[List[int]] = Field(
        default=None, description="Tap indices included in the loss (all taps when unset)"
    )

    @field_validator("layers")
    @classmethod
    def validate_layers(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        """Ensure an explicit layer set is non-empty and non-negative."""
        if v is not None:
            if not v:
                raise ValueError("layer set must not be empty")
            if any(j < 0 for j in v):
                raise ValueError("layer indices must be non-negative")
        return v

    def resolve(self, n_taps: int) -> List[int]:
        """Concrete tap indices for a network with `n_taps` taps."""
        return list(range(n_taps)) if self.layers is None else list(self.layers)


class DistillWeights(BaseModel):
    """Weighting of the response-based distillation term."""

    alpha: float = Field(default=0.5, ge=0.0, le=1.0, description="Weight of the KD term")
    temperature: float = Field(default=1.0, gt=0.0, description="Softmax temperature T_d")


class TrainingPlan(BaseModel):
    """Canonical form of an experiment mode."""

    modality: str
    feature_step: bool
    distill_step: bool
    alpha: float


class DistillConfig(BaseModel):
    """Everything that determines one training run."""

    mode: ExperimentMode = Field(default=ExperimentMode.EEG_BASELINE)
    alpha: float = Field(default=0.5, ge=0.0, le=1.0, description="Weight of the KD term")
    temperature: float = Field(default=1.0, gt=0.0, description="Softmax temperature T_d")
    epochs: int = Field(default=150, ge=0, description="Training epochs (final step and baselines)")
    learning_rate: float = Field(default=1e-3, gt=0.0)
    betas: Tuple[float, float] = Field(default=(0.9, 0.999), description="Adam moments")
    weight_decay: float = Field(default=0.0, ge=0.0)
    batch_size: int = Field(default=12, ge=1, description="Windows per mini-batch")
    seed: int = Field(default=0)
    class_scheme: StageSchema = Field(default=StageSchema.FOUR_CLASS)
    network: ModelConfig = Field(default_factory=ModelConfig)
    at: ATConfig = Field(default_factory=ATConfig)
    feature_epochs: int = Field(default=50, ge=0, description="Feature-step epoch budget")
    feature_patience: int = Field(default=10, ge=1, description="Feature-step plateau patience")
    feature_min_delta: float = Field(default=1e-4, ge=0.0, description="Feature-step plateau delta")
    teacher_checkpoint: Optional[Path] = Field(
        default=None, description="Trained teacher checkpoint for distillation modes"
    )

    @field_validator("class_scheme")
    @classmethod
    def validate_scheme(cls, v: StageSchema) -> StageSchema:
        """Only merged alphabets define training classes."""
        if v == StageSchema.RAW_RK:
            raise ValueError("class_scheme must be four_class or three_class")
        return v

    @model_validator(mode="after")
    def align_class_count(self) -> "DistillConfig":
        """Keep the network head in step with the class scheme."""
        if self.network.n_classes != self.class_scheme.n_classes:
            self.network = self.network.model_copy(
                update={"n_classes": self.class_scheme.n_classes}
            )
        return self

    @property
    def weights(self) -> DistillWeights:
        """Distillation weights of the final step."""
        return DistillWeights(alpha=self.plan().alpha, temperature=self.temperature)

    def plan(self) -> TrainingPlan:
        """Canonicalize the mode into the steps it runs.

        SD_CL never runs the feature step, AT_CL forces alpha to zero and AT_SD_CL uses
        alpha as given, so AT_CL equals AT_SD_CL at alpha 0.
        """
        if self.mode == ExperimentMode.EEG_BASELINE:
            return TrainingPlan(modality="eeg", feature_step=False, distill_step=False, alpha=0.0)
        if self.mode == ExperimentMode.ECG_BASELINE:
            return TrainingPlan(modality="ecg", feature_step=False, distill_step=False, alpha=0.0)
        if self.mode == ExperimentMode.SD_CL:
            return TrainingPlan(
                modality="ecg", feature_step=False, distill_step=True, alpha=self.alpha
            )
        if self.mode == ExperimentMode.AT_CL:
            return TrainingPlan(modality="ecg", feature_step=True, distill_step=True, alpha=0.0)
        return TrainingPlan(modality="ecg", feature_step=True, distill_step=True, alpha=self.alpha)

    def canonical_json(self) -> str:
        """Stable JSON text of the config, used for run ids."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


class DataConfig(BaseModel):
    """Canonical signal layout."""

    sample_rate: int = Field(default=200, ge=1, description="Canonical sampling rate (Hz)")
    epoch_duration: int = Field(default=30, description="Scoring epoch length (s)")
    window_epochs: int = Field(default=35, ge=1, description="Epochs per training window T")
    eeg_channel: str = Field(default="C3-A2", description="Teacher modality channel label")
    ecg_channel: str = Field(default="ECG-Lead1", description="Student modality channel label")

    @field_validator("epoch_duration")
    @classmethod
    def validate_epoch_duration(cls, v: int) -> int:
        """Scored epochs are 20 or 30 seconds long."""
        if v not in (20, 30):
            raise ValueError(f"epoch_duration must be 20 or 30 seconds, got {v}")
        return v

    @property
    def samples_per_epoch(self) -> int:
        """Samples per scoring epoch at the canonical rate."""
        return self.sample_rate * self.epoch_duration


class LoggingConfig(BaseModel):
    """Configuration for logging."""

    level: LogLevel = Field(default=LogLevel.INFO, description="Logging level")
    console: bool = Field(default=True, description="Enable console logging")
    file: Optional[Path] = Field(default=None, description="Log file path")
    format: str = Field(
        default="text",
        pattern="^(json|text)$",
        description="Log format (json or text)",
    )
    rotation_size: int = Field(
        default=10 * 1024 * 1024,  # 10MB
        ge=1024 * 1024,  # 1MB minimum
        description="Log rotation size in bytes",
    )
    backup_count: int = Field(default=5, ge=0, description="Rotated log files kept")


class Settings(BaseSettings):
    """Main configuration for the toolkit."""

    model_config = SettingsConfigDict(
        env_prefix="XKD_",
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="ignore",
    )

    data_dir: Path = Field(default=Path("data"), description="Default data root")
    experiment: DistillConfig = Field(default_factory=DistillConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    show_progress: bool = Field(default=True, description="Render rich progress bars")

    @classmethod
    def from_file(cls, path: Path, overrides: Optional[Dict[str, Any]] = None) -> "Settings":
        """Load configuration from YAML or JSON file.

        Args:
            path: Path to configuration file
            overrides: Dotted-key values applied on top of the file

        Returns:
            Settings instance

        Raises:
            ValueError: If file format is not supported
        """
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {path}")

        with open(path, "r", encoding="utf-8") as f:
            if path.suffix in [".yml", ".yaml"]:
                data = yaml.safe_load(f) or {}
            elif path.suffix == ".json":
                data = json.load(f)
            else:
                raise ValueError(f"Unsupported configuration file format: {path.suffix}")

        return cls(**apply_overrides(data, overrides or {}))

    def to_file(self, path: Path) -> None:
        """Save configuration to YAML or JSON file.

        Args:
            path: Path to save configuration file
        """
        data = self.model_dump(mode="json")
        path.parent.mkdir(parents=True, exist_ok=True)

        with open(path, "w", encoding="utf-8") as f:
            if path.suffix in [".yml", ".yaml"]:
                yaml.safe_dump(data, f, default_flow_style=False, sort_keys=False)
            elif path.suffix == ".json":
                json.dump(data, f, indent=2)
            else:
                raise ValueError(f"Unsupported configuration file format: {path.suffix}")


def apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Set dotted keys (``experiment.seed``) in a nested config dict.

    Args:
        data: Parsed configuration mapping
        overrides: Dotted key to value; None values are skipped

    Returns:
        The updated mapping
    """
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return data


def load_config(
    config_file: Optional[Path] = None,
    env_file: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> Settings:
    """Load configuration from file, environment and CLI overrides.

    Args:
        config_file: Optional path to configuration file
        env_file: Optional path to .env file
        overrides: Dotted-key overrides (CLI flags win over file values)

    Returns:
        Settings instance
    """
    if env_file and env_file.exists():
        from dotenv import load_dotenv

        load_dotenv(env_file)

    if config_file:
        return Settings.from_file(config_file, overrides)

    # Environment variables (XKD_DATA_DIR, ...) fill whatever the overrides leave unset
    return Settings(**apply_overrides({}, overrides or {}))
