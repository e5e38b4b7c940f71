"""Shared fixtures: tiny networks, small synthetic datasets and file writers."""

import struct
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import numpy as np
import pytest

from sleepkd.config import (
    Activation,
    DataConfig,
    DistillConfig,
    LoggingConfig,
    ModelConfig,
    Norm,
    Settings,
    StageSchema,
)
from sleepkd.logging import logger
from sleepkd.records.annotations import merge_stages
from sleepkd.records.dataset import DatasetSplit, PairedDataset, save_dataset, split_subjects
from sleepkd.records.synth import synth_dataset

# 20 Hz x 30 s epochs keep every window small enough for CPU tests
SAMPLE_RATE = 20
SAMPLES_PER_EPOCH = SAMPLE_RATE * 30
WINDOW_EPOCHS = 6
EPOCHS_PER_SUBJECT = 24


@pytest.fixture(autouse=True, scope="session")
def quiet_logging() -> None:
    logger.configure(LoggingConfig(level="WARNING", console=False))


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """Two-stage network accepting 600-sample epochs."""
    return ModelConfig(
        depth=2,
        filters_per_stage=[4, 8],
        kernel_size=3,
        pool_sizes=[10, 6],
        n_classes=4,
        samples_per_epoch=SAMPLES_PER_EPOCH,
        dilation=1,
    )


@pytest.fixture
def smooth_model_config() -> ModelConfig:
    """Tanh network without normalization, small enough for float64 gradient checks."""
    return ModelConfig(
        depth=2,
        filters_per_stage=[4, 4],
        kernel_size=3,
        pool_sizes=[3, 2],
        n_classes=3,
        samples_per_epoch=60,
        dilation=1,
        activation=Activation.TANH,
        norm=Norm.NONE,
    )


@pytest.fixture
def data_config() -> DataConfig:
    return DataConfig(sample_rate=SAMPLE_RATE, window_epochs=WINDOW_EPOCHS)


@pytest.fixture
def distill_config(tiny_model_config: ModelConfig) -> DistillConfig:
    return DistillConfig(
        epochs=2,
        batch_size=4,
        seed=0,
        network=tiny_model_config,
        feature_epochs=2,
        class_scheme=StageSchema.FOUR_CLASS,
    )


@pytest.fixture
def settings(distill_config: DistillConfig, data_config: DataConfig, tmp_path: Path) -> Settings:
    return Settings(
        data_dir=tmp_path / "data",
        experiment=distill_config,
        data=data_config,
        show_progress=False,
    )


@pytest.fixture
def synth_pairs():
    """Five four-class subjects of 24 epochs at 20 Hz."""
    return synth_dataset(5, EPOCHS_PER_SUBJECT, 4, seed=3, sample_rate=SAMPLE_RATE)


@pytest.fixture
def small_split() -> DatasetSplit:
    return DatasetSplit(train=["S000", "S001", "S002"], val=["S003"], test=["S004"], seed=0)


@pytest.fixture
def paired_dataset(synth_pairs, small_split: DatasetSplit) -> PairedDataset:
    return PairedDataset(
        pairs={p.subject_id: p for p in synth_pairs},
        split=small_split,
        scheme=StageSchema.FOUR_CLASS,
    )


@pytest.fixture
def three_class_dataset(synth_pairs, small_split: DatasetSplit) -> PairedDataset:
    pairs = {
        p.subject_id: p.model_copy(
            update={"hypnogram": merge_stages(p.hypnogram, StageSchema.THREE_CLASS)}
        )
        for p in synth_pairs
    }
    return PairedDataset(pairs=pairs, split=small_split, scheme=StageSchema.THREE_CLASS)


@pytest.fixture
def dataset_dir(tmp_path: Path, synth_pairs, small_split, data_config) -> Path:
    """The synthetic subjects saved in the canonical layout, both schemes."""
    out = tmp_path / "dataset"
    four = {p.subject_id: p.hypnogram for p in synth_pairs}
    save_dataset(
        out,
        {p.subject_id: (p.eeg, p.ecg) for p in synth_pairs},
        {
            StageSchema.FOUR_CLASS: four,
            StageSchema.THREE_CLASS: {
                sid: merge_stages(h, StageSchema.THREE_CLASS) for sid, h in four.items()
            },
        },
        small_split,
        data_config,
    )
    return out


@pytest.fixture
def acceptance_model_config() -> ModelConfig:
    """Wider first stages for the end-to-end acceptance runs."""
    return ModelConfig(
        depth=2,
        filters_per_stage=[8, 16],
        kernel_size=5,
        pool_sizes=[10, 6],
        n_classes=4,
        samples_per_epoch=SAMPLES_PER_EPOCH,
        dilation=1,
    )


@pytest.fixture
def acceptance_dataset() -> PairedDataset:
    """Eight four-class subjects of 70 epochs, split 6:1:1."""
    pairs = synth_dataset(8, 70, 4, seed=7, sample_rate=SAMPLE_RATE)
    return PairedDataset(
        pairs={p.subject_id: p for p in pairs},
        split=split_subjects([p.subject_id for p in pairs], seed=0),
        scheme=StageSchema.FOUR_CLASS,
    )


def _field(value: object, width: int) -> bytes:
    return str(value).ljust(width)[:width].encode("ascii")


def write_edf(path: Path, channels: Dict[str, np.ndarray], sample_rate: int) -> None:
    """Write a minimal EDF file with one-second data records.

    Every channel must hold a whole number of seconds at `sample_rate`.
    Values are stored as 16-bit integers over a +-1000 physical range.
    """
    labels: List[str] = list(channels)
    n_seconds = len(next(iter(channels.values()))) // sample_rate
    ns = len(labels)

    def per_signal(values: Sequence[object], width: int) -> bytes:
        return b"".join(_field(v, width) for v in values)

    header = (
        _field("0", 8)
        + _field("X X X X", 80)
        + _field("Startdate 01-JAN-2001 X X X", 80)
        + _field("01.01.01", 8)
        + _field("00.00.00", 8)
        + _field(256 + 256 * ns, 8)
        + _field("", 44)
        + _field(n_seconds, 8)
        + _field(1, 8)
        + _field(ns, 4)
        + per_signal(labels, 16)
        + per_signal([""] * ns, 80)
        + per_signal(["uV"] * ns, 8)
        + per_signal([-1000] * ns, 8)
        + per_signal([1000] * ns, 8)
        + per_signal([-32768] * ns, 8)
        + per_signal([32767] * ns, 8)
        + per_signal([""] * ns, 80)
        + per_signal([sample_rate] * ns, 8)
        + per_signal([""] * ns, 32)
    )

    digital = {
        name: np.clip(np.round(np.asarray(x) / 1000.0 * 32767), -32768, 32767).astype("<i2")
        for name, x in channels.items()
    }
    records = []
    for s in range(n_seconds):
        for name in labels:
            records.append(digital[name][s * sample_rate : (s + 1) * sample_rate].tobytes())
    path.write_bytes(header + b"".join(records))


@pytest.fixture
def edf_writer() -> Callable[[Path, Dict[str, np.ndarray], int], None]:
    return write_edf


def rawbin_bytes(sample_rate: int, channel: str, samples: np.ndarray, count: int) -> bytes:
    """RAWBIN bytes whose header announces `count` samples."""
    name = channel.encode("utf-8")
    return (
        b"XKD1"
        + struct.pack("<I", sample_rate)
        + struct.pack("<I", len(name))
        + name
        + struct.pack("<Q", count)
        + np.asarray(samples, dtype="<f4").tobytes()
    )


@pytest.fixture
def rawbin_builder() -> Callable[[int, str, np.ndarray, int], bytes]:
    return rawbin_bytes
