"""Synthetic paired EEG/ECG recordings for desk-scale experiments."""

from typing import List

import numpy as np

from sleepkd.config import StageSchema
from sleepkd.logging import get_logger
from sleepkd.records.annotations import Hypnogram
from sleepkd.records.dataset import SubjectPair
from sleepkd.records.signals import SignalRecord

logger = get_logger("synth")

# Dominant frequency (Hz) of each latent class, 2 Hz apart
CLASS_FREQUENCIES = (1.0, 3.0, 5.0, 7.0)

EEG_NOISE = 0.3
ECG_CLASS_AMPLITUDE = 0.35
ECG_NOISE = 1.0
HEART_RATE_HZ = 1.2
MAX_RUN_EPOCHS = 5


def _schema_for(n_classes: int) -> StageSchema:
    if n_classes == 4:
        return StageSchema.FOUR_CLASS
    if n_classes == 3:
        return StageSchema.THREE_CLASS
    raise ValueError(f"Synthetic data supports 3 or 4 classes, got {n_classes}")


def _latent_labels(rng: np.random.Generator, n_epochs: int, n_classes: int) -> np.ndarray:
    """Sticky class runs; the first K runs visit every class once."""
    labels: List[int] = []
    opening = list(rng.permutation(n_classes))
    while len(labels) < n_epochs:
        cls = int(opening.pop(0)) if opening else int(rng.integers(n_classes))
        labels.extend([cls] * int(rng.integers(1, MAX_RUN_EPOCHS + 1)))
    return np.asarray(labels[:n_epochs], dtype=np.int64)


def _heartbeat(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Train of narrow gaussian pulses standing in for QRS complexes."""
    period = 1.0 / HEART_RATE_HZ
    offset = rng.uniform(0, period)
    phase = np.mod(t - offset, period) - period / 2
    return 1.5 * np.exp(-0.5 * (phase / 0.03) ** 2)


def synth_subject(
    rng: np.random.Generator,
    subject_id: str,
    epochs: int,
    n_classes: int,
    sample_rate: int,
    epoch_duration: int,
    eeg_channel: str,
    ecg_channel: str,
) -> SubjectPair:
    """Generate one subject's aligned pseudo-EEG, pseudo-ECG and hypnogram."""
    labels = _latent_labels(rng, epochs, n_classes)
    i = sample_rate * epoch_duration
    t_epoch = np.arange(i) / sample_rate

    eeg = np.empty(epochs * i)
    ecg = np.empty(epochs * i)
    for k, cls in enumerate(labels):
        phase = rng.uniform(0, 2 * np.pi)
        tone = np.sin(2 * np.pi * CLASS_FREQUENCIES[cls] * t_epoch + phase)
        eeg[k * i : (k + 1) * i] = tone + EEG_NOISE * rng.standard_normal(i)
        ecg[k * i : (k + 1) * i] = ECG_CLASS_AMPLITUDE * tone + ECG_NOISE * rng.standard_normal(i)

    ecg += _heartbeat(np.arange(epochs * i) / sample_rate, rng)

    return SubjectPair(
        eeg=SignalRecord.from_samples(subject_id, eeg_channel, float(sample_rate), eeg),
        ecg=SignalRecord.from_samples(subject_id, ecg_channel, float(sample_rate), ecg),
        hypnogram=Hypnogram.from_labels(
            subject_id, labels, _schema_for(n_classes), epoch_duration=epoch_duration
        ),
    )


def synth_dataset(
    n_subjects: int,
    epochs_per_subject: int,
    n_classes: int,
    seed: int,
    sample_rate: int = 200,
    epoch_duration: int = 30,
    eeg_channel: str = "C3-A2",
    ecg_channel: str = "ECG-Lead1",
) -> List[SubjectPair]:
    """Generate paired recordings whose class drives oscillatory content.

    Each epoch's latent class sets a dominant frequency from
    ``CLASS_FREQUENCIES``. The pseudo-EEG carries that tone at unit amplitude
    over light noise, so classes separate almost perfectly. The pseudo-ECG
    carries the same tone, weaker, under heavy noise and a heartbeat-like
    pulse train.

    Args:
        n_subjects: Number of subjects (at least 3)
        epochs_per_subject: Scored epochs per subject
        n_classes: 4 (FOUR_CLASS hypnograms) or 3 (THREE_CLASS)
        seed: Generator seed; equal seeds give bit-identical output
        sample_rate: Sampling rate (Hz); must exceed twice the top class frequency
        epoch_duration: Epoch length (20 or 30 s)
        eeg_channel: Channel label of the teacher modality
        ecg_channel: Channel label of the student modality

    Returns:
        One SubjectPair per subject, ordered by subject id
    """
    if n_subjects < 3:
        raise ValueError(f"n_subjects must be at least 3, got {n_subjects}")
    if epochs_per_subject < 1:
        raise ValueError(f"epochs_per_subject must be positive, got {epochs_per_subject}")
    _schema_for(n_classes)
    if sample_rate <= 2 * max(CLASS_FREQUENCIES[:n_classes]):
        raise ValueError(f"sample_rate {sample_rate} Hz cannot carry the class tones")

    rng = np.random.default_rng(seed)
    pairs = [
        synth_subject(
            rng,
            f"S{k:03d}",
            epochs_per_subject,
            n_classes,
            sample_rate,
            epoch_duration,
            eeg_channel,
            ecg_channel,
        )
        for k in range(n_subjects)
    ]
    logger.info(
        "synthetic_dataset_generated",
        subjects=n_subjects,
        epochs=epochs_per_subject,
        n_classes=n_classes,
        seed=seed,
    )
    return pairs
