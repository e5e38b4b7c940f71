"""Subject splits, model-ready windows, class weights and the canonical on-disk dataset."""

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sleepkd.config import DataConfig, StageSchema
from sleepkd.logging import get_logger
from sleepkd.records.annotations import Hypnogram, read_hypnogram, write_hypnogram
from sleepkd.records.signals import RecordFormat, SignalRecord, load_record, write_record
from sleepkd.utils.errors import AlignmentError, IngestError, SplitError, WeightError

logger = get_logger("dataset")

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
PARTITIONS = ("train", "val", "test")


class DatasetSplit(BaseModel):
    """Disjoint subject partitions."""

    train: List[str]
    val: List[str]
    test: List[str]
    seed: int

    @model_validator(mode="after")
    def validate_disjoint(self) -> "DatasetSplit":
        """No subject appears in two partitions."""
        seen: Dict[str, str] = {}
        for name in PARTITIONS:
            for subject in getattr(self, name):
                if subject in seen:
                    raise SplitError(
                        f"Subject {subject!r} is in both {seen[subject]} and {name}",
                        {"subject_id": subject},
                    )
                seen[subject] = name
        return self

    def subjects(self, partition: str) -> List[str]:
        """Subjects of one partition."""
        if partition not in PARTITIONS:
            raise SplitError(f"Unknown partition {partition!r}")
        return list(getattr(self, partition))

    def partition_of(self, subject_id: str) -> str:
        """Partition a subject belongs to."""
        for name in PARTITIONS:
            if subject_id in getattr(self, name):
                return name
        raise SplitError(f"Subject {subject_id!r} is in no partition")


def split_subjects(subject_ids: Iterable[str], seed: int) -> DatasetSplit:
    """Partition subjects 80:10:10 by subject count.

    Validation and test each get ``max(1, n // 10)`` subjects, training gets
    the remainder. The permutation is drawn from ``numpy.random.default_rng(seed)``
    over the sorted ids, so the split depends only on (ids, seed).

    Args:
        subject_ids: Subject identifiers (duplicates ignored)
        seed: Permutation seed

    Returns:
        DatasetSplit

    Raises:
        SplitError: If fewer than three distinct subjects are given
    """
    ids = sorted(set(subject_ids))
    if len(ids) < 3:
        raise SplitError(f"Need at least 3 subjects to split, got {len(ids)}")

    n_held = max(1, len(ids) // 10)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]

    split = DatasetSplit(
        val=sorted(shuffled[:n_held]),
        test=sorted(shuffled[n_held : 2 * n_held]),
        train=sorted(shuffled[2 * n_held :]),
        seed=seed,
    )
    logger.debug(
        "subjects_split", train=len(split.train), val=len(split.val), test=len(split.test)
    )
    return split


class SegmentBatch(BaseModel):
    """A window of T connected epochs and their labels.

    ``mask`` is False on zero-padded positions; padded labels are 0 and must
    be ignored by losses and metrics.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    n_classes: int = Field(ge=2)
    frequency: float = Field(gt=0, description="Segmentation frequency e (labels/second)")
    subject_id: str = ""
    window_index: int = 0

    @field_validator("inputs", mode="before")
    @classmethod
    def validate_inputs(cls, v: Any) -> np.ndarray:
        """Inputs are a [T, i] float32 array."""
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"inputs must be [T, i], got shape {arr.shape}")
        return arr

    @field_validator("labels", "mask", mode="before")
    @classmethod
    def coerce_vectors(cls, v: Any) -> np.ndarray:
        """Accept any array-like for labels and mask."""
        return np.asarray(v)

    @model_validator(mode="after")
    def validate_labels(self) -> "SegmentBatch":
        """One valid label and mask entry per segment."""
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = self.inputs.shape[0]
        if self.labels.shape != (n,) or self.mask.shape != (n,):
            raise ValueError(f"labels and mask must have length {n}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        return self

    @property
    def n_segments(self) -> int:
        """Number of segments T."""
        return int(self.inputs.shape[0])

    @property
    def samples_per_segment(self) -> int:
        """Samples per segment i."""
        return int(self.inputs.shape[1])


def samples_per_epoch(sample_rate: float, epoch_duration: float) -> int:
    """Integral samples per epoch, i = S * epoch_duration."""
    i = sample_rate * epoch_duration
    if i != int(i):
        raise AlignmentError(f"{sample_rate} Hz x {epoch_duration} s is not a whole sample count")
    return int(i)


def epoch_matrix(record: SignalRecord, hypnogram: Hypnogram) -> np.ndarray:
    """Stack the scored epochs of a record into an [n, i] array.

    Raises:
        AlignmentError: If the record does not cover every indexed epoch
    """
    i = samples_per_epoch(record.sample_rate, hypnogram.epoch_duration)
    if not hypnogram.epoch_index:
        return np.zeros((0, i), dtype=np.float32)
    needed = (hypnogram.epoch_index[-1] + 1) * i
    if needed > len(record.samples):
        raise AlignmentError(
            f"Record {record.subject_id!r} has {len(record.samples)} samples, "
            f"hypnogram needs {needed}",
            {"subject_id": record.subject_id},
        )
    grid = record.samples[:needed].reshape(-1, i)
    return grid[np.asarray(hypnogram.epoch_index)].astype(np.float32)


def segment(record: SignalRecord, hypnogram: Hypnogram, T: int) -> List[SegmentBatch]:
    """Cut a record into consecutive windows of T epochs.

    The trailing remainder is zero-padded up to T epochs with masked labels.

    Args:
        record: Signal at the canonical rate
        hypnogram: Merged hypnogram aligned with the record
        T: Epochs per window

    Returns:
        Windows in temporal order

    Raises:
        AlignmentError: If the record and hypnogram do not line up
    """
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    epochs = epoch_matrix(record, hypnogram)
    labels = hypnogram.labels()
    n, i = epochs.shape
    n_classes = hypnogram.schema.n_classes

    batches = []
    for w in range(math.ceil(n / T)):
        chunk = epochs[w * T : (w + 1) * T]
        chunk_labels = labels[w * T : (w + 1) * T]
        valid = len(chunk)
        inputs = np.zeros((T, i), dtype=np.float32)
        inputs[:valid] = chunk
        window_labels = np.zeros(T, dtype=np.int64)
        window_labels[:valid] = chunk_labels
        mask = np.zeros(T, dtype=bool)
        mask[:valid] = True
        batches.append(
            SegmentBatch(
                inputs=inputs,
                labels=window_labels,
                mask=mask,
                n_classes=n_classes,
                frequency=1.0 / hypnogram.epoch_duration,
                subject_id=hypnogram.subject_id,
                window_index=w,
            )
        )
    return batches


class ClassWeights(BaseModel):
    """Per-class loss weights."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def validate_weights(cls, v: Any) -> np.ndarray:
        """All weights are finite and positive."""
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise ValueError("class weights must be a finite positive vector")
        return arr

    @classmethod
    def uniform(cls, n_classes: int) -> "ClassWeights":
        """Unit weights."""
        return cls(weights=np.ones(n_classes))


def class_weights(labels: Sequence[int], n_classes: int) -> ClassWeights:
    """Inverse-frequency weights w_c = N / (K * N_c).

    Args:
        labels: Training labels
        n_classes: Number of classes K

    Returns:
        ClassWeights

    Raises:
        WeightError: If some class has no samples
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise WeightError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(labels, minlength=n_classes)
    empty = [c for c in range(n_classes) if counts[c] == 0]
    if empty:
        raise WeightError(
            f"Classes {empty} have no training samples", {"counts": counts.tolist()}
        )
    return ClassWeights(weights=labels.size / (n_classes * counts))


class SubjectPair(BaseModel):
    """Time-aligned teacher (EEG) and student (ECG) records of one subject."""

    eeg: SignalRecord
    ecg: SignalRecord
    hypnogram: Hypnogram

    @model_validator(mode="after")
    def validate_alignment(self) -> "SubjectPair":
        """Both modalities share rate and length."""
        if self.eeg.sample_rate != self.ecg.sample_rate or len(self.eeg) != len(self.ecg):
            raise AlignmentError(
                f"EEG and ECG of {self.subject_id!r} are not aligned",
                {"subject_id": self.subject_id},
            )
        return self

    @property
    def subject_id(self) -> str:
        """Subject identifier."""
        return self.hypnogram.subject_id

    def record(self, modality: str) -> SignalRecord:
        """The record of one modality ("eeg" or "ecg")."""
        if modality not in ("eeg", "ecg"):
            raise ValueError(f"Unknown modality {modality!r}")
        return self.eeg if modality == "eeg" else self.ecg


class PairedDataset(BaseModel):
    """Paired recordings of all subjects under one class scheme."""

    pairs: Dict[str, SubjectPair]
    split: DatasetSplit
    scheme: StageSchema

    @property
    def n_classes(self) -> int:
        """Number of classes K."""
        return self.scheme.n_classes

    @property
    def sample_rate(self) -> float:
        """Common sampling rate."""
        return next(iter(self.pairs.values())).eeg.sample_rate

    @property
    def epoch_duration(self) -> int:
        """Common epoch length."""
        return next(iter(self.pairs.values())).hypnogram.epoch_duration

    def windows(self, partition: str, modality: str, T: int) -> List[SegmentBatch]:
        """Windows of one modality for every subject of a partition."""
        batches: List[SegmentBatch] = []
        for subject in self.split.subjects(partition):
            pair = self.pairs[subject]
            batches.extend(segment(pair.record(modality), pair.hypnogram, T))
        return batches

    def paired_windows(self, partition: str, T: int) -> List[Tuple[SegmentBatch, SegmentBatch]]:
        """Time-aligned (EEG window, ECG window) pairs of a partition."""
        return list(zip(self.windows(partition, "eeg", T), self.windows(partition, "ecg", T)))

    def labels(self, partition: str) -> np.ndarray:
        """All scored labels of a partition."""
        parts = [self.pairs[s].hypnogram.labels() for s in self.split.subjects(partition)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


class DatasetManifest(BaseModel):
    """Contents of ``manifest.json`` in a canonical dataset directory."""

    version: int = MANIFEST_VERSION
    sample_rate: int
    epoch_duration: int
    eeg_channel: str
    ecg_channel: str
    schemes: List[StageSchema]
    subjects: List[str]
    split: DatasetSplit
    failures: List[Dict[str, Any]] = Field(default_factory=list)


def save_dataset(
    out_dir: Path,
    records: Dict[str, Tuple[SignalRecord, SignalRecord]],
    hypnograms: Dict[StageSchema, Dict[str, Hypnogram]],
    split: DatasetSplit,
    data_config: DataConfig,
    failures: Optional[List[Dict[str, Any]]] = None,
) -> DatasetManifest:
    """Write a canonical dataset directory.

    Layout: ``records/<subject>.eeg.rawbin``, ``records/<subject>.ecg.rawbin``,
    ``hypnograms/<scheme>/<subject>.csv`` and ``manifest.json``.

    Args:
        out_dir: Destination directory
        records: Subject to (eeg, ecg) records at the canonical rate
        hypnograms: Scheme to subject to merged hypnogram
        split: Subject split
        data_config: Canonical rate, epoch length and channel labels
        failures: Per-subject preparation failures to keep in the manifest

    Returns:
        The manifest written
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    for subject, (eeg, ecg) in records.items():
        write_record(eeg, out_dir / "records" / f"{subject}.eeg.rawbin")
        write_record(ecg, out_dir / "records" / f"{subject}.ecg.rawbin")
    for scheme, by_subject in hypnograms.items():
        for subject, hypnogram in by_subject.items():
            write_hypnogram(hypnogram, out_dir / "hypnograms" / scheme.value / f"{subject}.csv")

    manifest = DatasetManifest(
        sample_rate=data_config.sample_rate,
        epoch_duration=data_config.epoch_duration,
        eeg_channel=data_config.eeg_channel,
        ecg_channel=data_config.ecg_channel,
        schemes=list(hypnograms),
        subjects=sorted(records),
        split=split,
        failures=failures or [],
    )
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )
    logger.info("dataset_saved", path=str(out_dir), subjects=len(records))
    return manifest


def read_manifest(data_dir: Path) -> DatasetManifest:
    """Read ``manifest.json`` of a canonical dataset."""
    path = data_dir / MANIFEST_NAME
    if not path.exists():
        raise IngestError(f"No dataset manifest in {data_dir}", {"path": str(path)})
    try:
        manifest = DatasetManifest(**json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValueError) as e:
        raise IngestError(f"Malformed manifest {path}: {e}", {"path": str(path)})
    if manifest.version != MANIFEST_VERSION:
        raise IngestError(f"Unsupported manifest version {manifest.version}")
    return manifest


def load_dataset(data_dir: Path, scheme: Optional[StageSchema] = None) -> PairedDataset:
    """Load a canonical dataset directory under one class scheme.

    Args:
        data_dir: Directory written by ``save_dataset``
        scheme: Class scheme (the first one in the manifest when omitted)

    Returns:
        PairedDataset
    """
    manifest = read_manifest(data_dir)
    scheme = scheme or manifest.schemes[0]
    if scheme not in manifest.schemes:
        raise IngestError(
            f"Dataset {data_dir} has no {scheme.value} hypnograms",
            {"available": [s.value for s in manifest.schemes]},
        )

    pairs = {}
    for subject in manifest.subjects:
        eeg = load_record(
            data_dir / "records" / f"{subject}.eeg.rawbin",
            RecordFormat.RAWBIN,
            manifest.eeg_channel,
            subject,
        )
        ecg = load_record(
            data_dir / "records" / f"{subject}.ecg.rawbin",
            RecordFormat.RAWBIN,
            manifest.ecg_channel,
            subject,
        )
        hypnogram = read_hypnogram(
            data_dir / "hypnograms" / scheme.value / f"{subject}.csv", subject, scheme
        )
        pairs[subject] = SubjectPair(eeg=eeg, ecg=ecg, hypnogram=hypnogram)

    return PairedDataset(pairs=pairs, split=manifest.split, scheme=scheme)
