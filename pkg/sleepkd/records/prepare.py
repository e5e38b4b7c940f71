"""Raw-recording ingestion into the canonical dataset layout."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from sleepkd.config import DataConfig, StageSchema
from sleepkd.logging import get_logger
from sleepkd.records.annotations import (
    Hypnogram,
    convert_epoch_duration,
    merge_stages,
    read_hypnogram,
)
from sleepkd.records.dataset import (
    DatasetManifest,
    DatasetSplit,
    save_dataset,
    split_subjects,
)
from sleepkd.records.signals import RecordFormat, SignalRecord, load_record, resample
from sleepkd.utils.errors import (
    AlignmentError,
    ErrorCollector,
    IngestError,
    SleepKDError,
)

logger = get_logger("prepare")

TRAINING_SCHEMES = (StageSchema.FOUR_CLASS, StageSchema.THREE_CLASS)


class RawSubject:
    """Files of one subject in a raw directory.

    A subject is an annotation sidecar ``<id>.csv`` next to either one EDF
    file ``<id>.edf`` holding both channels or two single-channel files
    ``<id>.eeg.rawbin`` and ``<id>.ecg.rawbin``.
    """

    def __init__(self, subject_id: str, annotations: Path) -> None:
        self.subject_id = subject_id
        self.annotations = annotations
        root = annotations.parent
        self.edf = root / f"{subject_id}.edf"
        self.eeg_rawbin = root / f"{subject_id}.eeg.rawbin"
        self.ecg_rawbin = root / f"{subject_id}.ecg.rawbin"

    def load(self, data_config: DataConfig) -> Tuple[SignalRecord, SignalRecord]:
        """Read the (eeg, ecg) pair.

        Raises:
            IngestError: If no signal file exists or one is unreadable
            ChannelNotFound: If a configured channel is missing
        """
        if self.edf.exists():
            eeg = load_record(self.edf, RecordFormat.EDF, data_config.eeg_channel, self.subject_id)
            ecg = load_record(self.edf, RecordFormat.EDF, data_config.ecg_channel, self.subject_id)
            return eeg, ecg
        if self.eeg_rawbin.exists() or self.ecg_rawbin.exists():
            eeg = load_record(
                self.eeg_rawbin, RecordFormat.RAWBIN, data_config.eeg_channel, self.subject_id
            )
            ecg = load_record(
                self.ecg_rawbin, RecordFormat.RAWBIN, data_config.ecg_channel, self.subject_id
            )
            return eeg, ecg
        raise IngestError(
            f"No signal file for subject {self.subject_id!r}",
            {"subject_id": self.subject_id, "annotations": str(self.annotations)},
        )


def discover_subjects(raw_dir: Path) -> List[RawSubject]:
    """Subjects of a raw directory, ordered by id."""
    if not raw_dir.is_dir():
        raise IngestError(f"Raw directory not found: {raw_dir}", {"path": str(raw_dir)})
    return [RawSubject(path.stem, path) for path in sorted(raw_dir.glob("*.csv"))]


def _trim(record: SignalRecord, n: int) -> SignalRecord:
    if len(record) == n:
        return record
    return SignalRecord.from_samples(
        record.subject_id, record.channel, record.sample_rate, record.samples[:n]
    )


def prepare_subject(
    subject: RawSubject,
    data_config: DataConfig,
    schemes: Sequence[StageSchema] = TRAINING_SCHEMES,
) -> Tuple[SignalRecord, SignalRecord, Dict[StageSchema, Hypnogram]]:
    """Bring one subject to the canonical rate, epoch length and class schemes.

    Both channels are resampled to ``data_config.sample_rate`` and cut to a
    common length; 20 s annotations are converted to 30 s epochs; the
    hypnogram is merged into every requested scheme.

    Returns:
        (eeg, ecg, scheme -> merged hypnogram)

    Raises:
        IngestError: On unreadable inputs
        AlignmentError: If signal and annotations do not line up
        SchemaError: If a scheme cannot be derived from the annotations
    """
    raw = read_hypnogram(subject.annotations, subject.subject_id)
    eeg, ecg = subject.load(data_config)
    eeg = resample(eeg, data_config.sample_rate)
    ecg = resample(ecg, data_config.sample_rate)
    n = min(len(eeg), len(ecg))
    eeg, ecg = _trim(eeg, n), _trim(ecg, n)

    if raw.epoch_duration == 20 and data_config.epoch_duration == 30:
        converted, eeg = convert_epoch_duration(raw, eeg)
        _, ecg = convert_epoch_duration(raw, ecg)
        raw = converted
    elif raw.epoch_duration != data_config.epoch_duration:
        raise AlignmentError(
            f"Cannot turn {raw.epoch_duration} s epochs into {data_config.epoch_duration} s",
            {"subject_id": subject.subject_id},
        )

    merged = {
        scheme: raw if raw.schema == scheme else merge_stages(raw, scheme) for scheme in schemes
    }
    for scheme, hypnogram in merged.items():
        if hypnogram.epoch_index:
            needed = (hypnogram.epoch_index[-1] + 1) * data_config.samples_per_epoch
            if needed > n:
                raise AlignmentError(
                    f"Signal of {subject.subject_id!r} ends before its {scheme.value} annotations",
                    {"subject_id": subject.subject_id, "samples": n, "needed": needed},
                )
    return eeg, ecg, merged


def prepare_dataset(
    raw_dir: Path,
    out_dir: Path,
    data_config: DataConfig,
    seed: int,
    schemes: Sequence[StageSchema] = TRAINING_SCHEMES,
    collector: Optional[ErrorCollector] = None,
) -> DatasetManifest:
    """Ingest every subject of `raw_dir` and write a canonical dataset.

    Failing subjects are recorded in `collector` (and the manifest) and
    skipped; the rest are split by subject and saved.

    Args:
        raw_dir: Directory of raw recordings and CSV sidecars
        out_dir: Destination dataset directory
        data_config: Canonical rate, epoch length and channel labels
        seed: Split seed
        schemes: Class schemes to write hypnograms for
        collector: Failure aggregator (a fresh one when omitted)

    Returns:
        The manifest written

    Raises:
        IngestError: If no subject could be prepared
    """
    collector = collector or ErrorCollector()
    records: Dict[str, Tuple[SignalRecord, SignalRecord]] = {}
    hypnograms: Dict[StageSchema, Dict[str, Hypnogram]] = {scheme: {} for scheme in schemes}

    subjects = discover_subjects(raw_dir)
    for subject in subjects:
        try:
            eeg, ecg, merged = prepare_subject(subject, data_config, schemes)
        except (SleepKDError, ValueError) as e:
            collector.record(subject.subject_id, e)
            continue
        records[subject.subject_id] = (eeg, ecg)
        for scheme, hypnogram in merged.items():
            hypnograms[scheme][subject.subject_id] = hypnogram
        logger.info(
            "subject_prepared", subject_id=subject.subject_id, epochs=len(merged[schemes[0]])
        )

    if not records:
        raise IngestError(
            f"No subject in {raw_dir} could be prepared",
            {"path": str(raw_dir), "subjects": len(subjects)},
        )
    if len(records) >= 3:
        split = split_subjects(records, seed)
    else:
        # Too few subjects to split: the records are kept, every partition stays empty
        logger.warning(
            "split_skipped", prepared=len(records), failed=len(collector.failed_items())
        )
        split = DatasetSplit(train=[], val=[], test=[], seed=seed)
    return save_dataset(
        out_dir,
        records,
        hypnograms,
        split,
        data_config,
        failures=collector.summary()["failures"],
    )
