"""Signal records, hypnograms and datasets."""

from sleepkd.records.annotations import (
    Hypnogram,
    SleepStage,
    class_names,
    convert_epoch_duration,
    merge_stages,
    read_hypnogram,
    write_hypnogram,
)
from sleepkd.records.dataset import (
    ClassWeights,
    DatasetSplit,
    PairedDataset,
    SegmentBatch,
    SubjectPair,
    class_weights,
    load_dataset,
    save_dataset,
    segment,
    split_subjects,
)
from sleepkd.records.signals import RecordFormat, SignalRecord, load_record, resample, write_record
from sleepkd.records.prepare import prepare_dataset, prepare_subject
from sleepkd.records.synth import synth_dataset

__all__ = [
    "ClassWeights",
    "DatasetSplit",
    "Hypnogram",
    "PairedDataset",
    "RecordFormat",
    "SegmentBatch",
    "SignalRecord",
    "SleepStage",
    "SubjectPair",
    "class_names",
    "class_weights",
    "convert_epoch_duration",
    "load_dataset",
    "load_record",
    "merge_stages",
    "prepare_dataset",
    "prepare_subject",
    "read_hypnogram",
    "resample",
    "save_dataset",
    "segment",
    "split_subjects",
    "synth_dataset",
    "write_hypnogram",
    "write_record",
]
