"""Segmentation network and checkpoints."""

from sleepkd.models.checkpoint import (
    Checkpoint,
    TrainingMeta,
    load_checkpoint,
    parameter_checksum,
    read_checkpoint,
    save_checkpoint,
)
from sleepkd.models.segmodel import (
    FeatureTaps,
    SegmentationNet,
    build_model,
    forward,
    predict_at_frequency,
    receptive_field_radius,
)

__all__ = [
    "Checkpoint",
    "FeatureTaps",
    "SegmentationNet",
    "TrainingMeta",
    "build_model",
    "forward",
    "load_checkpoint",
    "parameter_checksum",
    "predict_at_frequency",
    "read_checkpoint",
    "receptive_field_radius",
    "save_checkpoint",
]
