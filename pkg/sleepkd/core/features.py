"""Bottleneck feature export and case comparison between two models."""

from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd
import torch

from sleepkd.logging import get_logger
from sleepkd.models.segmodel import SegmentationNet
from sleepkd.records.dataset import SegmentBatch
from sleepkd.utils.errors import ShapeError

logger = get_logger("features")

KEY_COLUMNS = ["subject_id", "window_index"]


def _labels_text(labels: np.ndarray) -> str:
    return "-".join(str(int(v)) for v in labels)


@torch.no_grad()
def export_bottleneck_features(
    model: SegmentationNet,
    windows: Sequence[SegmentBatch],
    model_tag: str = "model",
) -> pd.DataFrame:
    """Flattened bottleneck activations of every window.

    One row per window keyed by ``model``, ``subject_id`` and ``window_index``,
    with the predicted and true label sequences of its scored epochs, the
    window accuracy and ``f0..fN`` holding the ``[C, L]`` bottleneck map in
    row-major order.

    Args:
        model: Network in any mode (evaluated in eval mode)
        windows: Windows of one modality
        model_tag: Value of the ``model`` column

    Returns:
        Feature table
    """
    was_training = model.training
    model.eval()
    param = next(model.parameters())
    rows: List[dict] = []
    features: List[np.ndarray] = []
    try:
        for window in windows:
            x = torch.from_numpy(window.inputs.reshape(1, -1)).to(param.device, param.dtype)
            logits, taps = model(x)
            pred = logits[0].argmax(dim=-1).cpu().numpy()
            scored = window.mask
            correct = pred[scored] == window.labels[scored]
            rows.append(
                {
                    "model": model_tag,
                    "subject_id": window.subject_id,
                    "window_index": window.window_index,
                    "pred_labels": _labels_text(pred[scored]),
                    "true_labels": _labels_text(window.labels[scored]),
                    "accuracy": float(correct.mean()) if correct.size else float("nan"),
                }
            )
            features.append(taps.bottleneck[0].double().cpu().numpy().reshape(-1))
    finally:
        model.train(was_training)

    table = pd.DataFrame(
        rows, columns=["model", *KEY_COLUMNS, "pred_labels", "true_labels", "accuracy"]
    )
    if features:
        width = {f.size for f in features}
        if len(width) != 1:
            raise ShapeError("Windows of different lengths give different bottleneck sizes")
        values = pd.DataFrame(
            np.stack(features), columns=[f"f{k}" for k in range(features[0].size)]
        )
        table = pd.concat([table, values], axis=1)
    logger.info("bottleneck_exported", model=model_tag, windows=len(rows))
    return table


def compare_cases(kd_table: pd.DataFrame, baseline_table: pd.DataFrame) -> pd.DataFrame:
    """Join two exports on (subject, window) and tag where the models differ.

    ``case1`` marks windows the distilled model scores more accurately than
    the baseline, ``case2`` the reverse and ``same`` the rest.

    Args:
        kd_table: Export of the distilled student
        baseline_table: Export of the baseline model

    Returns:
        Both exports stacked, with a ``case`` column
    """
    joined = kd_table[KEY_COLUMNS + ["accuracy"]].merge(
        baseline_table[KEY_COLUMNS + ["accuracy"]],
        on=KEY_COLUMNS,
        suffixes=("_kd", "_baseline"),
    )
    joined["case"] = np.select(
        [
            joined["accuracy_kd"] > joined["accuracy_baseline"],
            joined["accuracy_kd"] < joined["accuracy_baseline"],
        ],
        ["case1", "case2"],
        default="same",
    )
    cases = joined[KEY_COLUMNS + ["case"]]
    stacked = pd.concat([kd_table, baseline_table], ignore_index=True)
    return stacked.merge(cases, on=KEY_COLUMNS, how="inner")


def write_feature_table(table: pd.DataFrame, path: Path) -> None:
    """Write a feature table as CSV."""
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    logger.info("feature_table_written", path=str(path), rows=len(table))
