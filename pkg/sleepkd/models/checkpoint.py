"""Versioned checkpoint container.

Layout (little-endian)::

    b"XKDC" | u32 format_version | u64 header_length | header JSON | payload

The JSON header holds the model config, training metadata and a manifest
of named arrays (dtype, shape, offset, byte count) plus a SHA-256 of the
payload. The payload is the raw array bytes in manifest order.
"""

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from sleepkd.config import ModelConfig
from sleepkd.logging import get_logger
from sleepkd.models.segmodel import SegmentationNet, build_model
from sleepkd.utils.errors import CheckpointError

logger = get_logger("checkpoint")

CHECKPOINT_MAGIC = b"XKDC"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")


class TrainingMeta(BaseModel):
    """Where a checkpoint came from."""

    epoch: int = Field(default=0, ge=0, description="Training epoch that produced the parameters")
    val_metric: Optional[float] = Field(default=None, description="Validation weighted-F1")
    val_accuracy: Optional[float] = Field(default=None, description="Validation accuracy")
    mode: str = Field(default="", description="Experiment mode")
    step: str = Field(default="", description="Training step (teacher, feature, final)")


class Checkpoint(BaseModel):
    """A model config with its parameters and training metadata."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    format_version: int = FORMAT_VERSION
    network: ModelConfig
    parameters: Dict[str, np.ndarray]
    training_meta: TrainingMeta = Field(default_factory=TrainingMeta)

    @classmethod
    def from_model(
        cls, model: SegmentationNet, meta: Optional[TrainingMeta] = None
    ) -> "Checkpoint":
        """Snapshot a model's state dict."""
        return cls(
            network=model.config,
            parameters={
                name: tensor.detach().cpu().numpy().copy()
                for name, tensor in model.state_dict().items()
            },
            training_meta=meta or TrainingMeta(),
        )

    def to_model(self) -> SegmentationNet:
        """Rebuild the network and load the parameters.

        Raises:
            CheckpointError: If names or shapes do not match the config
        """
        model = build_model(self.network)
        state = {name: torch.from_numpy(arr.copy()) for name, arr in self.parameters.items()}
        floating = [t.dtype for t in state.values() if t.is_floating_point()]
        if floating:
            model.to(floating[0])
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Parameters do not fit the stored config: {e}")
        return model


def parameter_checksum(model: torch.nn.Module) -> str:
    """SHA-256 over every named tensor of the state dict.

    Args:
        model: Any torch module

    Returns:
        Hex digest; equal digests mean bitwise-equal parameters and buffers
    """
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        arr = tensor.detach().cpu().numpy()
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.dtype).encode("ascii"))
        digest.update(str(arr.shape).encode("ascii"))
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def write_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """Serialize a checkpoint.

    Args:
        checkpoint: Checkpoint to write
        path: Destination file (parent directories are created)
    """
    manifest: List[Dict[str, Any]] = []
    chunks: List[bytes] = []
    offset = 0
    for name, arr in checkpoint.parameters.items():
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        data = le.tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": le.dtype.str,
                "shape": list(le.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)

    payload = b"".join(chunks)
    header = json.dumps(
        {
            "config": checkpoint.network.model_dump(mode="json"),
            "training_meta": checkpoint.training_meta.model_dump(mode="json"),
            "tensors": manifest,
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
        },
        sort_keys=True,
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(
        _PREAMBLE.pack(CHECKPOINT_MAGIC, checkpoint.format_version, len(header)) + header + payload
    )
    tmp.replace(path)


def read_checkpoint(path: Path) -> Checkpoint:
    """Parse a checkpoint file.

    Raises:
        CheckpointError: If the file is missing, truncated, corrupt or of
            another format version
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}", {"path": str(path)})
    data = path.read_bytes()

    try:
        magic, version, header_len = _PREAMBLE.unpack_from(data, 0)
    except struct.error:
        raise CheckpointError(f"Truncated checkpoint {path.name}", {"path": str(path)})
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path.name} is not a checkpoint", {"path": str(path)})
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint format version {version} (expected {FORMAT_VERSION})",
            {"path": str(path), "version": version},
        )

    start = _PREAMBLE.size
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header in {path.name}: {e}", {"path": str(path)})

    payload = data[start + header_len :]
    entries = header.get("tensors", [])
    try:
        expected = sum(int(t["nbytes"]) for t in entries)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(
            f"Invalid tensor manifest in {path.name}: missing or bad field {e}",
            {"path": str(path)},
        )
    if len(payload) != expected:
        raise CheckpointError(
            f"Truncated checkpoint {path.name}: payload has {len(payload)} of {expected} bytes",
            {"path": str(path)},
        )
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"Checksum mismatch in {path.name}", {"path": str(path)})

    parameters = {}
    for entry in entries:
        try:
            name = entry["name"]
            raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(
                f"Invalid tensor entry in {path.name}: {e}",
                {"path": str(path), "tensor": entry.get("name")},
            )
        parameters[name] = arr.astype(arr.dtype.newbyteorder("="))

    try:
        return Checkpoint(
            format_version=version,
            network=ModelConfig(**header["config"]),
            parameters=parameters,
            training_meta=TrainingMeta(**header.get("training_meta", {})),
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"Invalid checkpoint metadata in {path.name}: {e}")


def save_checkpoint(
    model: SegmentationNet, path: Path, meta: Optional[TrainingMeta] = None
) -> Checkpoint:
    """Write a model to `path` and return the stored checkpoint."""
    checkpoint = Checkpoint.from_model(model, meta)
    write_checkpoint(checkpoint, Path(path))
    logger.debug("checkpoint_saved", path=str(path), epoch=checkpoint.training_meta.epoch)
    return checkpoint


def load_checkpoint(path: Path) -> SegmentationNet:
    """Rebuild a model from a checkpoint file."""
    return read_checkpoint(path).to_model()
