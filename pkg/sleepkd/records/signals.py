"""Single-channel signal records: RAWBIN/EDF ingestion and resampling."""

import struct
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import signal

from sleepkd.logging import get_logger
from sleepkd.utils.errors import ChannelNotFound, IngestError

RAWBIN_MAGIC = b"XKD1"
_HEADER_RATE = struct.Struct("<I")
_HEADER_COUNT = struct.Struct("<Q")

logger = get_logger("signals")


class RecordFormat(str, Enum):
    """On-disk signal containers."""

    EDF = "edf"
    RAWBIN = "rawbin"

    @classmethod
    def from_path(cls, path: Path) -> "RecordFormat":
        """Guess the container from a file suffix."""
        suffix = path.suffix.lower().lstrip(".")
        try:
            return cls(suffix)
        except ValueError:
            raise IngestError(f"Unknown record format: {path.suffix}", {"path": str(path)})


class SignalRecord(BaseModel):
    """One subject's single-channel waveform."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    subject_id: str
    channel: str
    sample_rate: float = Field(gt=0, description="Samples per second S")
    samples: np.ndarray
    duration: float = Field(ge=0, description="Duration tau in seconds")

    @field_validator("samples", mode="before")
    @classmethod
    def validate_samples(cls, v: Any) -> np.ndarray:
        """Coerce to a finite 1-D float64 array."""
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        return arr

    @model_validator(mode="after")
    def validate_length(self) -> "SignalRecord":
        """length(samples) == round(tau * S)."""
        expected = int(round(self.duration * self.sample_rate))
        if len(self.samples) != expected:
            raise ValueError(
                f"{len(self.samples)} samples do not match duration {self.duration}s "
                f"at {self.sample_rate} Hz (expected {expected})"
            )
        return self

    @classmethod
    def from_samples(
        cls, subject_id: str, channel: str, sample_rate: float, samples: np.ndarray
    ) -> "SignalRecord":
        """Build a record whose duration follows from its length."""
        samples = np.asarray(samples, dtype=np.float64)
        return cls(
            subject_id=subject_id,
            channel=channel,
            sample_rate=sample_rate,
            samples=samples,
            duration=len(samples) / sample_rate,
        )

    def __len__(self) -> int:
        return len(self.samples)


def load_record(
    path: Path,
    format: Optional[RecordFormat] = None,
    channel: Optional[str] = None,
    subject_id: Optional[str] = None,
) -> SignalRecord:
    """Load a single-channel record.

    Args:
        path: File to read
        format: Container format (guessed from the suffix when omitted)
        channel: Channel label to extract; RAWBIN files hold one channel and
            are checked against it, EDF files are searched for it
        subject_id: Subject identifier (defaults to the file stem)

    Returns:
        SignalRecord with channel metadata from the header

    Raises:
        IngestError: If the file is unreadable or inconsistent
        ChannelNotFound: If the requested channel is absent
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"Record file not found: {path}", {"path": str(path)})
    format = format or RecordFormat.from_path(path)
    subject_id = subject_id or path.stem

    if format == RecordFormat.RAWBIN:
        record = _read_rawbin(path, subject_id)
        if channel is not None and record.channel != channel:
            raise ChannelNotFound(
                f"Channel {channel!r} not in {path.name} (holds {record.channel!r})",
                {"path": str(path), "available": [record.channel]},
            )
    else:
        record = _read_edf(path, subject_id, channel)

    logger.debug(
        "record_loaded",
        path=str(path),
        channel=record.channel,
        sample_rate=record.sample_rate,
        duration=record.duration,
    )
    return record


def _read_rawbin(path: Path, subject_id: str) -> SignalRecord:
    """Parse the little-endian RAWBIN container."""
    data = path.read_bytes()
    try:
        if data[:4] != RAWBIN_MAGIC:
            raise IngestError(f"Bad magic in {path.name}", {"path": str(path)})
        offset = 4
        (sample_rate,) = _HEADER_RATE.unpack_from(data, offset)
        offset += _HEADER_RATE.size
        (name_len,) = _HEADER_RATE.unpack_from(data, offset)
        offset += _HEADER_RATE.size
        channel = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (count,) = _HEADER_COUNT.unpack_from(data, offset)
        offset += _HEADER_COUNT.size
    except (struct.error, UnicodeDecodeError) as e:
        raise IngestError(f"Truncated or malformed header in {path.name}: {e}", {"path": str(path)})

    payload = data[offset:]
    if len(payload) != 4 * count:
        raise IngestError(
            f"{path.name} promises {count} samples but holds {len(payload) / 4:g}",
            {"path": str(path), "expected": count, "actual_bytes": len(payload)},
        )
    if sample_rate == 0:
        raise IngestError(f"Zero sample rate in {path.name}", {"path": str(path)})

    samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    try:
        return SignalRecord.from_samples(subject_id, channel, float(sample_rate), samples)
    except ValueError as e:
        raise IngestError(f"Invalid samples in {path.name}: {e}", {"path": str(path)})


def _read_edf(path: Path, subject_id: str, channel: Optional[str]) -> SignalRecord:
    """Extract one channel from an EDF file."""
    import mne

    try:
        raw = mne.io.read_raw_edf(path, preload=False, verbose="ERROR")
    except Exception as e:
        raise IngestError(f"Unreadable EDF {path.name}: {e}", {"path": str(path)})

    available = list(raw.ch_names)
    if channel is None:
        channel = available[0]
    if channel not in available:
        raise ChannelNotFound(
            f"Channel {channel!r} not in {path.name}",
            {"path": str(path), "available": available},
        )

    samples = raw.get_data(picks=[channel])[0]
    try:
        return SignalRecord.from_samples(subject_id, channel, float(raw.info["sfreq"]), samples)
    except ValueError as e:
        raise IngestError(f"Invalid samples in {path.name}: {e}", {"path": str(path)})


def write_record(record: SignalRecord, path: Path) -> None:
    """Write a record as RAWBIN (float32 payload).

    Args:
        record: Record to write; its rate must be integral
        path: Destination file
    """
    if float(record.sample_rate) != int(record.sample_rate):
        raise IngestError(
            f"RAWBIN stores integral rates, got {record.sample_rate}",
            {"subject_id": record.subject_id},
        )
    name = record.channel.encode("utf-8")
    header = (
        RAWBIN_MAGIC
        + _HEADER_RATE.pack(int(record.sample_rate))
        + _HEADER_RATE.pack(len(name))
        + name
        + _HEADER_COUNT.pack(len(record.samples))
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + record.samples.astype("<f4").tobytes())


def resample(record: SignalRecord, target_rate: float) -> SignalRecord:
    """Resample a record to `target_rate` with band-limited interpolation.

    Resampling is done in the frequency domain (``scipy.signal.resample``):
    the spectrum is truncated or zero-padded, which keeps DC exact and
    preserves tones below the lower Nyquist frequency. Equal rates pass the
    record through untouched.

    Args:
        record: Input record
        target_rate: Output sampling rate (Hz)

    Returns:
        Record at `target_rate` with the same duration
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if float(target_rate) == float(record.sample_rate):
        return record

    n_out = int(round(record.duration * target_rate))
    if len(record.samples) == 0 or n_out == 0:
        out = np.zeros(n_out)
    else:
        out = signal.resample(record.samples, n_out)

    return SignalRecord(
        subject_id=record.subject_id,
        channel=record.channel,
        sample_rate=float(target_rate),
        samples=out,
        duration=record.duration,
    )
