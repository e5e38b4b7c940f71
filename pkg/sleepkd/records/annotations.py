"""Sleep-stage annotations: hypnograms, CSV sidecars, stage merging and epoch conversion."""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sleepkd.config import StageSchema
from sleepkd.logging import get_logger
from sleepkd.records.signals import SignalRecord
from sleepkd.utils.errors import AlignmentError, IngestError, SchemaError

logger = get_logger("annotations")

# Seconds of context added on each side when 20 s epochs become 30 s epochs
CONVERSION_MARGIN = 5


class SleepStage(str, Enum):
    """Stage tokens of every supported alphabet."""

    W = "W"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    N4 = "N4"
    REM = "REM"
    UNSCORED = "UNS"
    L = "L"
    D = "D"
    N = "N"
    R = "R"


ALPHABETS: Dict[StageSchema, Tuple[SleepStage, ...]] = {
    StageSchema.RAW_RK: (
        SleepStage.W,
        SleepStage.N1,
        SleepStage.N2,
        SleepStage.N3,
        SleepStage.N4,
        SleepStage.REM,
        SleepStage.UNSCORED,
    ),
    # Class index order: W, L, D, R / W, N, R
    StageSchema.FOUR_CLASS: (SleepStage.W, SleepStage.L, SleepStage.D, SleepStage.R),
    StageSchema.THREE_CLASS: (SleepStage.W, SleepStage.N, SleepStage.R),
}

STAGE_MAPS: Dict[Tuple[StageSchema, StageSchema], Dict[SleepStage, SleepStage]] = {
    (StageSchema.RAW_RK, StageSchema.FOUR_CLASS): {
        SleepStage.W: SleepStage.W,
        SleepStage.N1: SleepStage.L,
        SleepStage.N2: SleepStage.L,
        SleepStage.N3: SleepStage.D,
        SleepStage.N4: SleepStage.D,
        SleepStage.REM: SleepStage.R,
    },
    (StageSchema.RAW_RK, StageSchema.THREE_CLASS): {
        SleepStage.W: SleepStage.W,
        SleepStage.N1: SleepStage.N,
        SleepStage.N2: SleepStage.N,
        SleepStage.N3: SleepStage.N,
        SleepStage.N4: SleepStage.N,
        SleepStage.REM: SleepStage.R,
    },
    (StageSchema.FOUR_CLASS, StageSchema.THREE_CLASS): {
        SleepStage.W: SleepStage.W,
        SleepStage.L: SleepStage.N,
        SleepStage.D: SleepStage.N,
        SleepStage.R: SleepStage.R,
    },
}


def class_names(schema: StageSchema) -> List[str]:
    """Stage tokens of a merged schema in class-index order."""
    if schema == StageSchema.RAW_RK:
        raise SchemaError("RAW_RK stages are not class labels; merge them first")
    return [stage.value for stage in ALPHABETS[schema]]


class Hypnogram(BaseModel):
    """Per-epoch stage sequence of one subject.

    ``epoch_index`` places each stage on the epoch grid of the accompanying
    record; it has gaps where unscored epochs were dropped.
    """

    subject_id: str
    epoch_duration: int
    stages: List[SleepStage]
    schema_: StageSchema = Field(alias="schema")
    epoch_index: List[int] = Field(default_factory=list)

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("epoch_duration")
    @classmethod
    def validate_epoch_duration(cls, v: int) -> int:
        """Scored epochs are 20 or 30 seconds long."""
        if v not in (20, 30):
            raise ValueError(f"epoch_duration must be 20 or 30 seconds, got {v}")
        return v

    @model_validator(mode="before")
    @classmethod
    def default_index(cls, data: Any) -> Any:
        """Number epochs consecutively when no index map is given."""
        if isinstance(data, dict) and not data.get("epoch_index"):
            data = dict(data)
            data["epoch_index"] = list(range(len(data.get("stages", []))))
        return data

    @model_validator(mode="after")
    def validate_alphabet(self) -> "Hypnogram":
        """All stages belong to the schema; the index map is increasing."""
        alphabet = set(ALPHABETS[self.schema_])
        foreign = sorted({s.value for s in self.stages if s not in alphabet})
        if foreign:
            raise SchemaError(
                f"Stages {foreign} are not in the {self.schema_.value} alphabet",
                {"subject_id": self.subject_id},
            )
        if len(self.epoch_index) != len(self.stages):
            raise ValueError("epoch_index and stages differ in length")
        if any(b <= a for a, b in zip(self.epoch_index, self.epoch_index[1:])):
            raise ValueError("epoch_index must be strictly increasing")
        if self.epoch_index and self.epoch_index[0] < 0:
            raise ValueError("epoch_index must be non-negative")
        return self

    @property
    def schema(self) -> StageSchema:  # type: ignore[override]
        """Stage alphabet of this hypnogram."""
        return self.schema_

    def __len__(self) -> int:
        return len(self.stages)

    def labels(self) -> np.ndarray:
        """Class indices of a merged hypnogram."""
        lookup = {name: k for k, name in enumerate(class_names(self.schema_))}
        return np.array([lookup[s.value] for s in self.stages], dtype=np.int64)

    @classmethod
    def from_labels(
        cls,
        subject_id: str,
        labels: np.ndarray,
        schema: StageSchema,
        epoch_duration: int = 30,
        epoch_index: Optional[List[int]] = None,
    ) -> "Hypnogram":
        """Build a merged hypnogram from class indices."""
        names = class_names(schema)
        return cls(
            subject_id=subject_id,
            epoch_duration=epoch_duration,
            stages=[SleepStage(names[int(k)]) for k in labels],
            schema=schema,
            epoch_index=list(epoch_index) if epoch_index is not None else [],
        )


def merge_stages(hypnogram: Hypnogram, scheme: StageSchema) -> Hypnogram:
    """Collapse raw R&K stages into a four- or three-class alphabet.

    UNSCORED epochs are dropped; the survivors keep their grid positions in
    ``epoch_index``. A FOUR_CLASS hypnogram may also be collapsed to
    THREE_CLASS (L, D -> N).

    Args:
        hypnogram: Raw (or four-class) hypnogram
        scheme: Target alphabet

    Returns:
        Merged hypnogram

    Raises:
        SchemaError: If the conversion is undefined or a stage is unknown
    """
    mapping = STAGE_MAPS.get((hypnogram.schema, scheme))
    if mapping is None:
        raise SchemaError(
            f"Cannot merge {hypnogram.schema.value} into {scheme.value}",
            {"subject_id": hypnogram.subject_id},
        )

    stages: List[SleepStage] = []
    index: List[int] = []
    dropped = 0
    for position, stage in zip(hypnogram.epoch_index, hypnogram.stages):
        if stage == SleepStage.UNSCORED:
            dropped += 1
            continue
        if stage not in mapping:
            raise SchemaError(
                f"Unknown stage {stage.value!r} for {scheme.value}",
                {"subject_id": hypnogram.subject_id, "epoch_index": position},
            )
        stages.append(mapping[stage])
        index.append(position)

    if dropped:
        logger.debug("unscored_dropped", subject_id=hypnogram.subject_id, dropped=dropped)

    return Hypnogram(
        subject_id=hypnogram.subject_id,
        epoch_duration=hypnogram.epoch_duration,
        stages=stages,
        schema=scheme,
        epoch_index=index,
    )


def convert_epoch_duration(
    hypnogram: Hypnogram, record: SignalRecord
) -> Tuple[Hypnogram, SignalRecord]:
    """Turn 20 s epochs into 30 s epochs by adding 5 s of signal on both sides.

    Epochs whose extended window would leave the record are dropped. The
    returned record is the concatenation of the retained 30 s windows, so
    output epoch k is samples ``[k*30*S, (k+1)*30*S)``; windows of neighbouring
    epochs overlap in the source and are duplicated in the output.

    Args:
        hypnogram: 20 s hypnogram
        record: Signal covering the annotated span

    Returns:
        (30 s hypnogram, windowed record)

    Raises:
        AlignmentError: If the record is shorter than the annotation span
    """
    if hypnogram.epoch_duration != 20:
        raise AlignmentError(
            f"Expected 20 s epochs, got {hypnogram.epoch_duration} s",
            {"subject_id": hypnogram.subject_id},
        )

    rate = record.sample_rate
    epoch_len = 20 * rate
    margin = CONVERSION_MARGIN * rate
    if epoch_len != int(epoch_len) or margin != int(margin):
        raise AlignmentError(
            f"Sample rate {rate} does not give whole-sample epochs",
            {"subject_id": hypnogram.subject_id},
        )
    epoch_len, margin = int(epoch_len), int(margin)

    if hypnogram.epoch_index:
        span = (hypnogram.epoch_index[-1] + 1) * epoch_len
        if span > len(record.samples):
            raise AlignmentError(
                f"Record has {len(record.samples)} samples, annotations span {span}",
                {"subject_id": hypnogram.subject_id},
            )

    windows: List[np.ndarray] = []
    stages: List[SleepStage] = []
    for position, stage in zip(hypnogram.epoch_index, hypnogram.stages):
        start = position * epoch_len - margin
        stop = (position + 1) * epoch_len + margin
        if start < 0 or stop > len(record.samples):
            continue
        windows.append(record.samples[start:stop])
        stages.append(stage)

    samples = np.concatenate(windows) if windows else np.zeros(0)
    logger.debug(
        "epochs_converted",
        subject_id=hypnogram.subject_id,
        kept=len(stages),
        dropped=len(hypnogram) - len(stages),
    )

    converted = Hypnogram(
        subject_id=hypnogram.subject_id,
        epoch_duration=30,
        stages=stages,
        schema=hypnogram.schema,
    )
    windowed = SignalRecord(
        subject_id=record.subject_id,
        channel=record.channel,
        sample_rate=rate,
        samples=samples,
        duration=30.0 * len(stages),
    )
    return converted, windowed


class AnnotationCSVParser:
    """Reader/writer for ``epoch_index,onset_seconds,duration_seconds,stage`` sidecars."""

    EXPECTED_COLUMNS = {"epoch_index", "onset_seconds", "duration_seconds", "stage"}

    def __init__(self) -> None:
        """Initialize the parser."""
        self.logger = get_logger("csv_parser")

    def parse_csv(
        self,
        csv_path: Path,
        subject_id: Optional[str] = None,
        schema: Optional[StageSchema] = None,
    ) -> Hypnogram:
        """Parse one annotation sidecar.

        Args:
            csv_path: Path to CSV file
            subject_id: Subject identifier (defaults to the file stem)
            schema: Stage alphabet; inferred from the tokens when omitted

        Returns:
            Hypnogram

        Raises:
            IngestError: If the file is missing or malformed
            SchemaError: If a stage token is unknown
        """
        if not csv_path.exists():
            raise IngestError(f"Annotation file not found: {csv_path}", {"path": str(csv_path)})

        try:
            df = pd.read_csv(
                csv_path, encoding="utf-8", keep_default_na=False, dtype={"stage": str}
            )
        except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as e:
            raise IngestError(f"Unreadable annotation file {csv_path.name}: {e}")

        self._validate_columns(df, csv_path)
        subject_id = subject_id or csv_path.stem

        durations = df["duration_seconds"].astype(float).unique()
        if len(durations) > 1:
            raise IngestError(
                f"Mixed epoch durations {sorted(durations)} in {csv_path.name}",
                {"path": str(csv_path)},
            )
        duration = int(durations[0]) if len(durations) else 30

        index = df["epoch_index"].astype(int).tolist()
        onsets = df["onset_seconds"].astype(float).to_numpy()
        if not np.allclose(onsets, np.asarray(index, dtype=float) * duration):
            raise IngestError(
                f"Onsets in {csv_path.name} are off the {duration} s epoch grid",
                {"path": str(csv_path)},
            )

        try:
            stages = [SleepStage(token.strip()) for token in df["stage"]]
        except ValueError as e:
            raise SchemaError(
                f"Unknown stage token in {csv_path.name}: {e}", {"path": str(csv_path)}
            )

        schema = schema or self._infer_schema(stages)
        hypnogram = Hypnogram(
            subject_id=subject_id,
            epoch_duration=duration,
            stages=stages,
            schema=schema,
            epoch_index=index,
        )

        self.logger.debug(
            "csv_parsed", path=str(csv_path), epochs=len(hypnogram), schema=schema.value
        )
        return hypnogram

    def _validate_columns(self, df: pd.DataFrame, csv_path: Path) -> None:
        """Validate that required columns are present.

        Args:
            df: DataFrame to validate
            csv_path: Source file (for the message)

        Raises:
            IngestError: If required columns are missing
        """
        missing = self.EXPECTED_COLUMNS - set(df.columns)
        if missing:
            raise IngestError(
                f"Columns {sorted(missing)} missing from {csv_path.name}",
                {"path": str(csv_path)},
            )

    @staticmethod
    def _infer_schema(stages: List[SleepStage]) -> StageSchema:
        """Pick the narrowest alphabet holding every token."""
        present = set(stages)
        for schema in (StageSchema.RAW_RK, StageSchema.FOUR_CLASS, StageSchema.THREE_CLASS):
            if present & (set(ALPHABETS[schema]) - {SleepStage.W}):
                if present <= set(ALPHABETS[schema]):
                    return schema
        if present <= {SleepStage.W}:
            return StageSchema.RAW_RK
        raise SchemaError(f"Stages {sorted(s.value for s in present)} mix alphabets")

    def write_csv(self, hypnogram: Hypnogram, csv_path: Path) -> None:
        """Write a hypnogram sidecar.

        Args:
            hypnogram: Hypnogram to write
            csv_path: Destination file
        """
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(
            {
                "epoch_index": hypnogram.epoch_index,
                "onset_seconds": [i * hypnogram.epoch_duration for i in hypnogram.epoch_index],
                "duration_seconds": [hypnogram.epoch_duration] * len(hypnogram),
                "stage": [s.value for s in hypnogram.stages],
            },
            columns=["epoch_index", "onset_seconds", "duration_seconds", "stage"],
        )
        df.to_csv(csv_path, index=False)


def read_hypnogram(
    path: Path, subject_id: Optional[str] = None, schema: Optional[StageSchema] = None
) -> Hypnogram:
    """Read a CSV annotation sidecar (see AnnotationCSVParser.parse_csv)."""
    return AnnotationCSVParser().parse_csv(Path(path), subject_id, schema)


def write_hypnogram(hypnogram: Hypnogram, path: Path) -> None:
    """Write a CSV annotation sidecar."""
    AnnotationCSVParser().write_csv(hypnogram, Path(path))
