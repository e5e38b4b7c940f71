"""Run directories: config echo, run id, append-only training log, checkpoints and lock."""

import hashlib
import json
import os
import shutil
from datetime import datetime, timezone
from pathlib import Path
from types import TracebackType
from typing import Any, Dict, Optional, Sequence, Type

import pandas as pd
from pydantic import BaseModel, Field

from sleepkd.config import DistillConfig, Settings
from sleepkd.logging import get_logger
from sleepkd.utils.errors import RunDirectoryError

logger = get_logger("rundir")

LOCK_NAME = ".lock"
RUN_INFO_NAME = "run.json"
CONFIG_NAME = "config.yaml"
LOG_NAME = "train_log.csv"
REPORT_NAME = "report.json"
BEST_CHECKPOINT = Path("checkpoints") / "best.ckpt"
LOG_COLUMNS = ["epoch", "split", "loss_wce", "loss_at", "loss_kd", "weighted_f1", "accuracy"]

# Files that mark a directory as something this toolkit wrote
_RECOGNISED_MARKERS = (RUN_INFO_NAME, "manifest.json")


class EpochRecord(BaseModel):
    """One row of ``train_log.csv``."""

    epoch: int
    split: str
    loss_wce: Optional[float] = None
    loss_at: Optional[float] = None
    loss_kd: Optional[float] = None
    weighted_f1: Optional[float] = None
    accuracy: Optional[float] = None


class RunInfo(BaseModel):
    """Contents of ``run.json``."""

    run_id: str
    command: str
    mode: str
    status: str = "running"
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    teacher_checkpoint: Optional[str] = None
    error: Optional[str] = None


def compute_run_id(config: DistillConfig) -> str:
    """First 12 hex characters of SHA-1 over the canonical config JSON."""
    return hashlib.sha1(config.canonical_json().encode("utf-8")).hexdigest()[:12]


def prepare_output_dir(path: Path, force: bool) -> None:
    """Create `path`, refusing to reuse a non-empty directory without force.

    With force, only directories holding a run or dataset marker are cleared.

    Raises:
        RunDirectoryError: If the directory is in use, non-empty without
            force, or not recognisably ours
    """
    if (path / LOCK_NAME).exists():
        raise RunDirectoryError(
            f"{path} is locked by another invocation (remove {LOCK_NAME} if stale)",
            {"path": str(path)},
        )
    if path.exists() and not path.is_dir():
        raise RunDirectoryError(f"{path} exists and is not a directory", {"path": str(path)})

    if path.exists() and any(path.iterdir()):
        if not force:
            raise RunDirectoryError(
                f"{path} already exists; pass --force to overwrite it", {"path": str(path)}
            )
        if not any((path / marker).exists() for marker in _RECOGNISED_MARKERS):
            raise RunDirectoryError(
                f"Refusing to clear {path}: it is not a run or dataset directory",
                {"path": str(path)},
            )
        logger.warning("output_dir_cleared", path=str(path))
        shutil.rmtree(path)

    path.mkdir(parents=True, exist_ok=True)


class RunDirectory:
    """Exclusive owner of one run's output directory.

    Use as a context manager: entering prepares the directory and takes the
    lock, leaving releases it.
    """

    def __init__(self, path: Path, force: bool = False) -> None:
        """Initialize the run directory.

        Args:
            path: Directory of the run
            force: Clear an existing run directory at `path`
        """
        self.path = Path(path)
        self.force = force
        self.info: Optional[RunInfo] = None
        self._locked = False

    @property
    def config_path(self) -> Path:
        return self.path / CONFIG_NAME

    @property
    def info_path(self) -> Path:
        return self.path / RUN_INFO_NAME

    @property
    def log_path(self) -> Path:
        return self.path / LOG_NAME

    @property
    def report_path(self) -> Path:
        return self.path / REPORT_NAME

    @property
    def best_checkpoint(self) -> Path:
        return self.path / BEST_CHECKPOINT

    def __enter__(self) -> "RunDirectory":
        self.open()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        if self.info is not None and self.info.status == "running":
            self.finish("failed" if exc else "completed", error=str(exc) if exc else None)
        self.close()

    def open(self) -> None:
        """Prepare the directory and take the lock.

        Raises:
            RunDirectoryError: If the directory cannot be used
        """
        prepare_output_dir(self.path, self.force)
        try:
            fd = os.open(self.path / LOCK_NAME, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunDirectoryError(f"{self.path} is locked by another invocation")
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        self._locked = True

    def close(self) -> None:
        """Release the lock."""
        if self._locked:
            (self.path / LOCK_NAME).unlink(missing_ok=True)
            self._locked = False

    def start(self, settings: Settings, command: str) -> RunInfo:
        """Write the config echo and ``run.json``.

        Args:
            settings: Effective configuration
            command: CLI subcommand that created the run

        Returns:
            RunInfo with the deterministic run id
        """
        config = settings.experiment
        settings.to_file(self.config_path)
        self.info = RunInfo(
            run_id=compute_run_id(config),
            command=command,
            mode=config.mode.value,
            teacher_checkpoint=(
                str(config.teacher_checkpoint) if config.teacher_checkpoint else None
            ),
        )
        self._write_info()
        return self.info

    def finish(self, status: str = "completed", error: Optional[str] = None) -> None:
        """Stamp the run as finished."""
        if self.info is None:
            return
        self.info.status = status
        self.info.error = error
        self.info.finished_at = datetime.now(timezone.utc).isoformat()
        self._write_info()

    def _write_info(self) -> None:
        assert self.info is not None
        self.info_path.write_text(
            json.dumps(self.info.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
        )

    def append_log(self, rows: Sequence[EpochRecord]) -> None:
        """Append rows to ``train_log.csv`` (header written once)."""
        if not rows:
            return
        df = pd.DataFrame([r.model_dump() for r in rows], columns=LOG_COLUMNS)
        df.to_csv(self.log_path, mode="a", header=not self.log_path.exists(), index=False)

    def read_log(self) -> pd.DataFrame:
        """Training log as a DataFrame (empty when nothing was logged)."""
        if not self.log_path.exists():
            return pd.DataFrame(columns=LOG_COLUMNS)
        return pd.read_csv(self.log_path)


def read_run_info(path: Path) -> Dict[str, Any]:
    """Parse ``run.json`` of a finished run directory."""
    info_path = Path(path) / RUN_INFO_NAME
    if not info_path.exists():
        raise RunDirectoryError(f"{path} is not a run directory", {"path": str(path)})
    return json.loads(info_path.read_text(encoding="utf-8"))

