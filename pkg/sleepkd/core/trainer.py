"""Training loops: supervised baselines, feature training and final distillation."""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch.utils.data import DataLoader, TensorDataset

from sleepkd.config import DistillConfig, DistillWeights
from sleepkd.core.rundir import EpochRecord, RunDirectory
from sleepkd.evaluation.metrics import ConfusionMatrix, accuracy, confusion, weighted_f1
from sleepkd.logging import get_logger, logger as experiment_logger
from sleepkd.losses import at_loss, combined_terms, wce
from sleepkd.models.checkpoint import (
    Checkpoint,
    TrainingMeta,
    parameter_checksum,
    write_checkpoint,
)
from sleepkd.models.segmodel import SegmentationNet, build_model, same_architecture
from sleepkd.records.dataset import ClassWeights, PairedDataset, SegmentBatch, class_weights
from sleepkd.utils.errors import ConfigError, TrainingError
from sleepkd.utils.progress import TrainingProgress

logger = get_logger("trainer")


class TrainState(BaseModel):
    """Bookkeeping of one training step."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    epoch: int = 0
    best_val_metric: Optional[float] = None
    best_val_accuracy: Optional[float] = None
    best_epoch: int = 0
    best_checkpoint: Optional[Checkpoint] = None
    log: List[EpochRecord] = Field(default_factory=list)

    def improves(self, f1: float, acc: float) -> bool:
        """Higher weighted-F1 wins, then higher accuracy; ties keep the earlier epoch."""
        if self.best_val_metric is None:
            return True
        if f1 != self.best_val_metric:
            return f1 > self.best_val_metric
        return self.best_val_accuracy is not None and acc > self.best_val_accuracy


class StepResult(BaseModel):
    """Outcome of a training step."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: SegmentationNet
    checkpoint: Checkpoint
    state: TrainState


def _window_tensor(windows: Sequence[SegmentBatch]) -> torch.Tensor:
    return torch.from_numpy(np.stack([w.inputs.reshape(-1) for w in windows]))


def _label_tensors(windows: Sequence[SegmentBatch]) -> Tuple[torch.Tensor, torch.Tensor]:
    labels = torch.from_numpy(np.stack([w.labels for w in windows]))
    mask = torch.from_numpy(np.stack([w.mask for w in windows]))
    return labels, mask


def _model_device(model: torch.nn.Module) -> torch.device:
    return next(model.parameters()).device


def _model_dtype(model: torch.nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _freeze_norm_statistics(model: torch.nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, torch.nn.modules.batchnorm._BatchNorm):
            module.eval()


@torch.no_grad()
def predict_windows(
    model: SegmentationNet, windows: Sequence[SegmentBatch], batch_size: int = 32
) -> np.ndarray:
    """Argmax labels ``[N, T]`` of every window, in eval mode."""
    if not windows:
        return np.zeros((0, 0), dtype=np.int64)
    was_training = model.training
    model.eval()
    inputs = _window_tensor(windows)
    preds = []
    try:
        for start in range(0, len(inputs), batch_size):
            x = inputs[start : start + batch_size].to(_model_device(model), _model_dtype(model))
            logits, _ = model(x)
            preds.append(logits.argmax(dim=-1).cpu())
    finally:
        model.train(was_training)
    return torch.cat(preds).numpy()


def evaluate(
    model: SegmentationNet, windows: Sequence[SegmentBatch], batch_size: int = 32
) -> ConfusionMatrix:
    """Confusion matrix over the scored (unmasked) epochs of `windows`.

    Args:
        model: Network to evaluate
        windows: Windows of one modality
        batch_size: Windows per forward pass

    Returns:
        ConfusionMatrix with K = model classes
    """
    n_classes = model.config.n_classes
    if not windows:
        return confusion([], [], n_classes)
    preds = predict_windows(model, windows, batch_size)
    labels, mask = _label_tensors(windows)
    return confusion(labels.numpy(), preds, n_classes, mask=mask.numpy())


class Trainer:
    """Runs the training steps of one experiment."""

    def __init__(
        self,
        config: DistillConfig,
        window_epochs: int,
        run_dir: Optional[RunDirectory] = None,
        show_progress: bool = False,
        device: str = "cpu",
    ) -> None:
        """Initialize the trainer.

        Args:
            config: Experiment configuration
            window_epochs: Epochs per training window T
            run_dir: Where logs and the best checkpoint are written
            show_progress: Render a rich progress display
            device: Torch device
        """
        self.config = config
        self.window_epochs = window_epochs
        self.run_dir = run_dir
        self.device = torch.device(device)
        self.progress = TrainingProgress(enabled=show_progress)

    def new_model(self) -> SegmentationNet:
        """Freshly initialized network, seeded from the config."""
        torch.manual_seed(self.config.seed)
        return build_model(self.config.network).to(self.device)

    def _optimizer(self, model: torch.nn.Module) -> torch.optim.Optimizer:
        return torch.optim.Adam(
            model.parameters(),
            lr=self.config.learning_rate,
            betas=self.config.betas,
            weight_decay=self.config.weight_decay,
        )

    def _loader(self, *tensors: torch.Tensor) -> DataLoader:
        generator = torch.Generator().manual_seed(self.config.seed)
        return DataLoader(
            TensorDataset(*tensors),
            batch_size=self.config.batch_size,
            shuffle=True,
            generator=generator,
            num_workers=0,
        )

    def _check_data(self, data: PairedDataset) -> None:
        if data.scheme != self.config.class_scheme:
            raise ConfigError(
                f"Dataset uses {data.scheme.value}, config expects {self.config.class_scheme.value}"
            )
        i = int(round(data.sample_rate * data.epoch_duration))
        if i != self.config.network.samples_per_epoch:
            raise ConfigError(
                f"Dataset epochs have {i} samples, network expects "
                f"{self.config.network.samples_per_epoch}",
                {"sample_rate": data.sample_rate, "epoch_duration": data.epoch_duration},
            )

    def _weights(self, data: PairedDataset) -> ClassWeights:
        weights = class_weights(data.labels("train"), data.n_classes)
        logger.debug("class_weights", weights=weights.weights.tolist())
        return weights

    def _record(self, step: str, rows: List[EpochRecord], state: TrainState) -> None:
        state.log.extend(rows)
        if self.run_dir is not None:
            self.run_dir.append_log(rows)
        for row in rows:
            experiment_logger.log_epoch(
                step,
                row.epoch,
                split=row.split,
                loss_wce=row.loss_wce,
                loss_at=row.loss_at,
                loss_kd=row.loss_kd,
                weighted_f1=row.weighted_f1,
                accuracy=row.accuracy,
            )

    @staticmethod
    def _check_finite(loss: torch.Tensor, step: str, epoch: int) -> None:
        if not torch.isfinite(loss):
            raise TrainingError(
                f"Non-finite loss in {step} step at epoch {epoch}",
                {"step": step, "epoch": epoch, "loss": float(loss.detach())},
            )

    def _validate_and_select(
        self,
        model: SegmentationNet,
        val_windows: Sequence[SegmentBatch],
        state: TrainState,
        epoch: int,
        step: str,
    ) -> EpochRecord:
        cm = evaluate(model, val_windows, self.config.batch_size)
        f1, acc = weighted_f1(cm), accuracy(cm)
        if state.improves(f1, acc):
            state.best_val_metric, state.best_val_accuracy, state.best_epoch = f1, acc, epoch
            state.best_checkpoint = self._snapshot(model, step, epoch, f1, acc)
        return EpochRecord(epoch=epoch, split="val", weighted_f1=f1, accuracy=acc)

    def _snapshot(
        self,
        model: SegmentationNet,
        step: str,
        epoch: int,
        f1: Optional[float],
        acc: Optional[float],
    ) -> Checkpoint:
        checkpoint = Checkpoint.from_model(
            model,
            TrainingMeta(
                epoch=epoch,
                val_metric=f1,
                val_accuracy=acc,
                mode=self.config.mode.value,
                step=step,
            ),
        )
        if self.run_dir is not None:
            write_checkpoint(checkpoint, self.run_dir.best_checkpoint)
        return checkpoint

    def _supervised_loop(
        self,
        model: SegmentationNet,
        data: PairedDataset,
        step: str,
        modality: str,
        batch_loss: Callable[[Tuple[torch.Tensor, ...]], Tuple[torch.Tensor, dict]],
        loader: DataLoader,
    ) -> StepResult:
        """Shared epoch loop with validation-based checkpoint selection."""
        val_windows = data.windows("val", modality, self.window_epochs)
        optimizer = self._optimizer(model)
        state = TrainState()
        state.best_checkpoint = self._snapshot(model, step, 0, None, None)

        self.progress.start(step, self.config.epochs)
        try:
            for epoch in range(1, self.config.epochs + 1):
                model.train()
                totals: dict = {}
                seen = 0
                for batch in loader:
                    optimizer.zero_grad()
                    loss, parts = batch_loss(batch)
                    self._check_finite(loss, step, epoch)
                    loss.backward()
                    optimizer.step()
                    n = batch[0].shape[0]
                    seen += n
                    for key, value in parts.items():
                        totals[key] = totals.get(key, 0.0) + float(value.detach()) * n

                train_row = EpochRecord(
                    epoch=epoch, split="train", **{k: v / seen for k, v in totals.items()}
                )
                val_row = self._validate_and_select(model, val_windows, state, epoch, step)
                state.epoch = epoch
                self._record(step, [train_row, val_row], state)
                self.progress.update(
                    epoch,
                    best=state.best_val_metric,
                    loss=train_row.loss_wce,
                    val_weighted_f1=val_row.weighted_f1,
                )
        finally:
            self.progress.finish()

        assert state.best_checkpoint is not None
        best = state.best_checkpoint.to_model().to(self.device)
        logger.info(
            "step_completed",
            step=step,
            epochs=state.epoch,
            best_epoch=state.best_epoch,
            best_val_metric=state.best_val_metric,
        )
        return StepResult(model=best, checkpoint=state.best_checkpoint, state=state)

    def train_baseline(
        self, data: PairedDataset, modality: str, model: Optional[SegmentationNet] = None
    ) -> StepResult:
        """Train on weighted cross entropy alone.

        Args:
            data: Paired dataset
            modality: "eeg" (teacher) or "ecg" (student baseline)
            model: Initial network (fresh when omitted)

        Returns:
            StepResult holding the best-validation model

        Raises:
            TrainingError: On a non-finite loss or an empty training partition
        """
        self._check_data(data)
        model = model or self.new_model()
        windows = data.windows("train", modality, self.window_epochs)
        if not windows:
            raise TrainingError("No training windows", {"step": modality})
        weights = self._weights(data)
        labels, mask = _label_tensors(windows)
        loader = self._loader(_window_tensor(windows), labels, mask)
        dtype = _model_dtype(model)

        def batch_loss(batch: Tuple[torch.Tensor, ...]) -> Tuple[torch.Tensor, dict]:
            x, y, m = (t.to(self.device) for t in batch)
            logits, _ = model(x.to(dtype))
            loss = wce(logits, y, weights, m)
            return loss, {"loss_wce": loss}

        step = "teacher" if modality == "eeg" else "baseline"
        return self._supervised_loop(model, data, step, modality, batch_loss, loader)

    def train_teacher(self, data: PairedDataset) -> StepResult:
        """Train the EEG teacher on weighted cross entropy."""
        return self.train_baseline(data, "eeg")

    def _frozen(self, teacher: SegmentationNet) -> str:
        teacher.eval()
        for p in teacher.parameters():
            p.requires_grad_(False)
        return parameter_checksum(teacher)

    def feature_train(
        self, student: SegmentationNet, teacher: SegmentationNet, data: PairedDataset
    ) -> StepResult:
        """Feature step: fit the student's attention maps to the frozen teacher's.

        Runs up to ``feature_epochs`` epochs of attention-transfer loss on
        time-aligned (EEG, ECG) windows and stops early once the epoch loss
        has not improved by ``feature_min_delta`` for ``feature_patience``
        epochs. The student's normalization layers use their running statistics
        throughout, as the teacher's do, so a student equal to the teacher on
        equal input sits at zero loss. The final (not the best) student is returned.

        Raises:
            ConfigError: If student and teacher configs differ
            TrainingError: On a non-finite loss or an empty training partition
        """
        if not same_architecture(student.config, teacher.config):
            raise ConfigError("Attention transfer needs identical student and teacher configs")
        self._check_data(data)
        checksum = self._frozen(teacher)

        pairs = data.paired_windows("train", self.window_epochs)
        if not pairs:
            raise TrainingError("No training windows", {"step": "feature"})
        eeg = _window_tensor([p[0] for p in pairs])
        ecg = _window_tensor([p[1] for p in pairs])
        loader = self._loader(eeg, ecg)
        optimizer = self._optimizer(student)
        dtype = _model_dtype(student)
        state = TrainState()

        best_loss = float("inf")
        stale = 0
        self.progress.start("feature", self.config.feature_epochs)
        try:
            for epoch in range(1, self.config.feature_epochs + 1):
                student.train()
                _freeze_norm_statistics(student)
                total, seen = 0.0, 0
                for x_eeg, x_ecg in loader:
                    with torch.no_grad():
                        _, teacher_taps = teacher(x_eeg.to(self.device, _model_dtype(teacher)))
                    optimizer.zero_grad()
                    _, student_taps = student(x_ecg.to(self.device, dtype))
                    loss = at_loss(student_taps, teacher_taps, self.config.at)
                    self._check_finite(loss, "feature", epoch)
                    loss.backward()
                    optimizer.step()
                    total += float(loss.detach()) * x_eeg.shape[0]
                    seen += x_eeg.shape[0]

                epoch_loss = total / seen
                state.epoch = epoch
                row = EpochRecord(epoch=epoch, split="feature", loss_at=epoch_loss)
                self._record("feature", [row], state)
                self.progress.update(epoch, loss_at=epoch_loss)

                if epoch_loss < best_loss - self.config.feature_min_delta:
                    best_loss, stale = epoch_loss, 0
                else:
                    stale += 1
                    if stale >= self.config.feature_patience:
                        logger.info("feature_training_plateau", epoch=epoch, loss_at=epoch_loss)
                        break
        finally:
            self.progress.finish()

        if parameter_checksum(teacher) != checksum:
            raise TrainingError("Teacher parameters changed during feature training")

        checkpoint = Checkpoint.from_model(
            student, TrainingMeta(epoch=state.epoch, mode=self.config.mode.value, step="feature")
        )
        return StepResult(model=student, checkpoint=checkpoint, state=state)

    def final_train(
        self,
        student: SegmentationNet,
        teacher: SegmentationNet,
        data: PairedDataset,
        dw: Optional[DistillWeights] = None,
    ) -> StepResult:
        """Final step: train the student on the weighted sum of WCE and softmax distillation.

        Teacher logits come from the frozen teacher on the time-aligned EEG
        window; the best checkpoint is selected on student/ECG validation.

        Raises:
            ConfigError: If the networks disagree on classes or epoch length
            TrainingError: On a non-finite loss or an empty training partition
        """
        dw = dw or self.config.weights
        for field in ("n_classes", "samples_per_epoch"):
            if getattr(student.config, field) != getattr(teacher.config, field):
                raise ConfigError(f"Student and teacher disagree on {field}")
        self._check_data(data)
        checksum = self._frozen(teacher)

        pairs = data.paired_windows("train", self.window_epochs)
        if not pairs:
            raise TrainingError("No training windows", {"step": "final"})
        weights = self._weights(data)
        labels, mask = _label_tensors([p[1] for p in pairs])
        loader = self._loader(
            _window_tensor([p[0] for p in pairs]),
            _window_tensor([p[1] for p in pairs]),
            labels,
            mask,
        )
        dtype = _model_dtype(student)

        def batch_loss(batch: Tuple[torch.Tensor, ...]) -> Tuple[torch.Tensor, dict]:
            x_eeg, x_ecg, y, m = (t.to(self.device) for t in batch)
            with torch.no_grad():
                teacher_logits, _ = teacher(x_eeg.to(_model_dtype(teacher)))
            student_logits, _ = student(x_ecg.to(dtype))
            total, wce_term, kd_term = combined_terms(
                student_logits, teacher_logits.to(dtype), y, weights, dw, m
            )
            return total, {"loss_wce": wce_term, "loss_kd": kd_term}

        result = self._supervised_loop(student, data, "final", "ecg", batch_loss, loader)
        if parameter_checksum(teacher) != checksum:
            raise TrainingError("Teacher parameters changed during final training")
        return result
