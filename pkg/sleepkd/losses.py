"""Training objectives: weighted cross entropy, attention transfer and softmax distillation."""

from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from sleepkd.config import ATConfig, DistillWeights
from sleepkd.models.segmodel import FeatureTaps
from sleepkd.records.dataset import ClassWeights
from sleepkd.utils.errors import LossError, ShapeError

Taps = Union[FeatureTaps, Sequence[torch.Tensor]]
WeightsLike = Union[ClassWeights, np.ndarray, torch.Tensor, Sequence[float]]


def _weight_tensor(weights: WeightsLike, like: torch.Tensor) -> torch.Tensor:
    if isinstance(weights, ClassWeights):
        weights = weights.weights
    return torch.as_tensor(np.asarray(weights) if not torch.is_tensor(weights) else weights).to(
        device=like.device, dtype=like.dtype
    )


def _flatten_positions(
    logits: torch.Tensor, mask: Optional[torch.Tensor]
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """[..., K] logits to [N, K], mask to [N]."""
    flat = logits.reshape(-1, logits.shape[-1])
    if mask is None:
        return flat, None
    mask = torch.as_tensor(mask, device=logits.device).reshape(-1).bool()
    if mask.shape[0] != flat.shape[0]:
        raise ShapeError(f"Mask has {mask.shape[0]} positions, logits have {flat.shape[0]}")
    return flat, mask


def wce(
    logits: torch.Tensor,
    labels: torch.Tensor,
    weights: WeightsLike,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Class-weighted cross entropy, normalized by the summed weights.

    ``sum_t w[y_t] * nll_t / sum_t w[y_t]`` over unmasked positions, so
    equal weights give the plain mean cross entropy.

    Args:
        logits: ``[..., K]`` scores
        labels: Class indices matching the leading dimensions of `logits`
        weights: One weight per class
        mask: True where a position counts (all positions when omitted)

    Returns:
        Scalar loss

    Raises:
        LossError: If every position is masked
        ShapeError: If shapes disagree
    """
    flat, flat_mask = _flatten_positions(logits, mask)
    targets = torch.as_tensor(labels, device=logits.device).reshape(-1).long()
    if targets.shape[0] != flat.shape[0]:
        raise ShapeError(f"{targets.shape[0]} labels for {flat.shape[0]} positions")
    w = _weight_tensor(weights, logits)
    if w.shape != (flat.shape[1],):
        raise ShapeError(f"Expected {flat.shape[1]} class weights, got {tuple(w.shape)}")

    if flat_mask is not None:
        flat, targets = flat[flat_mask], targets[flat_mask]
    if flat.shape[0] == 0:
        raise LossError("Every position is masked")

    nll = -torch.log_softmax(flat, dim=-1).gather(1, targets.unsqueeze(1)).squeeze(1)
    w_t = w[targets]
    return (w_t * nll).sum() / w_t.sum()


def attention_map(activations: torch.Tensor, p: int = 2) -> torch.Tensor:
    """Channel-collapsed spatial attention ``Q_l = sum_c |A_{c,l}|^p``.

    Args:
        activations: ``[C, L]`` or batched ``[B, C, L]``
        p: Power applied before the channel sum

    Returns:
        ``[L]`` or ``[B, L]`` non-negative map
    """
    return activations.abs().pow(p).sum(dim=-2)


def _as_list(taps: Taps) -> List[torch.Tensor]:
    return list(taps.maps) if isinstance(taps, FeatureTaps) else list(taps)


def at_loss(
    student_taps: Taps, teacher_taps: Taps, config: Optional[ATConfig] = None
) -> torch.Tensor:
    """Attention-transfer loss over the selected tap pairs.

    For each selected layer the two attention maps are L2-normalized (a zero
    map stays zero) and the Euclidean distance between them is taken; batched
    taps average that distance over the batch. Layer terms are summed.

    Args:
        student_taps: Student activation maps
        teacher_taps: Teacher activation maps, same layout
        config: Power and layer selection (p=2, every layer by default)

    Returns:
        Scalar loss

    Raises:
        ShapeError: If a selected pair differs in shape or an index is invalid
    """
    config = config or ATConfig()
    student, teacher = _as_list(student_taps), _as_list(teacher_taps)
    if len(student) != len(teacher):
        raise ShapeError(f"Student has {len(student)} taps, teacher has {len(teacher)}")

    total: Optional[torch.Tensor] = None
    for j in config.resolve(len(student)):
        if j >= len(student):
            raise ShapeError(f"Tap index {j} out of range for {len(student)} taps")
        a_s, a_t = student[j], teacher[j]
        if a_s.shape != a_t.shape:
            raise ShapeError(
                f"Tap {j} shapes differ: student {tuple(a_s.shape)}, teacher {tuple(a_t.shape)}",
                {"layer": j},
            )
        q_s = attention_map(a_s, config.p)
        q_t = attention_map(a_t, config.p)
        if q_s.dim() == 1:
            q_s, q_t = q_s.unsqueeze(0), q_t.unsqueeze(0)
        diff = F.normalize(q_s, dim=-1) - F.normalize(q_t, dim=-1)
        term = torch.linalg.vector_norm(diff, dim=-1).mean()
        total = term if total is None else total + term

    if total is None:
        raise ShapeError("No taps selected for attention transfer")
    return total


def tempered_log_softmax(logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Log-softmax of ``logits / temperature`` over the last dimension."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return torch.log_softmax(logits / temperature, dim=-1)


def kd_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    temperature: float = 1.0,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean over positions of KL(teacher || student) between tempered distributions.

    Raises:
        ShapeError: If the logits differ in shape
        LossError: If every position is masked
    """
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"Student logits {tuple(student_logits.shape)} vs teacher {tuple(teacher_logits.shape)}"
        )
    log_q_s = tempered_log_softmax(student_logits, temperature)
    log_q_t = tempered_log_softmax(teacher_logits, temperature)
    kl = (log_q_t.exp() * (log_q_t - log_q_s)).sum(dim=-1).reshape(-1)

    if mask is not None:
        _, flat_mask = _flatten_positions(student_logits, mask)
        kl = kl[flat_mask]
    if kl.shape[0] == 0:
        raise LossError("Every position is masked")
    return kl.mean()


def compose(wce_term: torch.Tensor, kd_term: torch.Tensor, dw: DistillWeights) -> torch.Tensor:
    """``(1 - alpha) * wce + alpha * T^2 * kd``."""
    return (1.0 - dw.alpha) * wce_term + dw.alpha * dw.temperature**2 * kd_term


def combined_terms(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    weights: WeightsLike,
    dw: DistillWeights,
    mask: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Composite loss together with its two components.

    Returns:
        (total, wce term, kd term)
    """
    wce_term = wce(student_logits, labels, weights, mask)
    kd_term = kd_loss(student_logits, teacher_logits, dw.temperature, mask)
    return compose(wce_term, kd_term, dw), wce_term, kd_term


def combined_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    labels: torch.Tensor,
    weights: WeightsLike,
    dw: DistillWeights,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Weighted sum of classification and distillation losses.

    Equals ``wce`` exactly at alpha 0 and ``T^2 * kd_loss`` at alpha 1.
    """
    total, _, _ = combined_terms(student_logits, teacher_logits, labels, weights, dw, mask)
    return total
