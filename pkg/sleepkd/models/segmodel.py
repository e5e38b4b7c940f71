"""Fully convolutional encoder-decoder for per-epoch sleep staging."""

import math
from fractions import Fraction
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict

from sleepkd.config import Activation, ModelConfig, Norm
from sleepkd.logging import get_logger
from sleepkd.records.signals import SignalRecord
from sleepkd.utils.errors import ConfigError, ShapeError

logger = get_logger("segmodel")

_ACTIVATIONS = {
    Activation.RELU: nn.ReLU,
    Activation.ELU: nn.ELU,
    Activation.GELU: nn.GELU,
    Activation.TANH: nn.Tanh,
}


class FeatureTaps(BaseModel):
    """Activation maps of every convolutional stage, in a fixed order.

    Order: encoder stages (shallow to deep), bottleneck, decoder stages
    (deep to shallow). Maps are ``[B, C, L]`` from a batched forward pass
    or ``[C, L]`` for a single window.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    layer_ids: List[str]
    maps: List[torch.Tensor]

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self) -> Iterator[Tuple[str, torch.Tensor]]:  # type: ignore[override]
        return iter(zip(self.layer_ids, self.maps))

    def __getitem__(self, j: int) -> torch.Tensor:
        return self.maps[j]

    @property
    def bottleneck(self) -> torch.Tensor:
        """The most compressed tap."""
        return self.maps[self.layer_ids.index("bottleneck")]

    def sample(self, b: int) -> "FeatureTaps":
        """Taps of one batch element."""
        return FeatureTaps(layer_ids=list(self.layer_ids), maps=[m[b] for m in self.maps])

    def detach(self) -> "FeatureTaps":
        """Taps cut from the autograd graph."""
        return FeatureTaps(layer_ids=list(self.layer_ids), maps=[m.detach() for m in self.maps])


class ConvBlock(nn.Sequential):
    """Same-padded convolution, optional batch norm, nonlinearity."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        dilation: int,
        activation: Activation,
        norm: Norm,
    ) -> None:
        padding = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv1d(
                in_channels,
                out_channels,
                kernel_size,
                padding=padding,
                dilation=dilation,
                bias=norm == Norm.NONE,
            ),
            nn.BatchNorm1d(out_channels) if norm == Norm.BATCH else nn.Identity(),
            _ACTIVATIONS[activation](),
        )


class SegmentationNet(nn.Module):
    """Encoder-decoder mapping ``[B, T*i]`` signals to ``[B, T, K]`` epoch scores.

    Each encoder stage applies two dilated convolutions and max-pools by its
    pool size; the bottleneck applies two more. Each decoder stage upsamples
    by nearest neighbour, convolves, concatenates the matching encoder output
    and applies two convolutions. A 1x1 convolution gives per-sample class
    scores which are averaged over each epoch's ``i`` samples.
    """

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        k, act, norm = config.kernel_size, config.activation, config.norm

        self.encoder = nn.ModuleList()
        self.pools = nn.ModuleList()
        in_ch = 1
        for filters, pool in zip(config.filters_per_stage, config.pool_sizes):
            self.encoder.append(
                nn.Sequential(
                    ConvBlock(in_ch, filters, k, config.dilation, act, norm),
                    ConvBlock(filters, filters, k, config.dilation, act, norm),
                )
            )
            self.pools.append(nn.MaxPool1d(pool))
            in_ch = filters

        width = config.bottleneck_channels
        self.bottleneck = nn.Sequential(
            ConvBlock(in_ch, width, k, config.dilation, act, norm),
            ConvBlock(width, width, k, config.dilation, act, norm),
        )

        self.upsamples = nn.ModuleList()
        self.decoder = nn.ModuleList()
        in_ch = width
        for filters, pool in zip(
            reversed(config.filters_per_stage), reversed(config.pool_sizes)
        ):
            self.upsamples.append(
                nn.Sequential(
                    nn.Upsample(scale_factor=pool, mode="nearest"),
                    ConvBlock(in_ch, filters, k, 1, act, norm),
                )
            )
            self.decoder.append(
                nn.Sequential(
                    ConvBlock(2 * filters, filters, k, 1, act, norm),
                    ConvBlock(filters, filters, k, 1, act, norm),
                )
            )
            in_ch = filters

        self.head = nn.Conv1d(in_ch, config.n_classes, kernel_size=1)

    @property
    def tap_ids(self) -> List[str]:
        """Layer ids of the taps, in tap order."""
        depth = self.config.depth
        return (
            [f"encoder.{s}" for s in range(depth)]
            + ["bottleneck"]
            + [f"decoder.{s}" for s in reversed(range(depth))]
        )

    def dense_scores(self, x: torch.Tensor) -> Tuple[torch.Tensor, FeatureTaps]:
        """Per-sample class scores before epoch pooling.

        Args:
            x: ``[B, L]`` or ``[B, 1, L]`` with L a multiple of the total pool factor

        Returns:
            (scores ``[B, K, L]``, taps)
        """
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] % self.config.total_pool != 0:
            raise ShapeError(
                f"Input length {x.shape[-1]} is not a multiple of the pool product "
                f"{self.config.total_pool}"
            )

        maps: List[torch.Tensor] = []
        skips: List[torch.Tensor] = []
        h = x
        for stage, pool in zip(self.encoder, self.pools):
            h = stage(h)
            maps.append(h)
            skips.append(h)
            h = pool(h)

        h = self.bottleneck(h)
        maps.append(h)

        for up, stage, skip in zip(self.upsamples, self.decoder, reversed(skips)):
            h = stage(torch.cat([up(h), skip], dim=1))
            maps.append(h)

        return self.head(h), FeatureTaps(layer_ids=self.tap_ids, maps=maps)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, FeatureTaps]:
        """Epoch scores for a batch of windows.

        Args:
            x: ``[B, T*i]`` signal windows

        Returns:
            (logits ``[B, T, K]``, taps)

        Raises:
            ShapeError: If the length is not a whole number of epochs
        """
        i = self.config.samples_per_epoch
        if x.shape[-1] % i != 0:
            raise ShapeError(f"Input length {x.shape[-1]} is not a multiple of i={i}")
        scores, taps = self.dense_scores(x)
        b, k, length = scores.shape
        logits = scores.reshape(b, k, length // i, i).mean(dim=-1)
        return logits.transpose(1, 2), taps


def build_model(config: ModelConfig) -> SegmentationNet:
    """Build the segmentation network.

    Raises:
        ConfigError: If the config violates its invariants
    """
    problems = config.check()
    if problems:
        raise ConfigError("Invalid model config: " + "; ".join(problems), {"problems": problems})
    model = SegmentationNet(config)
    logger.debug(
        "model_built",
        depth=config.depth,
        parameters=sum(p.numel() for p in model.parameters()),
    )
    return model


def _as_tensor(model: nn.Module, values: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    param = next(model.parameters())
    return torch.as_tensor(np.asarray(values) if not torch.is_tensor(values) else values).to(
        device=param.device, dtype=param.dtype
    )


def forward(
    model: SegmentationNet, inputs: Union[np.ndarray, torch.Tensor]
) -> Tuple[torch.Tensor, FeatureTaps]:
    """Run one window through the network.

    Args:
        model: Network
        inputs: 1-D signal of ``T*i`` samples

    Returns:
        (logits ``[T, K]``, taps with ``[C, L]`` maps)
    """
    x = _as_tensor(model, inputs)
    if x.dim() != 1:
        raise ShapeError(f"Expected a 1-D window, got shape {tuple(x.shape)}")
    logits, taps = model(x.unsqueeze(0))
    return logits[0], taps.sample(0)


def segment_length(sample_rate: float, frequency: Union[float, str, Fraction]) -> int:
    """Samples per output label, S / e'.

    Raises:
        ConfigError: If S / e' is not a whole number
    """
    freq = Fraction(frequency).limit_denominator(1_000_000)
    if freq <= 0:
        raise ConfigError(f"Segmentation frequency must be positive, got {frequency}")
    length = Fraction(sample_rate).limit_denominator(1_000_000) / freq
    if length.denominator != 1:
        raise ConfigError(
            f"{sample_rate} Hz / {frequency} labels per second is not a whole sample count",
            {"sample_rate": sample_rate, "frequency": str(frequency)},
        )
    return int(length)


@torch.no_grad()
def predict_at_frequency(
    model: SegmentationNet,
    record: SignalRecord,
    frequency: Union[float, str, Fraction],
) -> np.ndarray:
    """Stage a record at an arbitrary segmentation frequency.

    The signal is zero-padded to a length the network accepts, the per-sample
    scores of the real samples are averaged over consecutive segments of
    ``S / e'`` samples (the last one may be shorter) and argmaxed.

    Args:
        model: Trained network
        record: Signal at the rate the network was trained on
        frequency: Labels per second e' (e.g. ``"1/20"``)

    Returns:
        ``ceil(e' * tau)`` class indices

    Raises:
        ConfigError: If S / e' is not integral
    """
    seg = segment_length(record.sample_rate, frequency)
    n = len(record.samples)
    n_labels = math.ceil(n / seg)
    if n_labels == 0:
        return np.zeros(0, dtype=np.int64)

    block = math.lcm(model.config.total_pool, seg)
    padded = np.zeros(math.ceil(n / block) * block)
    padded[:n] = record.samples

    was_training = model.training
    model.eval()
    try:
        scores, _ = model.dense_scores(_as_tensor(model, padded).unsqueeze(0))
    finally:
        model.train(was_training)

    dense = scores[0, :, :n].double().cpu().numpy()
    sums = np.zeros((dense.shape[0], n_labels * seg))
    sums[:, :n] = dense
    counts = np.full(n_labels, seg, dtype=np.float64)
    counts[-1] = n - (n_labels - 1) * seg
    means = sums.reshape(dense.shape[0], n_labels, seg).sum(axis=-1) / counts
    return means.argmax(axis=0).astype(np.int64)


def receptive_field_radius(config: ModelConfig) -> int:
    """Upper bound on how far, in input samples, a perturbation can reach.

    An input sample x can only influence per-sample scores within
    ``[x - r, x + r]``; epoch logits are means of those scores.
    """
    k, d = config.kernel_size, config.dilation
    radius, jump = 0, 1
    per_level: List[Tuple[int, int]] = []

    for pool in config.pool_sizes:
        radius += 2 * d * (k - 1) // 2 * jump
        per_level.append((radius, jump))
        jump *= pool

    radius += 2 * d * (k - 1) // 2 * jump

    for pool, (skip_radius, skip_jump) in zip(reversed(config.pool_sizes), reversed(per_level)):
        jump //= pool
        radius += (pool - 1) * jump
        radius += (k - 1) // 2 * jump
        radius = max(radius, skip_radius)
        radius += 2 * (k - 1) // 2 * jump
    return radius


def receptive_field_epochs(config: ModelConfig) -> int:
    """Number of neighbouring epochs on each side a perturbation can reach."""
    return math.ceil(receptive_field_radius(config) / config.samples_per_epoch)


def tap_shapes(config: ModelConfig, n_epochs: int) -> List[Tuple[int, int]]:
    """(channels, length) of every tap for a window of `n_epochs` epochs."""
    length = n_epochs * config.samples_per_epoch
    shapes = []
    for filters, pool in zip(config.filters_per_stage, config.pool_sizes):
        shapes.append((filters, length))
        length //= pool
    shapes.append((config.bottleneck_channels, length))
    for filters, pool in zip(reversed(config.filters_per_stage), reversed(config.pool_sizes)):
        length *= pool
        shapes.append((filters, length))
    return shapes


def same_architecture(a: ModelConfig, b: ModelConfig) -> bool:
    """Whether two configs build networks with identical tap layouts."""
    return a.model_dump() == b.model_dump()


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    """Number of scalar parameters."""
    params: Sequence[torch.Tensor] = list(model.parameters())
    return sum(p.numel() for p in params if p.requires_grad or not trainable_only)
