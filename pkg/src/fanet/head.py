"""Pyramid-pooling decoder over the four encoder stages, plus the loss.

A reduced UperNet-style design: pyramid pooling on the deepest features,
lateral 1x1 projections with top-down fusion, per-level smoothing, multi-scale
concatenation, a 3x3 fuse and a linear classifier, with a final bilinear x4
back to image resolution. No auxiliary heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .rng import Rng
from .tensor import (
    ConvSpec,
    Tensor,
    _accumulate,
    _make,
    add,
    adaptive_avg_pool,
    bilinear_resize,
    concat_channels,
    conv2d,
)
from .backbone import _conv_params


@dataclass
class HeadConfig:
    fpn_channels: int = 128
    ppm_bins: tuple[int, ...] = (1, 2, 3, 6)
    num_classes: int = 5
    ignore_index: int = 255

    def __post_init__(self):
        self.ppm_bins = tuple(int(b) for b in self.ppm_bins)
        if self.fpn_channels < 1:
            raise ConfigError("HeadConfig: fpn_channels must be positive")
        if not self.ppm_bins or any(
            b2 <= b1 for b1, b2 in zip(self.ppm_bins, self.ppm_bins[1:])
        ) or self.ppm_bins[0] < 1:
            raise ConfigError("HeadConfig: ppm_bins must be strictly increasing and >= 1")
        if self.num_classes < 2:
            raise ConfigError("HeadConfig: num_classes must be >= 2")


class UperNetHead:
    """Decoder from stride-4/8/16/32 features to per-pixel class logits."""

    def __init__(
        self,
        in_channels: tuple[int, int, int, int],
        config: HeadConfig,
        rng: Rng | None = None,
        dtype=np.float32,
    ):
        self.config = config
        self.in_channels = tuple(in_channels)
        rng = rng if rng is not None else Rng(0)
        fpn = config.fpn_channels
        self.ppm_convs = [
            ConvSpec.create(self.in_channels[3], fpn, 1, rng=rng, dtype=dtype)
            for _ in config.ppm_bins
        ]
        ppm_cat = self.in_channels[3] + len(config.ppm_bins) * fpn
        self.ppm_fuse = ConvSpec.create(ppm_cat, fpn, 3, padding=1, rng=rng, dtype=dtype)
        self.laterals = [
            ConvSpec.create(self.in_channels[i], fpn, 1, rng=rng, dtype=dtype) for i in range(3)
        ]
        self.level_convs = [
            ConvSpec.create(fpn, fpn, 3, padding=1, rng=rng, dtype=dtype) for _ in range(3)
        ]
        self.fuse = ConvSpec.create(4 * fpn, fpn, 3, padding=1, rng=rng, dtype=dtype)
        self.classifier = ConvSpec.create(fpn, config.num_classes, 1, rng=rng, dtype=dtype)

    def named_params(self, prefix: str = "head"):
        for b, spec in zip(self.config.ppm_bins, self.ppm_convs):
            yield from _conv_params(f"{prefix}.ppm.bin{b}", spec)
        yield from _conv_params(f"{prefix}.ppm.fuse", self.ppm_fuse)
        for i, spec in enumerate(self.laterals, start=1):
            yield from _conv_params(f"{prefix}.lateral{i}", spec)
        for i, spec in enumerate(self.level_convs, start=1):
            yield from _conv_params(f"{prefix}.level{i}", spec)
        yield from _conv_params(f"{prefix}.fuse", self.fuse)
        yield from _conv_params(f"{prefix}.classifier", self.classifier)

    def ppm_forward(self, s4: Tensor) -> Tensor:
        """Pool the deepest features at several bin sizes and fuse."""
        n, c, h, w = s4.shape
        pieces = [s4]
        for b, spec in zip(self.config.ppm_bins, self.ppm_convs):
            pooled = adaptive_avg_pool(s4, b, b)
            pieces.append(bilinear_resize(conv2d(pooled, spec), h, w))
        return conv2d(concat_channels(pieces), self.ppm_fuse)

    def forward(self, features: list[Tensor], out_h: int, out_w: int) -> Tensor:
        if len(features) != 4:
            raise DimensionError(f"head: expected 4 pyramid levels, got {len(features)}")
        for i, f in enumerate(features):
            if f.shape[1] != self.in_channels[i]:
                raise DimensionError(
                    f"head: level {i + 1} has {f.shape[1]} channels, expected {self.in_channels[i]}"
                )
            stride = 4 * (2**i)
            if f.shape[2] * stride != out_h or f.shape[3] * stride != out_w:
                raise DimensionError(
                    f"head: level {i + 1} spatial size {f.shape[2]}x{f.shape[3]} is not "
                    f"1/{stride} of the {out_h}x{out_w} input"
                )
        top = self.ppm_forward(features[3])
        levels = [None, None, None, top]
        for i in range(2, -1, -1):
            lateral = conv2d(features[i], self.laterals[i])
            upper = bilinear_resize(levels[i + 1], lateral.shape[2], lateral.shape[3])
            levels[i] = add(lateral, upper)
        for i in range(3):
            levels[i] = conv2d(levels[i], self.level_convs[i])
        target_h, target_w = features[0].shape[2], features[0].shape[3]
        gathered = [levels[0]] + [
            bilinear_resize(levels[i], target_h, target_w) for i in range(1, 4)
        ]
        fused = conv2d(concat_channels(gathered), self.fuse)
        logits = conv2d(fused, self.classifier)
        return bilinear_resize(logits, out_h, out_w)


def cross_entropy_loss(logits: Tensor, target: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean negative log softmax over non-ignored pixels.

    ``target`` holds integer class ids of shape (N, H, W); pixels equal to
    ``ignore_index`` contribute neither loss nor gradient. Returns a scalar
    tensor; if every pixel is ignored the loss is 0 with a zero gradient.
    """
    n, k, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise DimensionError(
            f"cross_entropy_loss: target shape {target.shape} != {(n, h, w)}"
        )
    valid = target != ignore_index
    labels = target[valid]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise ValidationError(
            f"cross_entropy_loss: class id {bad} outside [0, {k}) and not ignore_index"
        )
    count = int(valid.sum())
    if count == 0:
        def backward_empty(g):
            _accumulate(logits, np.zeros_like(logits.data))

        return _make(np.asarray(0.0, dtype=logits.dtype), (logits,), backward_empty)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    log_softmax = shifted - np.log(sum_exp)
    clamped = np.where(valid, target, 0)
    picked = np.take_along_axis(log_softmax, clamped[:, None], axis=1)[:, 0]
    loss = -(picked[valid].sum()) / count

    def backward(g):
        if not logits.requires_grad:
            return
        grad = exp / sum_exp
        ni, hi, wi = np.nonzero(valid)
        grad[ni, target[valid], hi, wi] -= 1.0
        grad *= valid[:, None].astype(grad.dtype) / count
        _accumulate(logits, grad * float(g))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def predict(logits: Tensor | np.ndarray) -> np.ndarray:
    """Per-pixel argmax with ties broken toward the lowest class id."""
    data = getattr(logits, "data", logits)
    return np.argmax(data, axis=1)
