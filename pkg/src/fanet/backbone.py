"""Hierarchical four-stage encoder built from adaptive feature enhancement blocks.

Stage layout: a 5x5 stride-4 stem, then four stages of AFE blocks with a 3x3
stride-2 downsampling convolution between stages, producing feature maps at
1/4, 1/8, 1/16 and 1/32 of the input resolution.

Each AFE block normalizes its input, applies a depthwise convolutional
embedding with skip (CE), squeezes channels to half, runs two parallel token
mixers on the squeezed features, fuses them back to full width through a 1x1
projection added residually, and finishes with a ConvMLP on a second residual
path. The mixers are:

* SCM: a depthwise 7x7 convolution that widens the receptive field.
* FRM: splits the features into a high-frequency part (input minus its
  smoothed-and-restored copy) and a low-frequency part (input times the
  smoothed copy), refines each with a depthwise 3x3, concatenates and
  projects back.

All three mixer ingredients can be toggled independently for ablations; with
everything off the block degenerates to the LayerNorm + ConvMLP baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import Rng
from .tensor import (
    ConvSpec,
    Tensor,
    add,
    bilinear_resize,
    concat_channels,
    conv2d,
    gelu,
    layer_norm,
    mul,
    sub,
)

LAYER_NORM_EPS = 1e-6
INIT_STD = 0.02


@dataclass
class FANetConfig:
    """Everything needed to build the encoder deterministically."""

    stage_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    stage_depths: tuple[int, int, int, int] = (1, 1, 2, 1)
    mlp_ratio: int = 4
    scm_enabled: bool = True
    frm_high_freq: bool = True
    frm_low_freq: bool = True
    num_classes: int = 5
    in_channels: int = 3

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ConfigError("FANetConfig: exactly four stages are required")
        for c in self.stage_channels:
            if c <= 0 or c % 2 != 0:
                raise ConfigError(
                    f"FANetConfig: stage width {c} must be positive and even "
                    "(the block squeezes channels to half)"
                )
        for d in self.stage_depths:
            if d < 1:
                raise ConfigError("FANetConfig: stage depths must be >= 1")
        if self.mlp_ratio < 1:
            raise ConfigError("FANetConfig: mlp_ratio must be >= 1")
        if self.num_classes < 1:
            raise ConfigError("FANetConfig: num_classes must be positive")
        if self.in_channels < 1:
            raise ConfigError("FANetConfig: in_channels must be positive")

    @property
    def frm_enabled(self) -> bool:
        return self.frm_high_freq or self.frm_low_freq


class LayerNormParams:
    """Per-channel affine parameters for channelwise layer normalization."""

    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, LAYER_NORM_EPS)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


def _conv_params(prefix: str, spec: ConvSpec):
    yield f"{prefix}.weight", spec.weight
    if spec.bias is not None:
        yield f"{prefix}.bias", spec.bias


class FRMState:
    """Parameters of the frequency-separating refinement mixer.

    Operates at the squeezed width ``channels``. ``down`` smooths and halves
    the spatial extent; ``dw_r``/``dw_s`` refine the two branches; ``proj``
    mixes the concatenated branches back to ``channels``.
    """

    def __init__(self, channels: int, high_freq: bool, low_freq: bool, rng: Rng, dtype=np.float32):
        if not (high_freq or low_freq):
            raise ConfigError("FRM requires at least one of the frequency branches")
        self.high_freq = high_freq
        self.low_freq = low_freq
        self.down = ConvSpec.create(
            channels, channels, 3, stride=2, padding=1, groups=channels, rng=rng, dtype=dtype
        )
        self.dw_r = (
            ConvSpec.create(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
            if high_freq
            else None
        )
        self.dw_s = (
            ConvSpec.create(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
            if low_freq
            else None
        )
        branches = int(high_freq) + int(low_freq)
        self.proj = ConvSpec.create(branches * channels, channels, 1, rng=rng, dtype=dtype)

    def named_params(self, prefix: str):
        yield from _conv_params(f"{prefix}.down", self.down)
        if self.dw_r is not None:
            yield from _conv_params(f"{prefix}.dw_r", self.dw_r)
        if self.dw_s is not None:
            yield from _conv_params(f"{prefix}.dw_s", self.dw_s)
        yield from _conv_params(f"{prefix}.proj", self.proj)

    def forward(self, x: Tensor, capture: dict | None = None) -> Tensor:
        n, c, h, w = x.shape
        smoothed_small = conv2d(x, self.down)
        smoothed = bilinear_resize(smoothed_small, h, w)
        branches = []
        detail = blobs = None
        if self.high_freq:
            detail = sub(x, smoothed)
            branches.append(conv2d(detail, self.dw_r))
        if self.low_freq:
            blobs = mul(x, smoothed)
            branches.append(conv2d(blobs, self.dw_s))
        mixed = concat_channels(branches) if len(branches) > 1 else branches[0]
        out = conv2d(mixed, self.proj)
        if capture is not None:
            capture["f"] = x.data.copy()
            if detail is not None:
                capture["r"] = detail.data.copy()
            if blobs is not None:
                capture["s"] = blobs.data.copy()
            capture["fbar"] = out.data.copy()
        return out


class AFEBlock:
    """One adaptive feature enhancement block at width ``channels``."""

    def __init__(self, channels: int, config: FANetConfig, rng: Rng, dtype=np.float32):
        if channels % 2 != 0:
            raise ConfigError(f"AFE block width {channels} must be even")
        self.channels = channels
        half = channels // 2
        self.ln1 = LayerNormParams(channels, dtype)
        self.ce = ConvSpec.create(channels, channels, 3, padding=1, groups=channels, rng=rng, dtype=dtype)
        self.scm = None
        self.frm = None
        self.squeeze = None
        self.fuse = None
        n_branches = int(config.scm_enabled) + int(config.frm_enabled)
        if n_branches:
            self.squeeze = ConvSpec.create(channels, half, 1, rng=rng, dtype=dtype)
            if config.scm_enabled:
                self.scm = ConvSpec.create(half, half, 7, padding=3, groups=half, rng=rng, dtype=dtype)
            if config.frm_enabled:
                self.frm = FRMState(half, config.frm_high_freq, config.frm_low_freq, rng, dtype)
            # zero-initialized so the mixer residual starts as identity
            self.fuse = ConvSpec.create(n_branches * half, channels, 1, rng=rng, zero_weights=True, dtype=dtype)
        self.ln2 = LayerNormParams(channels, dtype)
        hidden = config.mlp_ratio * channels
        self.mlp_fc1 = ConvSpec.create(channels, hidden, 1, rng=rng, dtype=dtype)
        self.mlp_dw = ConvSpec.create(hidden, hidden, 3, padding=1, groups=hidden, rng=rng, dtype=dtype)
        self.mlp_fc2 = ConvSpec.create(hidden, channels, 1, rng=rng, zero_weights=True, dtype=dtype)

    def named_params(self, prefix: str):
        yield from self.ln1.named_params(f"{prefix}.ln1")
        yield from _conv_params(f"{prefix}.ce", self.ce)
        if self.squeeze is not None:
            yield from _conv_params(f"{prefix}.squeeze", self.squeeze)
        if self.scm is not None:
            yield from _conv_params(f"{prefix}.scm", self.scm)
        if self.frm is not None:
            yield from self.frm.named_params(f"{prefix}.frm")
        if self.fuse is not None:
            yield from _conv_params(f"{prefix}.fuse", self.fuse)
        yield from self.ln2.named_params(f"{prefix}.ln2")
        yield from _conv_params(f"{prefix}.mlp.fc1", self.mlp_fc1)
        yield from _conv_params(f"{prefix}.mlp.dw", self.mlp_dw)
        yield from _conv_params(f"{prefix}.mlp.fc2", self.mlp_fc2)

    def ce_forward(self, x: Tensor) -> Tensor:
        """Depthwise convolutional embedding with skip connection."""
        return add(x, conv2d(x, self.ce))

    def scm_forward(self, x: Tensor) -> Tensor:
        """Large-kernel spatial context on the squeezed features."""
        return conv2d(x, self.scm)

    def frm_forward(self, x: Tensor, capture: dict | None = None) -> Tensor:
        if self.frm is None:
            raise ConfigError("block has no FRM branch enabled")
        return self.frm.forward(x, capture)

    def forward(self, x: Tensor, frm_capture: dict | None = None) -> Tensor:
        y = self.ln1(x)
        y = self.ce_forward(y)
        if self.squeeze is not None:
            y = conv2d(y, self.squeeze)
            branches = []
            if self.scm is not None:
                branches.append(self.scm_forward(y))
            if self.frm is not None:
                branches.append(self.frm_forward(y, frm_capture))
            mixed = concat_channels(branches) if len(branches) > 1 else branches[0]
            x = add(x, conv2d(mixed, self.fuse))
        out = self.ln2(x)
        out = conv2d(out, self.mlp_fc1)
        out = gelu(out)
        out = conv2d(out, self.mlp_dw)
        out = gelu(out)
        out = conv2d(out, self.mlp_fc2)
        return add(x, out)


class FANetBackbone:
    """Stem, four AFE stages and the inter-stage downsampling convolutions."""

    def __init__(self, config: FANetConfig, rng: Rng | None = None, dtype=np.float32):
        self.config = config
        rng = rng if rng is not None else Rng(0)
        ch = config.stage_channels
        self.stem = ConvSpec.create(
            config.in_channels, ch[0], 5, stride=4, padding=2, rng=rng, dtype=dtype
        )
        self.downsamples = []
        self.stages = []
        for i in range(4):
            if i > 0:
                self.downsamples.append(
                    ConvSpec.create(ch[i - 1], ch[i], 3, stride=2, padding=1, rng=rng, dtype=dtype)
                )
            self.stages.append(
                [AFEBlock(ch[i], config, rng, dtype) for _ in range(config.stage_depths[i])]
            )

    def named_params(self, prefix: str = ""):
        dot = f"{prefix}." if prefix else ""
        yield from _conv_params(f"{dot}stem", self.stem)
        for i, stage in enumerate(self.stages, start=1):
            if i > 1:
                yield from _conv_params(f"{dot}down{i}", self.downsamples[i - 2])
            for j, block in enumerate(stage):
                yield from block.named_params(f"{dot}stage{i}.block{j}")

    def forward(
        self, img: Tensor, frm_capture_stage: int | None = None
    ) -> tuple[list[Tensor], dict | None]:
        """Run the encoder; returns ([S1, S2, S3, S4], captured FRM maps or None).

        ``frm_capture_stage`` is a 1-based stage index whose first FRM-bearing
        block records its intermediate maps.
        """
        n, c, h, w = img.shape
        if c != self.config.in_channels:
            raise DimensionError(
                f"backbone: channel axis has {c} channels, expected {self.config.in_channels}"
            )
        if h % 32 != 0:
            raise DimensionError(f"backbone: input height {h} not divisible by 32")
        if w % 32 != 0:
            raise DimensionError(f"backbone: input width {w} not divisible by 32")
        capture = None
        x = conv2d(img, self.stem)
        features = []
        for i, stage in enumerate(self.stages, start=1):
            if i > 1:
                x = conv2d(x, self.downsamples[i - 2])
            for j, block in enumerate(stage):
                want_capture = (
                    frm_capture_stage == i and j == 0 and block.frm is not None
                )
                if want_capture:
                    capture = {}
                    x = block.forward(x, frm_capture=capture)
                else:
                    x = block.forward(x)
            features.append(x)
        return features, capture
