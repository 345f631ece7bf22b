"""Full segmenter: encoder plus decoder, with named-parameter plumbing."""

from __future__ import annotations

import numpy as np

from .backbone import FANetBackbone, FANetConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ValidationError
from .head import HeadConfig, UperNetHead
from .rng import Rng
from .tensor import Tensor


class SegModel:
    def __init__(
        self,
        config: FANetConfig,
        head_config: HeadConfig | None = None,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.config = config
        self.head_config = head_config or HeadConfig(num_classes=config.num_classes)
        rng = Rng(seed, 0x494E4954)  # dedicated init stream
        self.backbone = FANetBackbone(config, rng, dtype)
        self.head = UperNetHead(config.stage_channels, self.head_config, rng, dtype)

    def named_params(self):
        yield from self.backbone.named_params()
        yield from self.head.named_params()

    def params(self):
        return [p for _, p in self.named_params()]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def forward(self, img: Tensor, frm_capture_stage: int | None = None):
        """Image to logits; optionally capture one stage's FRM maps."""
        features, capture = self.backbone.forward(img, frm_capture_stage)
        logits = self.head.forward(features, img.shape[2], img.shape[3])
        if frm_capture_stage is None:
            return logits
        return logits, capture

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_params()}

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValidationError(
                f"checkpoint does not match model: missing {missing[:4]}, unexpected {extra[:4]}"
            )
        for name, tensor in own.items():
            arr = state[name]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise ValidationError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, expected {tensor.shape}"
                )
            tensor.data = arr.astype(tensor.dtype)

    def load(self, path) -> None:
        self.load_state(load_checkpoint(path))
