"""
Gated Segmentation Network
==========================

Compact UNet whose encoder-stage outputs are modulated by a guide mask:

    f  ->  f * (1 + beta_s * resize(G))

One trainable ``beta_s`` per gated stage starts at zero, so an untrained
gated network computes exactly what the plain UNet computes.
"""

import logging
from typing import List, Optional, Union

import numpy as np

from src.core import functional as F
from src.core.exceptions import ConfigError
from src.core.tensor import Module, Precision, Tensor, channel_mul, concat
from src.core.tokenbook import GuideMask
from src.utils.config import UNetConfig


def gate(features: Tensor, guide: Union[GuideMask, Tensor], beta: Tensor) -> Tensor:
    """Residual multiplicative gate, broadcast over channels."""
    guide_map = guide.as_map() if isinstance(guide, GuideMask) else guide
    if guide_map.ndim == 2:
        guide_map = guide_map.reshape(1, *guide_map.shape)
    _, h, w = features.shape
    resized = F.bilinear_resize(guide_map, h, w)
    factor = resized * beta + 1.0
    return channel_mul(features, factor)


def probabilities(logits: Union[Tensor, np.ndarray]) -> np.ndarray:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    e = np.exp(-np.abs(data))
    return np.where(data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def predict(logits: Union[Tensor, np.ndarray], threshold: float = 0.5) -> np.ndarray:
    """Binary ``[H, W]`` mask: 1 where sigmoid(logit) >= threshold."""
    probs = probabilities(logits)
    if probs.ndim == 3:
        probs = probs[0]
    return (probs >= threshold).astype(np.uint8)


class GateParams(Module):
    """One scalar ``beta`` per gated encoder stage."""

    def __init__(self, stages: List[int], precision: Precision = Precision.SINGLE):
        super().__init__()
        self.stages = list(stages)
        for s in self.stages:
            self.register(f"stage{s}.beta", np.zeros(1), True, precision)

    def beta(self, stage: int) -> Optional[Tensor]:
        return self._params.get(f"stage{stage}.beta")


class GatedUNet(Module):
    """
    UNet with double 3x3 conv + ReLU blocks, 2x max-pool down, 2x bilinear up
    and skip concatenation. Gates are held in a separate :class:`GateParams`.
    """

    def __init__(self, cfg: UNetConfig, seed: int, precision: Precision = Precision.SINGLE):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.logger = logging.getLogger(__name__)
        self.gates = GateParams(cfg.stages(), precision)

        rng = np.random.default_rng(seed)
        widths = [cfg.base_channels * 2 ** s for s in range(cfg.depth + 1)]
        self.widths = widths

        in_ch = cfg.in_channels
        for s in range(cfg.depth):
            self._double_conv(f"enc{s}", in_ch, widths[s], rng, precision)
            in_ch = widths[s]
        self._double_conv("bottleneck", in_ch, widths[cfg.depth], rng, precision)
        for s in reversed(range(cfg.depth)):
            self._double_conv(f"dec{s}", widths[s + 1] + widths[s], widths[s], rng, precision)
        self._conv("head", widths[0], 1, 1, rng, precision)

    def _conv(self, name: str, c_in: int, c_out: int, k: int, rng: np.random.Generator,
              precision: Precision) -> None:
        fan_in = c_in * k * k
        self.register(f"{name}.weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, k, k)),
                      True, precision)
        self.register(f"{name}.bias", np.zeros(c_out), True, precision)

    def _double_conv(self, name: str, c_in: int, c_out: int, rng: np.random.Generator,
                     precision: Precision) -> None:
        self._conv(f"{name}.conv1", c_in, c_out, 3, rng, precision)
        self._conv(f"{name}.conv2", c_out, c_out, 3, rng, precision)

    def _apply_conv(self, x: Tensor, name: str, pad: int) -> Tensor:
        return F.conv2d(x, self._params[f"{name}.weight"], self._params[f"{name}.bias"], pad=pad)

    def _block(self, x: Tensor, name: str) -> Tensor:
        x = F.relu(self._apply_conv(x, f"{name}.conv1", 1))
        return F.relu(self._apply_conv(x, f"{name}.conv2", 1))

    def check_input(self, image: Tensor) -> None:
        if image.ndim != 3 or image.shape[0] != self.cfg.in_channels:
            raise ConfigError(f"segnet expects [{self.cfg.in_channels},H,W] input, got {image.shape}")
        _, h, w = image.shape
        step = 2 ** self.cfg.depth
        if h % step or w % step:
            raise ConfigError(f"input size {h}x{w} is not divisible by 2^depth={step}")

    def forward(self, image: Tensor, guide: Optional[GuideMask] = None) -> Tensor:
        """Per-pixel logits ``[1, H, W]``; ``guide=None`` runs the ungated backbone."""
        self.check_input(image)
        skips = []
        x = image
        for s in range(self.cfg.depth):
            x = self._block(x, f"enc{s}")
            beta = self.gates.beta(s)
            if guide is not None and beta is not None:
                x = gate(x, guide, beta)
            skips.append(x)
            x = F.max_pool2d(x)
        x = self._block(x, "bottleneck")
        for s in reversed(range(self.cfg.depth)):
            skip = skips[s]
            x = F.bilinear_resize(x, skip.shape[1], skip.shape[2])
            x = self._block(concat([x, skip], axis=0), f"dec{s}")
        return self._apply_conv(x, "head", 0)
