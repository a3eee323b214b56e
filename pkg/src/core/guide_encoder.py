"""
Guide Encoder
=============

A frozen ViT-style patch-token encoder with optional low-rank adapters on
its attention projections.

The encoder is initialized once from ``EncoderConfig.seed`` and never
updated. Adapters add ``scale * (x @ A) @ B`` to a projection; ``B`` starts
at zero, so an adapted encoder initially reproduces the frozen one exactly.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.core import functional as F
from src.core.exceptions import ConfigError
from src.core.tensor import Module, Precision, Tensor, add_bias, concat
from src.utils.config import EncoderConfig, LoraConfig

PROJECTIONS = ("query", "key", "value", "output")


@dataclass
class TokenGrid:
    """Encoder output: ``ht * wt`` tokens of dimension ``dim``, row-major over the grid."""
    ht: int
    wt: int
    features: Tensor

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_tokens(self) -> int:
        return self.ht * self.wt


def lora_project(x: Tensor, weight: Tensor, a: Tensor, b: Tensor, scale: float) -> Tensor:
    """Low-rank adapted projection ``x W + scale * (x A) B``."""
    d_in, d_out = weight.shape
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(f"LoRA factors must be matrices, got A{a.shape} B{b.shape}")
    rank = a.shape[1]
    if rank > d_in:
        raise ConfigError(f"LoRA rank {rank} exceeds projection input dimension {d_in}")
    if a.shape[0] != d_in or b.shape != (rank, d_out):
        raise ConfigError(
            f"LoRA factors A{a.shape} B{b.shape} do not fit projection W{weight.shape}"
        )
    return x @ weight + ((x @ a) @ b) * scale


class LoraWeights(Module):
    """Trainable ``A [d, r]`` / ``B [r, d]`` pairs for each targeted projection of each block."""

    def __init__(self, encoder_cfg: EncoderConfig, lora_cfg: LoraConfig, seed: int,
                 precision: Precision = Precision.SINGLE):
        super().__init__()
        lora_cfg.validate()
        d, r = encoder_cfg.dim, lora_cfg.rank
        if r > d:
            raise ConfigError(f"LoRA rank {r} exceeds encoder dim {d}")
        self.encoder_cfg = encoder_cfg
        self.cfg = lora_cfg
        self.scale = float(lora_cfg.scale)

        rng = np.random.default_rng(seed)
        for block in range(encoder_cfg.depth):
            for target in lora_cfg.targets:
                self.register(f"block{block}.{target}.A",
                              rng.normal(0.0, 1.0 / np.sqrt(d), (d, r)), True, precision)
                self.register(f"block{block}.{target}.B", np.zeros((r, d)), True, precision)

    def factors(self, block: int, target: str) -> Optional[Tuple[Tensor, Tensor]]:
        a = self._params.get(f"block{block}.{target}.A")
        if a is None:
            return None
        return a, self._params[f"block{block}.{target}.B"]


class GuideEncoder(Module):
    """Pre-norm transformer over non-overlapping image patches, frozen after initialization."""

    def __init__(self, cfg: EncoderConfig, precision: Precision = Precision.SINGLE):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.logger = logging.getLogger(__name__)

        rng = np.random.default_rng(cfg.seed)
        d = cfg.dim
        patch_in = cfg.in_channels * cfg.patch * cfg.patch
        hidden = d * cfg.mlp_ratio

        def frozen(name: str, array: np.ndarray) -> Tensor:
            return self.register(name, array, False, precision)

        frozen("patch_embed.weight", rng.normal(0.0, 1.0 / np.sqrt(patch_in), (patch_in, d)))
        frozen("patch_embed.bias", np.zeros(d))
        frozen("pos_embed", rng.normal(0.0, 0.02, (cfg.grid * cfg.grid, d)))
        for i in range(cfg.depth):
            frozen(f"block{i}.norm1.gamma", np.ones(d))
            frozen(f"block{i}.norm1.beta", np.zeros(d))
            for proj in PROJECTIONS:
                frozen(f"block{i}.attn.{proj}.weight", rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)))
                frozen(f"block{i}.attn.{proj}.bias", np.zeros(d))
            frozen(f"block{i}.norm2.gamma", np.ones(d))
            frozen(f"block{i}.norm2.beta", np.zeros(d))
            frozen(f"block{i}.mlp.fc1.weight", rng.normal(0.0, 1.0 / np.sqrt(d), (d, hidden)))
            frozen(f"block{i}.mlp.fc1.bias", np.zeros(hidden))
            frozen(f"block{i}.mlp.fc2.weight", rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, d)))
            frozen(f"block{i}.mlp.fc2.bias", np.zeros(d))
        frozen("norm.gamma", np.ones(d))
        frozen("norm.beta", np.zeros(d))

    def p(self, name: str) -> Tensor:
        return self._params[name]

    # *** front end ***

    def _check_image(self, image: Tensor) -> Tuple[int, int]:
        if image.ndim != 3 or image.shape[0] != self.cfg.in_channels:
            raise ConfigError(
                f"encoder expects [{self.cfg.in_channels},H,W] images, got shape {image.shape}"
            )
        _, h, w = image.shape
        patch = self.cfg.patch
        if h % patch or w % patch:
            raise ConfigError(f"image size H={h}, W={w} is not divisible by patch={patch}")
        return h // patch, w // patch

    def positional(self, ht: int, wt: int) -> Tensor:
        """Positional table for an ``ht x wt`` grid, resized from the stored grid when needed."""
        g = self.cfg.grid
        pos = self.p("pos_embed")
        if (ht, wt) == (g, g):
            return pos
        grid = pos.reshape(g, g, self.cfg.dim).transpose(2, 0, 1)
        resized = F.bilinear_resize(grid, ht, wt)
        return resized.transpose(1, 2, 0).reshape(ht * wt, self.cfg.dim)

    def patchify_embed(self, image: Tensor) -> TokenGrid:
        ht, wt = self._check_image(image)
        c, patch = self.cfg.in_channels, self.cfg.patch
        patches = (image.reshape(c, ht, patch, wt, patch)
                   .transpose(1, 3, 0, 2, 4)
                   .reshape(ht * wt, c * patch * patch))
        tokens = F.linear(patches, self.p("patch_embed.weight"), self.p("patch_embed.bias"))
        return TokenGrid(ht, wt, tokens + self.positional(ht, wt))

    # *** transformer blocks ***

    def _project(self, x: Tensor, block: int, proj: str, lora: Optional[LoraWeights]) -> Tensor:
        weight = self.p(f"block{block}.attn.{proj}.weight")
        bias = self.p(f"block{block}.attn.{proj}.bias")
        factors = lora.factors(block, proj) if lora is not None else None
        if factors is None:
            return F.linear(x, weight, bias)
        return add_bias(lora_project(x, weight, factors[0], factors[1], lora.scale), bias)

    def _attention(self, x: Tensor, block: int, lora: Optional[LoraWeights]) -> Tensor:
        q = self._project(x, block, "query", lora)
        k = self._project(x, block, "key", lora)
        v = self._project(x, block, "value", lora)
        heads = self.cfg.heads
        dh = self.cfg.dim // heads
        if heads == 1:
            mixed = F.attention(q, k, v)
        else:
            parts = [
                F.attention(q[:, h * dh:(h + 1) * dh], k[:, h * dh:(h + 1) * dh], v[:, h * dh:(h + 1) * dh])
                for h in range(heads)
            ]
            mixed = concat(parts, axis=1)
        return self._project(mixed, block, "output", lora)

    def _mlp(self, x: Tensor, block: int) -> Tensor:
        h = F.gelu(F.linear(x, self.p(f"block{block}.mlp.fc1.weight"), self.p(f"block{block}.mlp.fc1.bias")))
        return F.linear(h, self.p(f"block{block}.mlp.fc2.weight"), self.p(f"block{block}.mlp.fc2.bias"))

    def block(self, x: Tensor, index: int, lora: Optional[LoraWeights] = None) -> Tensor:
        h = F.layer_norm(x, self.p(f"block{index}.norm1.gamma"), self.p(f"block{index}.norm1.beta"))
        x = x + self._attention(h, index, lora)
        h = F.layer_norm(x, self.p(f"block{index}.norm2.gamma"), self.p(f"block{index}.norm2.beta"))
        return x + self._mlp(h, index)

    def encode(self, image: Tensor, lora: Optional[LoraWeights] = None) -> TokenGrid:
        if lora is not None:
            self._check_lora(lora)
        grid = self.patchify_embed(image)
        x = grid.features
        for i in range(self.cfg.depth):
            x = self.block(x, i, lora)
        x = F.layer_norm(x, self.p("norm.gamma"), self.p("norm.beta"))
        return TokenGrid(grid.ht, grid.wt, x)

    def _check_lora(self, lora: LoraWeights) -> None:
        if lora.encoder_cfg.dim != self.cfg.dim or lora.encoder_cfg.depth != self.cfg.depth:
            raise ConfigError(
                f"LoRA weights built for dim={lora.encoder_cfg.dim}, depth={lora.encoder_cfg.depth}; "
                f"encoder has dim={self.cfg.dim}, depth={self.cfg.depth}"
            )
        for name, tensor in lora.named_parameters().items():
            expected = (self.cfg.dim, lora.cfg.rank) if name.endswith(".A") else (lora.cfg.rank, self.cfg.dim)
            if tensor.shape != expected:
                raise ConfigError(f"LoRA parameter '{name}' has shape {tensor.shape}, expected {expected}")
