"""
Guided segmentation pipeline
============================

Binds encoder, optional LoRA adapters, TokenBook and gated UNet into one
model with three operating modes:

    ungated-baseline  plain UNet, no encoder or guide
    guided-frozen     frozen encoder -> TokenBook guide -> gated UNet
    guided-lora       as guided-frozen with trainable low-rank adapters
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.exceptions import ConfigError, InputError
from src.core.gated_segnet import GatedUNet, probabilities
from src.core.guide_encoder import GuideEncoder, LoraWeights, TokenGrid
from src.core.objectives import LossBreakdown, total_loss
from src.core.tensor import Module, Precision, Tensor
from src.core.tokenbook import GuideMask, TokenBook
from src.utils.config import ConfigManager, LossConfig

# flip variants as (vertical, horizontal)
FLIPS: Tuple[Tuple[bool, bool], ...] = ((False, False), (False, True), (True, False), (True, True))


class Mode(Enum):
    BASELINE = "ungated-baseline"
    GUIDED = "guided-frozen"
    LORA = "guided-lora"

    @property
    def guided(self) -> bool:
        return self is not Mode.BASELINE

    @classmethod
    def parse(cls, value: str) -> "Mode":
        aliases = {"baseline": cls.BASELINE, "guided": cls.GUIDED}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            choices = sorted(list(aliases) + [m.value for m in cls])
            raise ConfigError(f"unknown mode '{value}'; choose from {choices}") from None


def flip_array(array: np.ndarray, flips: Tuple[bool, bool]) -> np.ndarray:
    """Flip the last two axes; the result is a fresh contiguous array."""
    vertical, horizontal = flips
    axes = tuple(a for a, on in ((-2, vertical), (-1, horizontal)) if on)
    return np.ascontiguousarray(np.flip(array, axis=axes)) if axes else array


@dataclass
class ParamGroup:
    name: str
    module: Module
    lr: float


class GuidedSegmenter:
    """Complete model for one mode and one seed."""

    def __init__(self, config: ConfigManager, mode: Mode, seed: int,
                 precision: Precision = Precision.SINGLE):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.mode = mode
        self.seed = seed
        self.precision = precision

        self.segnet = GatedUNet(config.unet, seed, precision)
        self.encoder: Optional[GuideEncoder] = None
        self.tokenbook: Optional[TokenBook] = None
        self.lora: Optional[LoraWeights] = None
        if mode.guided:
            self.encoder = GuideEncoder(config.encoder, precision)
            self.tokenbook = TokenBook(config.tokenbook, config.encoder.dim, seed + 1, precision)
        if mode is Mode.LORA:
            self.lora = LoraWeights(config.encoder, config.lora, seed + 2, precision)

    # *** parameter groups ***

    def groups(self) -> Dict[str, Module]:
        """Every parameter group, keyed by its checkpoint tag."""
        groups: Dict[str, Module] = {}
        if self.encoder is not None:
            groups["encoder"] = self.encoder
        if self.lora is not None:
            groups["lora"] = self.lora
        if self.tokenbook is not None:
            groups["tokenbook"] = self.tokenbook
        groups["segnet"] = self.segnet
        groups["gates"] = self.segnet.gates
        return groups

    @staticmethod
    def frozen_groups() -> List[str]:
        return ["encoder"]

    def optimizer_groups(self, train_guide: bool = True) -> List[ParamGroup]:
        train = self.config.train
        groups = [ParamGroup("segnet", self.segnet, train.lr_main)]
        if self.mode.guided and train_guide:
            groups.append(ParamGroup("gates", self.segnet.gates, train.lr_main))
            groups.append(ParamGroup("tokenbook", self.tokenbook, train.lr_main))
        if self.lora is not None:
            groups.append(ParamGroup("lora", self.lora, train.lr_lora))
        return groups

    def trainable_parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        for name, module in self.groups().items():
            if name not in self.frozen_groups():
                params.extend(module.trainable_parameters())
        return params

    def zero_grad(self) -> None:
        for module in self.groups().values():
            module.zero_grad()

    def to_precision(self, precision: Precision) -> None:
        for module in self.groups().values():
            module.to_precision(precision)
        self.precision = precision

    # *** forward ***

    def as_tensor(self, array: np.ndarray) -> Tensor:
        return Tensor(array, precision=self.precision)

    def check_resolution(self, h: int, w: int) -> None:
        step = 2 ** self.config.unet.depth
        if h % step or w % step:
            raise InputError(f"image size {h}x{w} is not divisible by 2^depth={step}")
        if self.mode.guided and (h % self.config.encoder.patch or w % self.config.encoder.patch):
            raise InputError(f"image size {h}x{w} is not divisible by patch={self.config.encoder.patch}")

    def tokens(self, image: Tensor) -> TokenGrid:
        if self.encoder is None:
            raise ConfigError("ungated-baseline model has no encoder")
        return self.encoder.encode(image, self.lora)

    def forward(self, image: Tensor, tokens: Optional[TokenGrid] = None) -> Tuple[Tensor, Optional[GuideMask]]:
        """Logits ``[1, H, W]`` and, in guided modes, the guide mask at image resolution."""
        if not self.mode.guided:
            return self.segnet.forward(image), None
        if tokens is None:
            tokens = self.tokens(image)
        _, h, w = image.shape
        guide = self.tokenbook.guide_mask(tokens, h, w)
        return self.segnet.forward(image, guide), guide

    def sample_loss(self, image: np.ndarray, mask: np.ndarray, loss_cfg: LossConfig,
                    tokens: Optional[TokenGrid] = None) -> LossBreakdown:
        logits, guide = self.forward(self.as_tensor(image), tokens)
        return total_loss(logits, guide, mask, loss_cfg)

    def predict_proba(self, image: np.ndarray, tta: bool = False) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """
        Foreground probabilities ``[H, W]`` and the guide ``[H, W]`` of the
        unflipped input. With ``tta`` the probabilities are averaged over the
        four flip variants before any thresholding.
        """
        variants = FLIPS if tta else FLIPS[:1]
        total = None
        guide_values = None
        for flips in variants:
            logits, guide = self.forward(self.as_tensor(flip_array(image, flips)))
            probs = flip_array(probabilities(logits)[0], flips)
            total = probs if total is None else total + probs
            if flips == FLIPS[0] and guide is not None:
                guide_values = guide.numpy().copy()
        return total / len(variants), guide_values

    def strip_lora(self) -> "GuidedSegmenter":
        """Equivalent guided-frozen model sharing this model's TokenBook and UNet values."""
        if self.mode is not Mode.LORA:
            raise ConfigError(f"model in mode {self.mode.value} has no LoRA group")
        frozen = GuidedSegmenter(self.config, Mode.GUIDED, self.seed, self.precision)
        for name in ("encoder", "tokenbook", "segnet", "gates"):
            frozen.groups()[name].load_state_arrays(self.groups()[name].state_arrays())
        return frozen
