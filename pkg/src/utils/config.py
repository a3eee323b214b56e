"""
Configuration Manager
====================

Dataclass sections for every component and a manager that loads, validates
and saves them as one JSON document.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar, Union

from src.core.exceptions import ConfigError

T = TypeVar("T")

LORA_TARGETS = ("query", "key", "value", "output")
SIM_KINDS = ("cosine", "dot")
TEXTURES = ("standard", "shifted")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass
class EncoderConfig:
    """Frozen patch-token encoder."""
    patch: int = 8
    dim: int = 64
    depth: int = 4
    heads: int = 4
    seed: int = 0
    image_size: int = 64  # grid of the stored positional table
    in_channels: int = 1
    mlp_ratio: int = 2

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    def validate(self) -> None:
        _require(self.patch >= 1, f"encoder.patch must be >= 1, got {self.patch}")
        _require(self.depth >= 1, f"encoder.depth must be >= 1, got {self.depth}")
        _require(self.heads >= 1 and self.dim >= 1, "encoder.dim and encoder.heads must be >= 1")
        _require(self.dim % self.heads == 0,
                 f"encoder.dim={self.dim} is not divisible by encoder.heads={self.heads}")
        _require(self.image_size % self.patch == 0,
                 f"encoder.image_size={self.image_size} is not divisible by encoder.patch={self.patch}")
        _require(self.in_channels >= 1 and self.mlp_ratio >= 1,
                 "encoder.in_channels and encoder.mlp_ratio must be >= 1")


@dataclass
class LoraConfig:
    """Low-rank adapters on encoder attention projections."""
    rank: int = 4
    scale: float = 2.0
    targets: List[str] = field(default_factory=lambda: ["query", "value"])

    def validate(self) -> None:
        _require(self.rank >= 1, f"lora.rank must be >= 1, got {self.rank}")
        _require(self.scale > 0 and math.isfinite(self.scale), f"lora.scale must be positive, got {self.scale}")
        _require(len(self.targets) > 0, "lora.targets must not be empty")
        unknown = [t for t in self.targets if t not in LORA_TARGETS]
        _require(not unknown, f"unknown lora targets {unknown}; choose from {list(LORA_TARGETS)}")


@dataclass
class TokenBookConfig:
    """Prototype bank turning tokens into a guide mask."""
    k: int = 16
    temperature: float = 1.0
    sim_kind: str = "cosine"

    def validate(self) -> None:
        _require(self.k >= 1, f"tokenbook.k must be >= 1, got {self.k}")
        _require(self.temperature > 0, f"tokenbook.temperature must be > 0, got {self.temperature}")
        _require(self.sim_kind in SIM_KINDS, f"tokenbook.sim_kind must be one of {list(SIM_KINDS)}")


@dataclass
class UNetConfig:
    """Gated UNet backbone."""
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 3
    gate_stages: Optional[List[int]] = None  # None gates every encoder stage

    def stages(self) -> List[int]:
        return list(range(self.depth)) if self.gate_stages is None else sorted(self.gate_stages)

    def validate(self) -> None:
        _require(self.depth >= 1, f"unet.depth must be >= 1, got {self.depth}")
        _require(self.base_channels >= 1, f"unet.base_channels must be >= 1, got {self.base_channels}")
        _require(self.in_channels >= 1, f"unet.in_channels must be >= 1, got {self.in_channels}")
        if self.gate_stages is not None:
            bad = [s for s in self.gate_stages if not 0 <= s < self.depth]
            _require(not bad, f"unet.gate_stages {bad} outside 0..{self.depth - 1}")
            _require(len(set(self.gate_stages)) == len(self.gate_stages), "unet.gate_stages has duplicates")


@dataclass
class LossConfig:
    """Composite objective weights."""
    lambda_guide: float = 0.5
    seg_dice_weight: float = 1.0
    seg_bce_weight: float = 1.0
    hinge_enabled: bool = False
    hinge_margin: float = 0.2
    band_radius: int = 2
    eps: float = 1e-6

    def validate(self) -> None:
        for name in ("lambda_guide", "seg_dice_weight", "seg_bce_weight"):
            value = getattr(self, name)
            _require(math.isfinite(value) and value >= 0, f"loss.{name} must be finite and >= 0, got {value}")
        _require(0 < self.hinge_margin <= 1, f"loss.hinge_margin must be in (0, 1], got {self.hinge_margin}")
        _require(self.band_radius >= 1, f"loss.band_radius must be >= 1, got {self.band_radius}")
        _require(self.eps > 0, f"loss.eps must be > 0, got {self.eps}")


@dataclass
class SynthConfig:
    """Synthetic dataset generator. Out-of-range values are clamped at generation time."""
    size: int = 64
    n_samples: int = 200
    contrast: float = 0.25
    noise_sigma: float = 0.1
    blob_complexity: int = 4
    area_frac: List[float] = field(default_factory=lambda: [0.05, 0.35])
    seed: int = 0
    texture: str = "standard"

    def validate(self) -> None:
        _require(self.size >= 4, f"synth.size must be >= 4, got {self.size}")
        _require(self.n_samples >= 1, f"synth.n_samples must be >= 1, got {self.n_samples}")
        _require(len(self.area_frac) == 2, "synth.area_frac must be [low, high]")
        _require(self.texture in TEXTURES, f"synth.texture must be one of {list(TEXTURES)}")


@dataclass
class TrainConfig:
    """Optimization recipe."""
    lr_main: float = 1e-4
    lr_lora: float = 5e-4
    batch: int = 4
    epochs: int = 30
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    train_guide: bool = True
    show_progress: bool = False

    def validate(self) -> None:
        _require(self.lr_main > 0 and self.lr_lora > 0, "train learning rates must be positive")
        _require(self.batch >= 1, f"train.batch must be >= 1, got {self.batch}")
        _require(self.epochs >= 1, f"train.epochs must be >= 1, got {self.epochs}")
        _require(self.weight_decay >= 0, f"train.weight_decay must be >= 0, got {self.weight_decay}")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "train.beta1/beta2 must be in [0, 1)")
        _require(self.eps > 0, f"train.eps must be > 0, got {self.eps}")
        _require(len(self.seeds) >= 1, "train.seeds must not be empty")


SECTIONS: Dict[str, Type] = {
    "encoder": EncoderConfig,
    "lora": LoraConfig,
    "tokenbook": TokenBookConfig,
    "unet": UNetConfig,
    "loss": LossConfig,
    "synth": SynthConfig,
    "train": TrainConfig,
}


def build_section(cls: Type[T], data: Dict[str, Any], section: str) -> T:
    """Instantiate a section dataclass, rejecting keys it does not define."""
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section '{section}': {unknown}")
    return cls(**data)


class ConfigManager:
    """Holds one instance of every configuration section."""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        self.logger = logging.getLogger(__name__)
        self.config_file = Path(config_file) if config_file else None

        self.encoder = EncoderConfig()
        self.lora = LoraConfig()
        self.tokenbook = TokenBookConfig()
        self.unet = UNetConfig()
        self.loss = LossConfig()
        self.synth = SynthConfig()
        self.train = TrainConfig()

        if self.config_file is not None:
            self.load_config(self.config_file)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConfigManager":
        manager = cls()
        manager.update_from_dict(data)
        return manager

    def update_from_dict(self, data: Dict[str, Any]) -> None:
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown configuration sections: {unknown}")
        for name, section_data in data.items():
            setattr(self, name, build_section(SECTIONS[name], section_data, name))
        self.validate()

    def load_config(self, path: Union[str, Path]) -> None:
        """Load sections from a JSON file; sections absent from the file keep their defaults."""
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        self.update_from_dict(data)
        self.config_file = path
        self.logger.info(f"Configuration loaded from {path}")

    def save_config(self, path: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path) if path else self.config_file
        if target is None:
            raise ConfigError("no config file path given")
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=4, ensure_ascii=False)
        self.logger.info(f"Configuration saved to {target}")
        return target

    def override(self, section: str, **values: Any) -> None:
        """Apply explicit values (e.g. CLI flags) on top of a section; None means 'not given'."""
        current = getattr(self, section)
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return
        merged = asdict(current)
        merged.update(given)
        setattr(self, section, build_section(SECTIONS[section], merged, section))
        self.logger.debug(f"Overrode {section}: {given}")
        self.validate()

    def validate(self) -> None:
        for name in SECTIONS:
            getattr(self, name).validate()
        _require(self.lora.rank <= self.encoder.dim,
                 f"lora.rank={self.lora.rank} exceeds encoder.dim={self.encoder.dim}")

    def to_dict(self) -> Dict[str, Any]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}
