"""
Synthetic segmentation data
===========================

Procedural binary-segmentation samples: one radially perturbed ellipse per
image on a smooth background texture, with a soft-edged intensity shift
inside the target and additive Gaussian noise.

Each sample is a pure function of ``(seed, SynthConfig)``. Shape, texture
and noise draw from independent streams, so the ``shifted`` texture variant
of a seed has exactly the same mask as the ``standard`` one.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from src.utils.config import SynthConfig

logger = logging.getLogger(__name__)

MAX_SHAPE_ATTEMPTS = 32
BISECTION_STEPS = 40
SAMPLE_SEED_STRIDE = 1_000_000

# (background level, texture amplitude, texture smoothing as a fraction of size, gradient strength)
TEXTURE_PROFILES = {
    "standard": (0.40, 0.10, 1 / 8, 0.0),
    "shifted": (0.50, 0.18, 1 / 16, 0.12),
}


@dataclass
class SegSample:
    """Image ``float32 [1, H, W]`` in [0, 1] and binary mask ``uint8 [H, W]``."""
    image: np.ndarray
    mask: np.ndarray
    sample_id: int = 0

    @property
    def size(self) -> Tuple[int, int]:
        return int(self.mask.shape[0]), int(self.mask.shape[1])

    @property
    def area_fraction(self) -> float:
        return float(self.mask.mean())


def clamp_config(cfg: SynthConfig) -> SynthConfig:
    """Return a copy with every generation parameter inside its usable range."""
    changes = {}
    if not 0.0 <= cfg.contrast <= 1.0:
        changes["contrast"] = float(np.clip(cfg.contrast, 0.0, 1.0))
    if cfg.noise_sigma < 0:
        changes["noise_sigma"] = 0.0
    if cfg.blob_complexity < 0:
        changes["blob_complexity"] = 0
    lo, hi = cfg.area_frac
    c_lo = float(np.clip(min(lo, hi), 0.01, 0.9))
    c_hi = float(np.clip(max(lo, hi), c_lo, 0.9))
    if (c_lo, c_hi) != (lo, hi):
        changes["area_frac"] = [c_lo, c_hi]
    for name, value in changes.items():
        logger.warning(f"synth.{name}={getattr(cfg, name)} out of range, clamped to {value}")
    return replace(cfg, **changes) if changes else cfg


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(mask, structure=ndimage.generate_binary_structure(2, 1))
    if count <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def _blob_mask(size: int, area_target: float, rng: np.random.Generator,
               complexity: int) -> np.ndarray:
    """Radially perturbed ellipse scaled by bisection to roughly ``area_target`` of the image."""
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    ratio = rng.uniform(0.6, 1.0)
    angle = rng.uniform(0.0, np.pi)
    orders = np.arange(2, complexity + 2)
    amps = rng.uniform(0.0, 1.0, size=complexity) * 0.25 / orders
    if amps.sum() > 0.5:
        amps *= 0.5 / amps.sum()
    phases = rng.uniform(0.0, 2 * np.pi, size=complexity)

    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords - cy, coords - cx, indexing="ij")
    u = xx * np.cos(angle) + yy * np.sin(angle)
    v = (-xx * np.sin(angle) + yy * np.cos(angle)) / ratio
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    radius = 1.0 + np.sum(amps[:, None, None] * np.cos(orders[:, None, None] * theta + phases[:, None, None]),
                          axis=0)
    normalized = rho / radius

    lo, hi = 0.0, 3.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if np.mean(normalized <= mid) < area_target:
            lo = mid
        else:
            hi = mid
    return _largest_component(normalized <= hi)


def _texture(size: int, profile: str, rng: np.random.Generator) -> np.ndarray:
    level, amplitude, smooth, gradient = TEXTURE_PROFILES[profile]
    field = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=max(size * smooth, 0.5), mode="wrap")
    spread = field.std()
    if spread > 0:
        field = field / spread
    background = level + amplitude * field
    if gradient:
        direction = rng.uniform(0.0, 2 * np.pi)
        coords = np.arange(size) / max(size - 1, 1) - 0.5
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        background = background + gradient * (np.cos(direction) * xx + np.sin(direction) * yy)
    return background


def generate_sample(seed: int, cfg: SynthConfig, sample_id: Optional[int] = None) -> SegSample:
    cfg = clamp_config(cfg)
    shape_seq, texture_seq, noise_seq = np.random.SeedSequence(seed).spawn(3)
    shape_rng = np.random.default_rng(shape_seq)
    lo, hi = cfg.area_frac
    margin = 0.1 * (hi - lo)

    mask = None
    for attempt in range(MAX_SHAPE_ATTEMPTS + 1):
        complexity = cfg.blob_complexity if attempt < MAX_SHAPE_ATTEMPTS else 0
        target = shape_rng.uniform(lo + margin, hi - margin)
        mask = _blob_mask(cfg.size, target, shape_rng, complexity)
        if lo <= mask.mean() <= hi:
            break
    if not lo <= mask.mean() <= hi:
        logger.warning(f"sample seed={seed}: area fraction {mask.mean():.3f} outside [{lo}, {hi}]")

    background = _texture(cfg.size, cfg.texture, np.random.default_rng(texture_seq))
    soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=1.0)
    noise = np.random.default_rng(noise_seq).normal(0.0, cfg.noise_sigma, size=mask.shape)
    image = np.clip(background + cfg.contrast * soft + noise, 0.0, 1.0)

    return SegSample(
        image=image.astype(np.float32)[None, :, :],
        mask=mask.astype(np.uint8),
        sample_id=seed if sample_id is None else sample_id,
    )


def sample_seed(base_seed: int, index: int) -> int:
    return base_seed * SAMPLE_SEED_STRIDE + index


def generate_dataset(cfg: SynthConfig) -> List[SegSample]:
    """``cfg.n_samples`` samples; sample ``i`` uses seed ``cfg.seed * 1e6 + i`` and id ``i``."""
    logger.info(f"Generating {cfg.n_samples} samples of {cfg.size}x{cfg.size} "
                f"(texture={cfg.texture}, contrast={cfg.contrast}, seed={cfg.seed})")
    return [generate_sample(sample_seed(cfg.seed, i), cfg, sample_id=i) for i in range(cfg.n_samples)]
