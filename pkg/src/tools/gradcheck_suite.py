# -*- coding: utf-8 -*-
"""
Gradient Check Suite
====================

Runs the central-difference oracle over every operation on the trainable
path, in double precision with eps = 1e-5:

1. conv2d, attention, bilinear resize
2. TokenBook scores and guide mask
3. residual gate
4. Dice, pixel BCE, guide BCE and boundary hinge losses
5. LoRA projection
6. (full) the complete guided-lora training loss on one 16x16 sample
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from src.core import functional as F
from src.core.gated_segnet import gate
from src.core.gradcheck import DEFAULT_TOLERANCE, GradReport, grad_check
from src.core.guide_encoder import TokenGrid, lora_project
from src.core.objectives import boundary_hinge, dice_loss, guide_bce, pixel_bce
from src.core.pipeline import Mode
from src.core.tensor import Precision, Tensor
from src.core.tokenbook import TokenBook
from src.core.trainer import pipeline_grad_check
from src.utils.config import ConfigManager, TokenBookConfig

logger = logging.getLogger(__name__)

EPS = 1e-5
CheckFn = Callable[[np.random.Generator], GradReport]


def _param(rng: np.random.Generator, *shape: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), trainable=True, precision=Precision.DOUBLE)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(w * out)`` so every output entry has a distinct upstream gradient."""
    return (out * Tensor(weights, precision=Precision.DOUBLE)).sum()


def _binary_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[h // 4: 3 * h // 4, w // 4: 3 * w // 4] = 1
    mask ^= (rng.random((h, w)) < 0.1).astype(np.uint8)
    return mask


def check_conv2d(rng: np.random.Generator) -> GradReport:
    x, k, b = _param(rng, 2, 6, 5), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    w = rng.uniform(-1, 1, (3, 6, 5))
    return grad_check(lambda: _weighted(F.conv2d(x, k, b, pad=1), w), [x, k, b], EPS, "conv2d")


def check_attention(rng: np.random.Generator) -> GradReport:
    q, k, v = _param(rng, 4, 3), _param(rng, 4, 3), _param(rng, 4, 3)
    w = rng.uniform(-1, 1, (4, 3))
    return grad_check(lambda: _weighted(F.attention(q, k, v), w), [q, k, v], EPS, "attention")


def check_resize(rng: np.random.Generator) -> GradReport:
    x = _param(rng, 2, 3, 4)
    up, down = rng.uniform(-1, 1, (2, 7, 6)), rng.uniform(-1, 1, (2, 2, 3))
    return grad_check(
        lambda: _weighted(F.bilinear_resize(x, 7, 6), up) + _weighted(F.bilinear_resize(x, 2, 3), down),
        [x], EPS, "bilinear_resize",
    )


def _tokenbook(rng: np.random.Generator, dim: int) -> TokenBook:
    return TokenBook(TokenBookConfig(k=3), dim, int(rng.integers(1 << 16)), Precision.DOUBLE)


def check_tokenbook_scores(rng: np.random.Generator) -> GradReport:
    book = _tokenbook(rng, 4)
    tokens = _param(rng, 6, 4)
    w = rng.uniform(-1, 1, (2, 3))
    return grad_check(lambda: _weighted(book.token_scores(TokenGrid(2, 3, tokens)), w),
                      [book.prototypes, book.alphas, tokens], EPS, "tokenbook.scores")


def check_tokenbook_mask(rng: np.random.Generator) -> GradReport:
    book = _tokenbook(rng, 4)
    tokens = _param(rng, 4, 4)
    return grad_check(lambda: book.guide_mask(TokenGrid(2, 2, tokens), 8, 8).values.mean(),
                      [book.prototypes, book.alphas, tokens], EPS, "tokenbook.guide_mask")


def check_gate(rng: np.random.Generator) -> GradReport:
    features = _param(rng, 3, 4, 4)
    guide = _param(rng, 1, 2, 2, low=0.05, high=0.95)
    beta = _param(rng, 1)
    w = rng.uniform(-1, 1, (3, 4, 4))
    return grad_check(lambda: _weighted(gate(features, guide, beta), w), [features, guide, beta], EPS, "gate")


def check_dice(rng: np.random.Generator) -> GradReport:
    probs = _param(rng, 6, 6, low=0.05, high=0.95)
    mask = _binary_mask(rng, 6, 6)
    return grad_check(lambda: dice_loss(probs, mask), [probs], EPS, "loss.dice")


def check_pixel_bce(rng: np.random.Generator) -> GradReport:
    logits = _param(rng, 6, 6, low=-3.0, high=3.0)
    mask = _binary_mask(rng, 6, 6)
    return grad_check(lambda: pixel_bce(logits, mask), [logits], EPS, "loss.pixel_bce")


def check_guide_bce(rng: np.random.Generator) -> GradReport:
    guide = _param(rng, 6, 6, low=0.05, high=0.95)
    mask = _binary_mask(rng, 6, 6)
    return grad_check(lambda: guide_bce(guide, mask), [guide], EPS, "loss.guide_bce")


def check_hinge(rng: np.random.Generator) -> GradReport:
    probs = _param(rng, 8, 8, low=0.05, high=0.95)
    mask = _binary_mask(rng, 8, 8)
    return grad_check(lambda: boundary_hinge(probs, mask, margin=0.2, band_radius=1),
                      [probs], EPS, "loss.boundary_hinge")


def check_lora(rng: np.random.Generator) -> GradReport:
    x = _param(rng, 5, 6)
    weight = Tensor(rng.uniform(-1, 1, (6, 4)), precision=Precision.DOUBLE)
    a, b = _param(rng, 6, 2), _param(rng, 2, 4)
    w = rng.uniform(-1, 1, (5, 4))
    return grad_check(lambda: _weighted(lora_project(x, weight, a, b, 2.0), w), [x, a, b], EPS, "lora_project")


CHECKS: Dict[str, CheckFn] = {
    "conv2d": check_conv2d,
    "attention": check_attention,
    "bilinear_resize": check_resize,
    "tokenbook.scores": check_tokenbook_scores,
    "tokenbook.guide_mask": check_tokenbook_mask,
    "gate": check_gate,
    "loss.dice": check_dice,
    "loss.pixel_bce": check_pixel_bce,
    "loss.guide_bce": check_guide_bce,
    "loss.boundary_hinge": check_hinge,
    "lora_project": check_lora,
}


def pipeline_config() -> ConfigManager:
    """Small guided-lora model for the full 16x16 pipeline check."""
    return ConfigManager.from_dict({
        "encoder": {"patch": 4, "dim": 8, "depth": 1, "heads": 2, "image_size": 16},
        "lora": {"rank": 2},
        "tokenbook": {"k": 4},
        "unet": {"base_channels": 2, "depth": 2},
        "loss": {"hinge_enabled": True},
        "synth": {"size": 16, "n_samples": 1},
    })


@dataclass
class SuiteReport:
    """Results of one gradient-suite run."""
    reports: List[GradReport] = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def failures(self) -> List[GradReport]:
        return [r for r in self.reports if not r.passed(self.tolerance)]

    @property
    def is_healthy(self) -> bool:
        return bool(self.reports) and not self.failures

    def table(self) -> str:
        header = f"{'operation':<28} {'max_rel_err':>12} {'max_abs_err':>12} {'n':>6} {'kinks':>6}  status"
        rows = [header, "-" * len(header)]
        for r in self.reports:
            status = "ok" if r.passed(self.tolerance) else "FAIL"
            rows.append(f"{r.op_name:<28} {r.max_rel_err:>12.3e} {r.max_abs_err:>12.3e} "
                        f"{r.n_params_checked:>6} {r.n_kinks_skipped:>6}  {status}")
        return "\n".join(rows)

    def summary(self) -> str:
        return (
            f"Gradient check complete: {len(self.reports)} operations\n"
            f"  Failed: {len(self.failures)} (tolerance {self.tolerance:g})"
        )


def run_suite(full: bool = False, seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> SuiteReport:
    report = SuiteReport(tolerance=tolerance)
    rng = np.random.default_rng(seed)
    for name, check in CHECKS.items():
        logger.debug(f"Checking {name}")
        report.reports.append(check(rng))
    if full:
        report.reports.append(pipeline_grad_check(pipeline_config(), Mode.LORA, seed))
    for r in report.failures:
        logger.warning(f"Gradient check failed: {r}")
    return report
