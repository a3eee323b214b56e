"""
Training objectives
===================

Segmentation loss (Dice + pixel BCE), guide supervision BCE, an optional
boundary-band hinge, and their weighted combination.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np
from scipy import ndimage

from src.core import functional as F
from src.core.exceptions import ContractViolation, InputError
from src.core.tensor import Precision, Tensor
from src.core.tokenbook import GuideMask
from src.utils.config import LossConfig

ArrayLike = Union[np.ndarray, Tensor]


def _as_const(y: ArrayLike, precision: Precision) -> Tensor:
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return Tensor(data, precision=precision)


def _check_shapes(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise InputError(f"{name}: prediction shape {a.shape} does not match target {b.shape}")


def dice_loss(probs: Tensor, gt: ArrayLike, eps: float = 1e-6) -> Tensor:
    """``1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps)``."""
    y = _as_const(gt, probs.precision)
    _check_shapes("dice_loss", probs, y)
    numerator = (probs * y).sum() * 2.0 + eps
    denominator = probs.sum() + (float(y.data.sum()) + eps)
    return 1.0 - numerator / denominator


def pixel_bce(logits: Tensor, gt: ArrayLike) -> Tensor:
    y = _as_const(gt, logits.precision)
    _check_shapes("pixel_bce", logits, y)
    return F.bce_with_logits(logits, y).mean()


def guide_bce(guide: Union[GuideMask, Tensor], gt: ArrayLike) -> Tensor:
    """Mean binary cross-entropy between guide values and labels."""
    g = guide.values if isinstance(guide, GuideMask) else guide
    y = _as_const(gt, g.precision)
    _check_shapes("guide_bce", g, y)
    if not (np.all(g.data > 0) and np.all(g.data < 1)):
        raise ContractViolation("guide values must lie strictly inside (0, 1)")
    not_y = Tensor(1.0 - y.data, precision=g.precision)
    log_likelihood = y * g.log() + not_y * (1.0 - g).log()
    return -log_likelihood.mean()


def boundary_band(gt: np.ndarray, radius: int) -> np.ndarray:
    """
    Pixels within Chebyshev distance ``radius`` of a boundary pixel, where a
    boundary pixel has an in-image 4-neighbour of the opposite label. The
    image edge is not a label change here, unlike ``metrics.boundary_pixels``
    where the exterior counts as background: a uniform mask has no band.
    """
    y = np.asarray(gt).astype(bool)
    boundary = np.zeros_like(y)
    vertical = y[1:, :] != y[:-1, :]
    horizontal = y[:, 1:] != y[:, :-1]
    boundary[1:, :] |= vertical
    boundary[:-1, :] |= vertical
    boundary[:, 1:] |= horizontal
    boundary[:, :-1] |= horizontal
    if not boundary.any():
        return boundary
    return ndimage.maximum_filter(boundary, size=2 * radius + 1, mode="constant", cval=False)


def boundary_hinge(probs: Tensor, gt: ArrayLike, margin: float = 0.2, band_radius: int = 2) -> Tensor:
    """Mean of ``max(0, m - (2p - 1)(2y - 1))`` over the boundary band; 0 when the band is empty."""
    y = _as_const(gt, probs.precision)
    _check_shapes("boundary_hinge", probs, y)
    band = boundary_band(y.data, band_radius)
    n_band = int(band.sum())
    if n_band == 0:
        return Tensor(0.0, precision=probs.precision)
    signed_y = Tensor(2.0 * y.data - 1.0, precision=probs.precision)
    agreement = (probs * 2.0 - 1.0) * signed_y
    penalties = F.hinge(margin - agreement)
    in_band = Tensor(band.astype(np.float64), precision=probs.precision)
    return (penalties * in_band).sum() * (1.0 / n_band)


@dataclass
class LossBreakdown:
    """Total objective plus each term as a float for logging."""
    total: Tensor
    terms: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, float]:
        return {"total": self.total.item(), **self.terms}


def combine_terms(terms: Dict[str, Tensor], cfg: LossConfig) -> Tensor:
    """``w_dice*dice + w_bce*bce [+ lambda*guide] [+ hinge]`` for whichever terms are present."""
    total = terms["dice"] * cfg.seg_dice_weight + terms["bce"] * cfg.seg_bce_weight
    if "guide" in terms:
        total = total + terms["guide"] * cfg.lambda_guide
    if "hinge" in terms:
        total = total + terms["hinge"]
    return total


def total_loss(logits: Tensor, guide: Optional[GuideMask], gt: ArrayLike, cfg: LossConfig) -> LossBreakdown:
    """
    Composite objective for one sample. The guide term joins the graph only
    when a guide is given and ``lambda_guide > 0``.
    """
    if logits.ndim != 3 or logits.shape[0] != 1:
        raise InputError(f"logits must have shape [1,H,W], got {logits.shape}")
    _, h, w = logits.shape
    flat_logits = logits.reshape(h, w)
    probs = F.sigmoid(flat_logits)

    terms: Dict[str, Tensor] = {
        "dice": dice_loss(probs, gt, cfg.eps),
        "bce": pixel_bce(flat_logits, gt),
    }
    if guide is not None and cfg.lambda_guide > 0:
        if (guide.h, guide.w) != (h, w):
            raise InputError(f"guide {guide.h}x{guide.w} does not match target {h}x{w}")
        terms["guide"] = guide_bce(guide, gt)
    if cfg.hinge_enabled:
        terms["hinge"] = boundary_hinge(probs, gt, cfg.hinge_margin, cfg.band_radius)

    total = combine_terms(terms, cfg)
    report = {name: term.item() for name, term in terms.items()}
    report.setdefault("guide", 0.0)
    report.setdefault("hinge", 0.0)
    return LossBreakdown(total, report)
