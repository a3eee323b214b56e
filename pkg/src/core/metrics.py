"""
Segmentation metrics
====================

Overlap (IoU, DSC), surface distances (HD95, Hausdorff) and the guide ROC-AUC,
plus aggregation of per-sample results into a report.

Conventions for degenerate masks:
    both masks empty   -> IoU = DSC = 1, HD95 = 0
    exactly one empty  -> HD95 = image diagonal
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from src.core.exceptions import InputError

METRIC_NAMES = ("iou", "dsc", "hd95")


def _pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred).astype(bool)
    b = np.asarray(gt).astype(bool)
    if a.shape != b.shape:
        raise InputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def overlap_metrics(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    """(IoU, DSC) of two binary masks."""
    a, b = _pair(pred, gt)
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    total = int(a.sum() + b.sum())
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / total


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """
    Foreground pixels with a 4-neighbour outside the mask. The image exterior
    counts as background, so foreground on the image edge is boundary; the
    loss band in ``objectives.boundary_band`` only looks at in-image neighbours.
    """
    m = np.asarray(mask).astype(bool)
    structure = ndimage.generate_binary_structure(2, 1)
    return m & ~ndimage.binary_erosion(m, structure=structure, border_value=0)


def surface_distances(pred: np.ndarray, gt: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Pooled directed boundary-to-boundary distances in both directions (both masks nonempty)."""
    a, b = _pair(pred, gt)
    sa, sb = boundary_pixels(a), boundary_pixels(b)
    dist_to_a = ndimage.distance_transform_edt(~sa, sampling=spacing)
    dist_to_b = ndimage.distance_transform_edt(~sb, sampling=spacing)
    return np.concatenate([dist_to_b[sa], dist_to_a[sb]])


def _empty_case(a: np.ndarray, b: np.ndarray, spacing: float) -> Optional[float]:
    empty_a, empty_b = not a.any(), not b.any()
    if empty_a and empty_b:
        return 0.0
    if empty_a or empty_b:
        h, w = a.shape
        return math.hypot(h * spacing, w * spacing)
    return None


def hd95(pred: np.ndarray, gt: np.ndarray, spacing: float = 1.0) -> float:
    """95th percentile (linear interpolation) of the pooled symmetric surface distances."""
    a, b = _pair(pred, gt)
    special = _empty_case(a, b, spacing)
    if special is not None:
        return special
    return float(np.percentile(surface_distances(a, b, spacing), 95))


def hausdorff(pred: np.ndarray, gt: np.ndarray, spacing: float = 1.0) -> float:
    """Maximum of the pooled symmetric surface distances."""
    a, b = _pair(pred, gt)
    special = _empty_case(a, b, spacing)
    if special is not None:
        return special
    return float(surface_distances(a, b, spacing).max())


def guide_auc(guide: np.ndarray, gt: np.ndarray) -> float:
    """
    Pixelwise ROC-AUC of guide values against labels (ties count one half).
    NaN when the labels contain a single class.
    """
    g = np.asarray(guide, dtype=np.float64).ravel()
    y = np.asarray(gt).astype(bool).ravel()
    if g.shape != y.shape:
        raise InputError(f"guide has {g.size} values, mask has {y.size}")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(g)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class SampleMetrics:
    sample_id: int
    iou: float
    dsc: float
    hd95: float
    guide_auc: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {"sample_id": self.sample_id, "iou": self.iou, "dsc": self.dsc, "hd95": self.hd95}
        if self.guide_auc is not None:
            data["guide_auc"] = None if math.isnan(self.guide_auc) else self.guide_auc
        return data


def score_sample(sample_id: int, pred: np.ndarray, gt: np.ndarray,
                 guide: Optional[np.ndarray] = None) -> SampleMetrics:
    iou, dsc = overlap_metrics(pred, gt)
    auc = guide_auc(guide, gt) if guide is not None else None
    return SampleMetrics(sample_id, iou, dsc, hd95(pred, gt), auc)


@dataclass
class MetricsReport:
    """Per-sample metrics with population mean and standard deviation per metric."""
    per_sample: List[SampleMetrics] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.per_sample)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.per_sample], dtype=np.float64)

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name))) if self.per_sample else float("nan")

    def std(self, name: str) -> float:
        return float(np.std(self.values(name))) if self.per_sample else float("nan")

    @property
    def has_guide(self) -> bool:
        return bool(self.per_sample) and all(s.guide_auc is not None for s in self.per_sample)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for name in METRIC_NAMES:
            data[f"{name}_mean"] = self.mean(name)
            data[f"{name}_std"] = self.std(name)
        if self.has_guide:
            aucs = self.values("guide_auc")
            data["guide_auc_mean"] = float(np.nanmean(aucs)) if np.any(~np.isnan(aucs)) else None
        data["n_samples"] = self.n_samples
        data["seeds"] = list(self.seeds)
        data["per_sample"] = [s.to_dict() for s in self.per_sample]
        return data

    def summary(self) -> str:
        return (f"IoU {self.mean('iou'):.4f}±{self.std('iou'):.4f}  "
                f"DSC {self.mean('dsc'):.4f}±{self.std('dsc'):.4f}  "
                f"HD95 {self.mean('hd95'):.3f}±{self.std('hd95'):.3f}  (n={self.n_samples})")

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def aggregate(per_sample: Sequence[SampleMetrics], seeds: Sequence[int] = ()) -> MetricsReport:
    if not per_sample:
        raise InputError("cannot aggregate metrics over zero samples")
    return MetricsReport(list(per_sample), list(seeds))
