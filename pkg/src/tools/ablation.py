# -*- coding: utf-8 -*-
"""
Mode Ablation
=============

Trains the ungated baseline, the guided model with a frozen encoder and,
optionally, the guided model with LoRA adapters over a seed set, then
evaluates every best checkpoint on the validation set (and on a
texture-shifted set when one is given).

The summary holds per-seed metrics, means over seeds and the deltas of each
guided mode relative to the baseline.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from src.core.evaluation import evaluate_dataset
from src.core.metrics import METRIC_NAMES, MetricsReport
from src.core.pipeline import Mode
from src.core.synth_data import SegSample
from src.core.trainer import Trainer
from src.utils.config import ConfigManager

logger = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    best_epoch: int
    val: MetricsReport
    shifted: Optional[MetricsReport] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"seed": self.seed, "best_epoch": self.best_epoch, "val": _means(self.val)}
        if self.shifted is not None:
            data["shifted"] = _means(self.shifted)
        return data


def _means(report: MetricsReport) -> Dict[str, Any]:
    data: Dict[str, Any] = {f"{name}_mean": report.mean(name) for name in METRIC_NAMES}
    if report.has_guide:
        data["guide_auc_mean"] = report.to_dict().get("guide_auc_mean")
    return data


@dataclass
class AblationSummary:
    """Per-mode, per-seed evaluation results."""
    seeds: List[int]
    results: Dict[str, List[SeedResult]] = field(default_factory=dict)

    def mode_mean(self, mode: str, split: str = "val") -> Dict[str, float]:
        out: Dict[str, float] = {}
        reports = [getattr(r, split) for r in self.results[mode] if getattr(r, split) is not None]
        if not reports:
            return out
        for name in METRIC_NAMES:
            out[f"{name}_mean"] = float(np.mean([rep.mean(name) for rep in reports]))
        aucs = [_means(rep).get("guide_auc_mean") for rep in reports if rep.has_guide]
        aucs = [a for a in aucs if a is not None]
        if aucs:
            out["guide_auc_mean"] = float(np.mean(aucs))
        return out

    def deltas(self, split: str = "val") -> Dict[str, Dict[str, float]]:
        """Mean metric of each guided mode minus the baseline mean."""
        base = self.mode_mean(Mode.BASELINE.value, split)
        out: Dict[str, Dict[str, float]] = {}
        if not base:
            return out
        for mode in self.results:
            if mode == Mode.BASELINE.value:
                continue
            means = self.mode_mean(mode, split)
            if means:
                out[mode] = {f"{name}_delta": means[f"{name}_mean"] - base[f"{name}_mean"]
                             for name in METRIC_NAMES}
        return out

    def to_dict(self) -> Dict[str, Any]:
        has_shifted = any(r.shifted is not None for rs in self.results.values() for r in rs)
        splits = ["val", "shifted"] if has_shifted else ["val"]
        return {
            "seeds": list(self.seeds),
            "modes": {
                mode: {
                    "per_seed": [r.to_dict() for r in rs],
                    "mean": {split: self.mode_mean(mode, split) for split in splits},
                }
                for mode, rs in self.results.items()
            },
            "deltas_vs_baseline": {split: self.deltas(split) for split in splits},
        }

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def summary(self) -> str:
        lines = [f"Ablation over seeds {self.seeds}"]
        for mode in self.results:
            m = self.mode_mean(mode)
            lines.append(f"  {mode:<18} DSC {m['dsc_mean']:.4f}  IoU {m['iou_mean']:.4f}  "
                         f"HD95 {m['hd95_mean']:.3f}")
        return "\n".join(lines)


def run_ablation(config: ConfigManager, train_set: Sequence[SegSample], val_set: Sequence[SegSample],
                 seeds: Sequence[int], include_lora: bool = False,
                 shifted_set: Optional[Sequence[SegSample]] = None,
                 tta_flips: bool = False) -> AblationSummary:
    modes = [Mode.BASELINE, Mode.GUIDED] + ([Mode.LORA] if include_lora else [])
    summary = AblationSummary(list(seeds))
    for mode in modes:
        summary.results[mode.value] = []
        for seed in seeds:
            logger.info(f"Ablation: {mode.value}, seed {seed}")
            result = Trainer(config, mode, seed).train(train_set, val_set)
            ckpt = result.checkpoint
            val_report = evaluate_dataset(ckpt, val_set, tta_flips, [seed])
            shifted_report = evaluate_dataset(ckpt, shifted_set, tta_flips, [seed]) if shifted_set else None
            summary.results[mode.value].append(SeedResult(seed, ckpt.epoch, val_report, shifted_report))
    logger.info(summary.summary())
    return summary
