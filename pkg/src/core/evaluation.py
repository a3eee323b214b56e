"""
Dataset evaluation of trained checkpoints.
"""

import logging
from typing import Iterable, List, Optional, Sequence

import numpy as np

from src.core.checkpoint import Checkpoint
from src.core.exceptions import InputError
from src.core.metrics import MetricsReport, SampleMetrics, aggregate, score_sample
from src.core.pipeline import GuidedSegmenter
from src.core.synth_data import SegSample

logger = logging.getLogger(__name__)


def evaluate_predictions(preds: Sequence[np.ndarray], dataset: Sequence[SegSample],
                         guides: Optional[Sequence[Optional[np.ndarray]]] = None,
                         seeds: Iterable[int] = ()) -> MetricsReport:
    """Score precomputed binary predictions against the dataset masks."""
    if len(preds) != len(dataset):
        raise InputError(f"{len(preds)} predictions for {len(dataset)} samples")
    per_sample: List[SampleMetrics] = []
    for i, (pred, sample) in enumerate(zip(preds, dataset)):
        guide = guides[i] if guides is not None else None
        per_sample.append(score_sample(sample.sample_id, pred, sample.mask, guide))
    return aggregate(per_sample, list(seeds))


def predict_dataset(model: GuidedSegmenter, dataset: Sequence[SegSample], tta_flips: bool = False,
                    threshold: float = 0.5):
    """Binary predictions and (guided modes) guide maps for every sample."""
    if not dataset:
        raise InputError("evaluation dataset is empty")
    h, w = dataset[0].size
    for sample in dataset:
        if sample.size != (h, w):
            raise InputError(f"sample {sample.sample_id} is {sample.size[0]}x{sample.size[1]}, expected {h}x{w}")
    model.check_resolution(h, w)

    preds, guides = [], []
    for sample in dataset:
        probs, guide = model.predict_proba(sample.image, tta=tta_flips)
        preds.append((probs >= threshold).astype(np.uint8))
        guides.append(guide)
    return preds, guides


def evaluate_dataset(checkpoint: Checkpoint, dataset: Sequence[SegSample], tta_flips: bool = False,
                     seeds: Optional[Iterable[int]] = None) -> MetricsReport:
    """
    Full-image inference of ``checkpoint`` on ``dataset``.

    With ``tta_flips`` the foreground probabilities of the four flip variants
    are averaged before thresholding at 0.5. Guided checkpoints also report
    the guide ROC-AUC of the unflipped input.
    """
    model = checkpoint.build_model()
    preds, guides = predict_dataset(model, dataset, tta_flips)
    report = evaluate_predictions(preds, dataset, guides if model.mode.guided else None,
                                  [checkpoint.seed] if seeds is None else seeds)
    logger.info(f"Evaluated {model.mode.value} checkpoint on {report.n_samples} samples: {report.summary()}")
    return report
