"""
Training harness
================

Mini-batch AdamW training of a :class:`GuidedSegmenter` with random flip
augmentation, per-epoch validation DSC and best-on-validation snapshot
selection. Given the same seed, data and configuration a run is fully
deterministic, including its JSON-lines history.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.core.checkpoint import Checkpoint
from src.core.diagnostics import EpochRecord, HistoryLog
from src.core.exceptions import InputError, NumericalError
from src.core.gated_segnet import predict
from src.core.gradcheck import GradReport, grad_check
from src.core.guide_encoder import TokenGrid
from src.core.metrics import overlap_metrics
from src.core.optim import AdamW, OptimGroup
from src.core.pipeline import FLIPS, GuidedSegmenter, Mode, flip_array
from src.core.synth_data import SegSample, generate_sample
from src.core.tensor import Precision
from src.utils.config import ConfigManager

TERMS = ("dice", "bce", "guide", "hinge")


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: HistoryLog


class Trainer:
    """Trains one mode for one seed."""

    def __init__(self, config: ConfigManager, mode: Mode, seed: int,
                 precision: Precision = Precision.SINGLE,
                 history_path: Optional[Union[str, Path]] = None,
                 encoder_weights: Optional[Dict[str, np.ndarray]] = None):
        self.logger = logging.getLogger(__name__)
        config.validate()
        self.config = config
        self.mode = mode
        self.seed = seed
        self.history_path = Path(history_path) if history_path else None

        self.model = GuidedSegmenter(config, mode, seed, precision)
        if encoder_weights is not None:
            if self.model.encoder is None:
                self.logger.warning("Encoder weights ignored: ungated-baseline has no encoder")
            else:
                self.model.encoder.load_state_arrays(encoder_weights)

        train = config.train
        self.optimizer = AdamW(
            [OptimGroup(g.name, g.module.trainable_parameters(), g.lr)
             for g in self.model.optimizer_groups(train.train_guide)],
            weight_decay=train.weight_decay, beta1=train.beta1, beta2=train.beta2, eps=train.eps,
        )
        self.rng = np.random.default_rng(seed)
        # frozen encoder tokens keyed by (split, index, flips)
        self._token_cache: Dict[Tuple[str, int, Tuple[bool, bool]], TokenGrid] = {}

    @property
    def caches_tokens(self) -> bool:
        return self.mode is Mode.GUIDED

    def _tokens(self, key: Tuple[str, int, Tuple[bool, bool]], image: np.ndarray) -> Optional[TokenGrid]:
        if not self.caches_tokens:
            return None
        tokens = self._token_cache.get(key)
        if tokens is None:
            tokens = self.model.tokens(self.model.as_tensor(image))
            self._token_cache[key] = tokens
        return tokens

    def _check_sets(self, train_set: Sequence[SegSample], val_set: Sequence[SegSample]) -> None:
        if not train_set:
            raise InputError("training set is empty")
        if not val_set:
            raise InputError("validation set is empty")
        h, w = train_set[0].size
        for name, dataset in (("training", train_set), ("validation", val_set)):
            for sample in dataset:
                if sample.size != (h, w):
                    raise InputError(
                        f"{name} sample {sample.sample_id} is {sample.size[0]}x{sample.size[1]}, "
                        f"expected {h}x{w}"
                    )
        self.model.check_resolution(h, w)

    def validate(self, val_set: Sequence[SegSample]) -> float:
        """Mean DSC of thresholded predictions over ``val_set``."""
        scores = []
        for i, sample in enumerate(val_set):
            tokens = self._tokens(("val", i, FLIPS[0]), sample.image)
            logits, _ = self.model.forward(self.model.as_tensor(sample.image), tokens)
            _, dsc = overlap_metrics(predict(logits), sample.mask)
            scores.append(dsc)
        return float(np.mean(scores))

    def _draw_flips(self) -> Tuple[bool, bool]:
        return bool(self.rng.random() < 0.5), bool(self.rng.random() < 0.5)

    def train_epoch(self, epoch: int, train_set: Sequence[SegSample]) -> Dict[str, float]:
        """One pass over shuffled mini-batches; returns per-sample mean loss terms."""
        cfg = self.config
        batch_size = cfg.train.batch
        order = self.rng.permutation(len(train_set))
        batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        sums: Dict[str, float] = defaultdict(float)
        seen = 0

        progress = tqdm(batches, desc=f"Epoch {epoch:03d}", leave=False,
                        disable=not cfg.train.show_progress)
        for b, indices in enumerate(progress):
            self.model.zero_grad()
            weight = 1.0 / len(indices)
            for i in indices:
                sample = train_set[int(i)]
                flips = self._draw_flips()
                image = flip_array(sample.image, flips)
                mask = flip_array(sample.mask, flips)
                breakdown = self.model.sample_loss(image, mask, cfg.loss,
                                                   self._tokens(("train", int(i), flips), image))
                value = breakdown.total.item()
                if not math.isfinite(value):
                    self.logger.error(f"Loss diverged at epoch {epoch}, batch {b}: {value}")
                    raise NumericalError(f"non-finite loss {value}", epoch=epoch, batch=b)
                (breakdown.total * weight).backward()
                sums["loss"] += value
                for term in TERMS:
                    sums[term] += breakdown.terms.get(term, 0.0)
            self.optimizer.step(epoch, b)
            seen += len(indices)
            progress.set_postfix(loss=f"{sums['loss'] / seen:.4f}")

        n = len(train_set)
        return {k: v / n for k, v in sums.items()}

    def train(self, train_set: Sequence[SegSample], val_set: Sequence[SegSample]) -> TrainResult:
        self._check_sets(train_set, val_set)
        epochs = self.config.train.epochs
        self.logger.info(
            f"Training {self.mode.value} (seed {self.seed}) on {len(train_set)} samples, "
            f"{len(val_set)} validation, {epochs} epochs"
        )
        history = HistoryLog()

        val_dsc = self.validate(val_set)
        history.append(EpochRecord(epoch=0, val_dsc=val_dsc))
        best = Checkpoint.from_model(self.model, val_dsc, 0)
        self.logger.info(f"Epoch 0: val DSC {val_dsc:.4f}")
        self._flush(history)

        for epoch in range(1, epochs + 1):
            means = self.train_epoch(epoch, train_set)
            val_dsc = self.validate(val_set)
            history.append(EpochRecord(epoch=epoch, val_dsc=val_dsc, loss=means["loss"],
                                       **{t: means[t] for t in TERMS}))
            self.logger.info(f"Epoch {epoch}/{epochs}: loss {means['loss']:.4f}, val DSC {val_dsc:.4f}")
            if val_dsc > best.val_dsc:
                best = Checkpoint.from_model(self.model, val_dsc, epoch)
                self.logger.info(f"New best checkpoint at epoch {epoch} (val DSC {val_dsc:.4f})")
            self._flush(history)

        self.logger.info(f"Best val DSC {best.val_dsc:.4f} at epoch {best.epoch}")
        return TrainResult(best, history)

    def _flush(self, history: HistoryLog) -> None:
        if self.history_path is not None:
            history.write(self.history_path)


def train(config: ConfigManager, train_set: Sequence[SegSample], val_set: Sequence[SegSample],
          mode: Mode, seed: int, history_path: Optional[Union[str, Path]] = None,
          encoder_weights: Optional[Dict[str, np.ndarray]] = None) -> TrainResult:
    return Trainer(config, mode, seed, history_path=history_path,
                   encoder_weights=encoder_weights).train(train_set, val_set)


def pipeline_grad_check(config: ConfigManager, mode: Mode = Mode.LORA, seed: int = 0,
                        max_entries: Optional[int] = 8) -> GradReport:
    """
    Finite-difference check of the full training loss over every trainable
    parameter (TokenBook, gates, UNet and LoRA in ``guided-lora``) on one
    synthetic sample of ``config.synth.size``, in double precision.

    Gate betas and LoRA ``B`` factors are moved off their zero init first so
    every group carries a nonzero gradient.
    """
    model = GuidedSegmenter(config, mode, seed, Precision.DOUBLE)
    rng = np.random.default_rng(seed)
    for p in model.segnet.gates.parameters():
        p.data[...] = 0.5
    if model.lora is not None:
        for name, p in model.lora.named_parameters().items():
            if name.endswith(".B"):
                p.data[...] = rng.normal(0.0, 0.1, p.shape)

    sample = generate_sample(seed, config.synth)
    params = model.trainable_parameters()
    return grad_check(lambda: model.sample_loss(sample.image, sample.mask, config.loss).total,
                      params, op_name=f"pipeline[{mode.value}]", max_entries=max_entries, seed=seed)
