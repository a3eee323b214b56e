"""
Gradient verification
=====================

Central-difference oracle for the reverse-mode engine.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.core.exceptions import ConfigError, EvaluationError
from src.core.tensor import Precision, Tensor, recording_branches

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradReport:
    """Outcome of one gradient check."""
    op_name: str
    max_rel_err: float
    max_abs_err: float
    n_params_checked: int
    n_kinks_skipped: int = 0

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_rel_err <= tolerance

    def __str__(self) -> str:
        return (f"{self.op_name:<28} rel={self.max_rel_err:.3e} "
                f"abs={self.max_abs_err:.3e} n={self.n_params_checked} kinks={self.n_kinks_skipped}")


def _evaluate(fn: Callable[[], Tensor], param_index: int) -> float:
    out = fn()
    if out.size != 1:
        raise ConfigError(f"gradient check needs a scalar function, got shape {out.shape}")
    value = out.item()
    if not math.isfinite(value):
        raise EvaluationError(f"function value is {value}", param_index)
    return value


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               op_name: str = "fn", max_entries: Optional[int] = None,
               seed: int = 0) -> GradReport:
    """
    Compare analytic gradients of ``fn`` against central differences.

    ``fn`` is re-evaluated from scratch for every perturbation, so it must
    read the current values of ``params`` each call. With ``max_entries`` set,
    at most that many entries per parameter are sampled (deterministically
    from ``seed``); otherwise every entry is checked.
    Entries whose perturbation flips the branch of a ReLU, max-pool, clip or
    hinge are skipped and counted in ``n_kinks_skipped``; the central
    difference is not defined across a kink.
    """
    if not params:
        raise ConfigError("gradient check needs at least one parameter")
    for idx, p in enumerate(params):
        if p.precision is not Precision.DOUBLE:
            raise ConfigError(f"parameter {idx} is not double precision")
        if not p.trainable:
            raise ConfigError(f"parameter {idx} is not trainable")

    for p in params:
        p.zero_grad()
    out = fn()
    if out.size != 1:
        raise ConfigError(f"gradient check needs a scalar function, got shape {out.shape}")
    if not math.isfinite(out.item()):
        raise EvaluationError(f"function value is {out.item()}", 0)
    out.backward()
    analytic = [p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    max_abs = 0.0
    n_checked = 0
    n_kinks = 0
    for idx, p in enumerate(params):
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        grad_flat = analytic[idx].reshape(-1)
        for j in entries:
            original = flat[j]
            flat[j] = original + eps
            with recording_branches() as plus_branches:
                f_plus = _evaluate(fn, idx)
            flat[j] = original - eps
            with recording_branches() as minus_branches:
                f_minus = _evaluate(fn, idx)
            flat[j] = original
            if plus_branches != minus_branches:
                n_kinks += 1
                continue

            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(grad_flat[j])
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-8)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            n_checked += 1

    report = GradReport(op_name, max_rel, max_abs, n_checked, n_kinks)
    logger.debug(str(report))
    return report
