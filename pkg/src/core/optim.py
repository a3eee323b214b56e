"""
AdamW with decoupled weight decay and per-group learning rates.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.core.exceptions import NumericalError
from src.core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """First/second moment estimates for one parameter group."""
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamWState,
               lr: float, weight_decay: float, beta1: float, beta2: float, eps: float,
               group: str = "params") -> None:
    """
    One in-place AdamW update of ``params``.

    Decay is applied first as ``w <- w - lr * wd * w``; the bias-corrected
    Adam step follows on the decayed weights. Nothing is modified when a
    gradient is non-finite.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in group '{group}' (tensor {i})", group=group)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.step += 1
    t = state.step
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p *= p.dtype.type(1.0 - lr * weight_decay)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


@dataclass
class OptimGroup:
    name: str
    params: List[Tensor]
    lr: float
    state: AdamWState = field(default_factory=AdamWState)


class AdamW:
    """Single writer of all trainable parameters it was given."""

    def __init__(self, groups: Sequence[OptimGroup], weight_decay: float = 1e-2,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = list(groups)
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.zero_grad()

    def step(self, epoch: Optional[int] = None, batch: Optional[int] = None) -> None:
        grads = {}
        for group in self.groups:
            grads[group.name] = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in group.params]
            for g in grads[group.name]:
                if not np.all(np.isfinite(g)):
                    logger.error(f"Non-finite gradient in group '{group.name}' (epoch {epoch}, batch {batch})")
                    raise NumericalError(f"non-finite gradient in group '{group.name}'",
                                         epoch=epoch, batch=batch, group=group.name)
        for group in self.groups:
            adamw_step([p.data for p in group.params], grads[group.name], group.state,
                       group.lr, self.weight_decay, self.beta1, self.beta2, self.eps, group.name)
