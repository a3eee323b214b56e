"""
TokenBook
=========

Learnable prototype bank mapping encoder tokens to a spatial guide mask.

Each token position receives the score ``sum_k alpha_k * sim(T_i, P_k)``;
scores are squashed with a tempered sigmoid at token resolution and resized
to the requested output size.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src.core import functional as F
from src.core.exceptions import ConfigError
from src.core.guide_encoder import TokenGrid
from src.core.tensor import Function, Module, Precision, Tensor
from src.utils.config import TokenBookConfig


@dataclass
class GuideMask:
    """Guide values in the open interval (0, 1), shape ``[h, w]``."""
    h: int
    w: int
    values: Tensor

    def as_map(self) -> Tensor:
        """View as a single-channel ``[1, h, w]`` map."""
        return self.values.reshape(1, self.h, self.w)

    def numpy(self) -> np.ndarray:
        return self.values.data


class PrototypeScores(Function):
    """
    Per-token aggregated similarity ``s_i = sum_k alpha_k * sim(T_i, P_k)``.

    Similarities are computed one prototype at a time and the weighted terms
    are summed in sorted order, so permuting prototypes together with their
    alphas gives bit-identical scores.
    """

    def forward(self, tokens: np.ndarray, protos: np.ndarray, alphas: np.ndarray,
                kind: str = "cosine", eps: float = 1e-8) -> np.ndarray:
        self.kind = kind
        self.eps = tokens.dtype.type(eps)
        n_protos = protos.shape[0]
        dots = np.empty((tokens.shape[0], n_protos), dtype=tokens.dtype)
        for k in range(n_protos):
            dots[:, k] = tokens @ protos[k]
        self.dots = dots
        if kind == "cosine":
            self.tnorm = np.sqrt(np.sum(tokens * tokens, axis=1))
            self.pnorm = np.sqrt(np.sum(protos * protos, axis=1))
            self.denom = self.tnorm[:, None] * self.pnorm[None, :] + self.eps
            self.sim = dots / self.denom
        else:
            self.sim = dots
        contrib = self.sim * alphas[None, :]
        return np.sort(contrib, axis=1).sum(axis=1)

    def backward(self, grad: np.ndarray):
        tokens, protos, alphas = (t.data for t in self.tensors)
        g_alpha = grad @ self.sim if self.needs_grad(2) else None
        g_sim = grad[:, None] * alphas[None, :]

        if self.kind == "cosine":
            g_dots = g_sim / self.denom
            g_denom = -g_sim * self.dots / (self.denom * self.denom)
            g_tnorm = g_denom @ self.pnorm
            g_pnorm = g_denom.T @ self.tnorm
            t_unit = np.divide(tokens, self.tnorm[:, None], out=np.zeros_like(tokens),
                               where=self.tnorm[:, None] > 0)
            p_unit = np.divide(protos, self.pnorm[:, None], out=np.zeros_like(protos),
                               where=self.pnorm[:, None] > 0)
            g_tokens = g_dots @ protos + g_tnorm[:, None] * t_unit
            g_protos = g_dots.T @ tokens + g_pnorm[:, None] * p_unit
        else:
            g_tokens = g_sim @ protos
            g_protos = g_sim.T @ tokens

        return (g_tokens if self.needs_grad(0) else None,
                g_protos if self.needs_grad(1) else None,
                g_alpha)


class TokenBook(Module):
    """Prototypes ``P [K, d]`` and aggregation weights ``alpha [K]``, both trainable."""

    def __init__(self, cfg: TokenBookConfig, dim: int, seed: int,
                 precision: Precision = Precision.SINGLE):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.dim = dim
        self.logger = logging.getLogger(__name__)
        rng = np.random.default_rng(seed)
        self.prototypes = self.register("prototypes", rng.normal(0.0, 1.0, (cfg.k, dim)), True, precision)
        self.alphas = self.register("alphas", rng.normal(0.0, 0.1, cfg.k), True, precision)

    @property
    def temperature(self) -> float:
        return float(self.cfg.temperature)

    def token_scores(self, tokens: TokenGrid) -> Tensor:
        if tokens.dim != self.dim:
            raise ConfigError(f"token dim {tokens.dim} does not match prototype dim {self.dim}")
        scores = PrototypeScores.apply(tokens.features, self.prototypes, self.alphas,
                                       kind=self.cfg.sim_kind, eps=1e-8)
        return scores.reshape(tokens.ht, tokens.wt)

    def guide_mask(self, tokens: TokenGrid, out_h: int, out_w: int) -> GuideMask:
        if out_h < 1 or out_w < 1:
            raise ConfigError(f"guide size must be positive, got {out_h}x{out_w}")
        scores = self.token_scores(tokens)
        if self.temperature != 1.0:
            scores = scores * (1.0 / self.temperature)
        g = F.sigmoid(scores).reshape(1, tokens.ht, tokens.wt)
        g = F.clip_open_unit(F.bilinear_resize(g, out_h, out_w))
        return GuideMask(out_h, out_w, g.reshape(out_h, out_w))
