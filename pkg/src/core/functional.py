"""
Differentiable kernels
======================

Convolution, pooling, resizing, normalization, activations and attention
built on :class:`src.core.tensor.Function`. All kernels operate on a single
sample: images are ``[C, H, W]`` and token matrices are ``[n, d]``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from src.core.exceptions import ConfigError
from src.core.tensor import Function, Tensor, add_bias, record_branch


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Read-only strided view ``[C, Ho, Wo, kh, kw]`` over a padded input."""
    c, _, _ = xp.shape
    sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(c, ho, wo, kh, kw),
        strides=(sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


class Conv2d(Function):
    def forward(self, x: np.ndarray, k: np.ndarray, b: np.ndarray,
                stride: int = 1, pad: int = 0) -> np.ndarray:
        if x.ndim != 3 or k.ndim != 4:
            raise ConfigError(f"conv2d expects input [C,H,W] and kernel [O,C,kh,kw], got {x.shape} and {k.shape}")
        c_in, h, w = x.shape
        c_out, k_in, kh, kw = k.shape
        if k_in != c_in:
            raise ConfigError(f"conv2d: kernel has {k_in} input channels, input has {c_in}")
        if b.shape != (c_out,):
            raise ConfigError(f"conv2d: bias shape {b.shape} does not match {c_out} output channels")
        if stride < 1 or pad < 0:
            raise ConfigError(f"conv2d: invalid stride={stride} pad={pad}")
        if kh > h + 2 * pad or kw > w + 2 * pad:
            raise ConfigError(
                f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
            )

        self.stride, self.pad = stride, pad
        self.ho = (h + 2 * pad - kh) // stride + 1
        self.wo = (w + 2 * pad - kw) // stride + 1
        self.xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
        self.cols = _windows(self.xp, kh, kw, stride, self.ho, self.wo)
        out = np.tensordot(k, self.cols, axes=([1, 2, 3], [0, 3, 4]))
        return out + b[:, None, None]

    def backward(self, grad: np.ndarray):
        x, k, _ = self.tensors
        gk = np.tensordot(grad, self.cols, axes=([1, 2], [1, 2])) if self.needs_grad(1) else None
        gb = grad.sum(axis=(1, 2)) if self.needs_grad(2) else None

        gx = None
        if self.needs_grad(0):
            _, _, kh, kw = k.shape
            s = self.stride
            gxp = np.zeros_like(self.xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(k.data[:, :, i, j], grad, axes=([0], [0]))
                    gxp[:, i:i + s * self.ho:s, j:j + s * self.wo:s] += contrib
            p = self.pad
            gx = gxp[:, p:p + x.shape[1], p:p + x.shape[2]] if p else gxp
        return gx, gk, gb


class MaxPool2d(Function):
    """2x2 max pooling with stride 2; ties go to the first window entry."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigError(f"max_pool2d needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
        self.argmax = blocks.argmax(axis=-1)
        record_branch(self.argmax)
        return np.take_along_axis(blocks, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad: np.ndarray):
        c, h, w = self.tensors[0].shape
        blocks = np.zeros((c, h // 2, w // 2, 4), dtype=grad.dtype)
        np.put_along_axis(blocks, self.argmax[..., None], grad[..., None], axis=-1)
        gx = blocks.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return (gx,)


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic ``[n_out, n_in]`` matrix of 1-D align-corners-false linear interpolation."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat.astype(dtype)


class BilinearResize(Function):
    def forward(self, x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
        if out_h < 1 or out_w < 1:
            raise ConfigError(f"bilinear_resize: target size must be positive, got {out_h}x{out_w}")
        if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
            raise ConfigError(f"bilinear_resize expects [C,H,W] with H,W >= 1, got {x.shape}")
        _, h, w = x.shape
        self.identity = (h, w) == (out_h, out_w)
        if self.identity:
            return x.copy()
        self.ry = interpolation_matrix(h, out_h, x.dtype)
        self.rx = interpolation_matrix(w, out_w, x.dtype)
        return np.matmul(np.matmul(self.ry, x), self.rx.T)

    def backward(self, grad: np.ndarray):
        if self.identity:
            return (grad,)
        return (np.matmul(np.matmul(self.ry.T, grad), self.rx),)


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray):
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    """Normalize each row of ``[n, d]`` then apply per-feature gain and shift."""

    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
        if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ConfigError(f"layer_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
        self.xhat = (x - mu) * self.inv_std
        return self.xhat * gamma + beta

    def backward(self, grad: np.ndarray):
        _, gamma, _ = self.tensors
        d = self.xhat.shape[1]
        gx = None
        if self.needs_grad(0):
            gxhat = grad * gamma.data
            gx = (self.inv_std / d) * (
                d * gxhat
                - gxhat.sum(axis=1, keepdims=True)
                - self.xhat * np.sum(gxhat * self.xhat, axis=1, keepdims=True)
            )
        gg = np.sum(grad * self.xhat, axis=0) if self.needs_grad(1) else None
        gb = grad.sum(axis=0) if self.needs_grad(2) else None
        return gx, gg, gb


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        record_branch(self.mask)
        return np.where(self.mask, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * self.mask,)


class Sigmoid(Function):
    """Logistic function clamped to the open interval (0, 1) of the working precision."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        finfo = np.finfo(x.dtype)
        pos = x >= 0
        z = np.exp(-np.abs(x))
        raw = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
        self.out = np.clip(raw, finfo.tiny, 1 - finfo.epsneg)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out * (1 - self.out),)


class Gelu(Function):
    """GELU, tanh approximation."""

    _C = math.sqrt(2.0 / math.pi)

    def forward(self, x: np.ndarray) -> np.ndarray:
        c = x.dtype.type(self._C)
        k = x.dtype.type(0.044715)
        self.t = np.tanh(c * (x + k * x ** 3))
        return x.dtype.type(0.5) * x * (1 + self.t)

    def backward(self, grad: np.ndarray):
        x = self.tensors[0].data
        c = x.dtype.type(self._C)
        k = x.dtype.type(0.044715)
        dt = (1 - self.t ** 2) * c * (1 + 3 * k * x ** 2)
        return (grad * (0.5 * (1 + self.t) + 0.5 * x * dt),)


class Clip(Function):
    def forward(self, x: np.ndarray, low: float, high: float) -> np.ndarray:
        self.inside = (x >= low) & (x <= high)
        record_branch(self.inside)
        return np.clip(x, low, high)

    def backward(self, grad: np.ndarray):
        return (grad * self.inside,)


class Hinge(Function):
    """max(0, x) with zero gradient at the kink."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.active = x > 0
        record_branch(self.active)
        return np.where(self.active, x, 0).astype(x.dtype)

    def backward(self, grad: np.ndarray):
        return (grad * self.active,)


class BCEWithLogits(Function):
    """Elementwise binary cross-entropy from logits, stable for any magnitude."""

    def forward(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        if z.shape != y.shape:
            raise ConfigError(f"bce_with_logits: logits {z.shape} vs targets {y.shape}")
        return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def backward(self, grad: np.ndarray):
        z, y = self.tensors
        e = np.exp(-np.abs(z.data))
        p = np.where(z.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.data.dtype)
        return (grad * (p - y.data), None)


# *** public wrappers ***

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    return Conv2d.apply(x, kernel, bias, stride=stride, pad=pad)


def max_pool2d(x: Tensor) -> Tensor:
    return MaxPool2d.apply(x)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    return BilinearResize.apply(x, out_h=out_h, out_w=out_w)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


def clip_open_unit(x: Tensor) -> Tensor:
    """Clamp into (0, 1) using the smallest representable margins."""
    finfo = np.finfo(x.data.dtype)
    return Clip.apply(x, low=float(finfo.tiny), high=float(1 - finfo.epsneg))


def hinge(x: Tensor) -> Tensor:
    return Hinge.apply(x)


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    return BCEWithLogits.apply(logits, targets)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = x @ weight
    return add_bias(out, bias, axis=-1) if bias is not None else out


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention softmax(Q K^T / sqrt(dh)) V for one head."""
    if q.ndim != 2 or q.shape != k.shape or k.shape != v.shape:
        raise ConfigError(f"attention: Q {q.shape}, K {k.shape}, V {v.shape} must share [n, dh]")
    scores = (q @ k.T) * (1.0 / math.sqrt(q.shape[1]))
    return softmax(scores, axis=-1) @ v

