"""
Tensor substrate
================

Dense numpy-backed tensors with reverse-mode gradients.

Every differentiable operation is a :class:`Function`. Applying a function
records it as the ``creator`` of its output when any input requires a
gradient; :meth:`Tensor.backward` walks the recorded operations in reverse
topological order. There is no global tape, so independent forward/backward
passes never share mutable state. The only module-level state is the
optional branch log that gradient checks use to detect kinks.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import ConfigError

logger = logging.getLogger(__name__)

Scalar = Union[int, float]

_branch_log: Optional[List[bytes]] = None


def record_branch(pattern: np.ndarray) -> None:
    """Note which side of a kink each entry took; a no-op unless a log is open."""
    if _branch_log is not None:
        _branch_log.append(np.ascontiguousarray(pattern).tobytes())


@contextmanager
def recording_branches() -> Iterator[List[bytes]]:
    """Collect the branch patterns of every piecewise-linear op run inside the block."""
    global _branch_log
    previous = _branch_log
    _branch_log = []
    try:
        yield _branch_log
    finally:
        _branch_log = previous


class Precision(Enum):
    """Working precision of a tensor."""
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.SINGLE else np.dtype(np.float64)

    @classmethod
    def of(cls, dtype: np.dtype) -> "Precision":
        return cls.DOUBLE if np.dtype(dtype) == np.float64 else cls.SINGLE


class Function:
    """
    Base class for differentiable operations.

    ``forward`` receives the numpy arrays of the input tensors and returns
    the output array. ``backward`` receives dL/d(output) and returns one
    entry per input: the gradient array, or None for inputs that do not
    need one.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    def needs_grad(self, index: int) -> bool:
        return self.tensors[index].requires_grad

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor._result(out_data, func if requires_grad else None)


class Tensor:
    """
    N-dimensional array with an optional gradient buffer.

    Leaves created by user code are constants unless ``trainable`` is set.
    Intermediate tensors carry the :class:`Function` that produced them.
    """

    __array_priority__ = 100

    def __init__(self, data, trainable: bool = False,
                 precision: Precision = Precision.SINGLE, name: Optional[str] = None):
        self.data = np.array(data, dtype=precision.dtype)
        self.trainable = trainable
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional[Function] = None

    @classmethod
    def _result(cls, data: np.ndarray, creator: Optional[Function]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        out.trainable = False
        out.name = None
        out.grad = None
        out.creator = creator
        return out

    # *** properties ***

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data.dtype)

    @property
    def requires_grad(self) -> bool:
        return self.trainable or self.creator is not None

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __repr__(self) -> str:
        tag = " trainable" if self.trainable else ""
        return f"Tensor(shape={self.shape}, precision={self.precision.value}{tag})"

    # *** data handling ***

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ConfigError(f"item() needs a single-entry tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._result(self.data.copy(), None)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.trainable else None

    def set_data(self, array: np.ndarray) -> None:
        """Replace the stored values in place, keeping this tensor's identity."""
        array = np.ascontiguousarray(array)
        if array.shape != self.data.shape:
            raise ConfigError(f"cannot replace data of shape {self.data.shape} with {array.shape}")
        self.data = array
        if self.grad is not None:
            self.grad = np.zeros_like(self.data)

    def cast(self, precision: Precision) -> None:
        """Change the working precision in place."""
        if self.data.dtype != precision.dtype:
            self.data = self.data.astype(precision.dtype)
            if self.grad is not None:
                self.grad = self.grad.astype(precision.dtype)

    # *** backward pass ***

    def _toposort(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every trainable leaf's ``grad``."""
        if self.size != 1:
            raise ConfigError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        pending: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(self._toposort()):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                if node.trainable:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += grad
                continue
            parent_grads = node.creator.backward(grad)
            for parent, g in zip(node.creator.tensors, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.shape:
                    raise ConfigError(
                        f"{type(node.creator).__name__} produced gradient of shape {g.shape} "
                        f"for input of shape {parent.shape}"
                    )
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + g
                else:
                    pending[key] = g

    # *** operators ***

    def __add__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return AddScalar.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if isinstance(other, Tensor):
            return Add.apply(self, Neg.apply(other))
        return AddScalar.apply(self, value=-float(other))

    def __rsub__(self, other: Scalar) -> "Tensor":
        return AddScalar.apply(Neg.apply(self), value=float(other))

    def __mul__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if isinstance(other, Tensor):
            if other.size == 1 and self.size != 1:
                return Scale.apply(self, other)
            if self.size == 1 and other.size != 1:
                return Scale.apply(other, self)
            return Mul.apply(self, other)
        return MulScalar.apply(self, value=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", Scalar]) -> "Tensor":
        if isinstance(other, Tensor):
            return Div.apply(self, other)
        return MulScalar.apply(self, value=1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return Matmul.apply(self, other)

    def __getitem__(self, idx) -> "Tensor":
        return GetItem.apply(self, idx=idx)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return Sum.apply(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes or None)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ConfigError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# *** elementwise ***

class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape("add", a, b)
        return a + b

    def backward(self, grad: np.ndarray):
        return grad, grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape("mul", a, b)
        return a * b

    def backward(self, grad: np.ndarray):
        a, b = self.tensors
        return (grad * b.data if self.needs_grad(0) else None,
                grad * a.data if self.needs_grad(1) else None)


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape("div", a, b)
        return a / b

    def backward(self, grad: np.ndarray):
        a, b = self.tensors
        ga = grad / b.data if self.needs_grad(0) else None
        gb = -grad * a.data / (b.data * b.data) if self.needs_grad(1) else None
        return ga, gb


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray):
        return (-grad,)


class AddScalar(Function):
    def forward(self, a: np.ndarray, value: float) -> np.ndarray:
        return a + a.dtype.type(value)

    def backward(self, grad: np.ndarray):
        return (grad,)


class MulScalar(Function):
    def forward(self, a: np.ndarray, value: float) -> np.ndarray:
        self.value = a.dtype.type(value)
        return a * self.value

    def backward(self, grad: np.ndarray):
        return (grad * self.value,)


class Scale(Function):
    """Multiply a tensor by a single-entry tensor."""

    def forward(self, a: np.ndarray, s: np.ndarray) -> np.ndarray:
        if s.size != 1:
            raise ConfigError(f"scale: factor must have one entry, got shape {s.shape}")
        return a * s.reshape(())

    def backward(self, grad: np.ndarray):
        a, s = self.tensors
        ga = grad * s.data.reshape(()) if self.needs_grad(0) else None
        gs = np.sum(grad * a.data).reshape(s.shape) if self.needs_grad(1) else None
        return ga, gs


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.exp(a)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.log(a)

    def backward(self, grad: np.ndarray):
        return (grad / self.tensors[0].data,)


class Sqrt(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * 0.5 / self.out,)


# *** linear algebra ***

class Matmul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ConfigError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        return a @ b

    def backward(self, grad: np.ndarray):
        a, b = self.tensors
        return (grad @ b.data.T if self.needs_grad(0) else None,
                a.data.T @ grad if self.needs_grad(1) else None)


class AddBias(Function):
    """Add a 1-D bias along one axis (channel axis 0 or feature axis -1)."""

    def forward(self, x: np.ndarray, b: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis % x.ndim
        if b.ndim != 1 or b.shape[0] != x.shape[self.axis]:
            raise ConfigError(f"bias of shape {b.shape} does not match axis {axis} of {x.shape}")
        view = [1] * x.ndim
        view[self.axis] = -1
        return x + b.reshape(view)

    def backward(self, grad: np.ndarray):
        other_axes = tuple(i for i in range(grad.ndim) if i != self.axis)
        gb = grad.sum(axis=other_axes) if self.needs_grad(1) else None
        return grad, gb


class ChannelMul(Function):
    """Multiply a [C,H,W] tensor by a [1,H,W] map shared across channels."""

    def forward(self, x: np.ndarray, m: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or m.shape != (1,) + x.shape[1:]:
            raise ConfigError(f"channel_mul: map of shape {m.shape} does not fit features {x.shape}")
        return x * m

    def backward(self, grad: np.ndarray):
        x, m = self.tensors
        gx = grad * m.data if self.needs_grad(0) else None
        gm = np.sum(grad * x.data, axis=0, keepdims=True) if self.needs_grad(1) else None
        return gx, gm


# *** reductions and movement ***

class Sum(Function):
    def forward(self, a: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray):
        shape = self.tensors[0].shape
        if self.axis is not None and not self.keepdims:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            grad = np.expand_dims(grad, tuple(a % len(shape) for a in axes))
        return (np.broadcast_to(grad, shape).copy(),)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ConfigError(f"reshape: cannot view {a.shape} as {shape}") from e

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.tensors[0].shape),)


class Transpose(Function):
    def forward(self, a: np.ndarray, axes: Optional[Tuple[int, ...]] = None) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad: np.ndarray):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    def forward(self, a: np.ndarray, idx) -> np.ndarray:
        self.idx = idx
        return np.array(a[idx])

    def backward(self, grad: np.ndarray):
        full = np.zeros_like(self.tensors[0].data)
        parts = self.idx if isinstance(self.idx, tuple) else (self.idx,)
        if all(isinstance(p, (int, slice)) or p is Ellipsis for p in parts):
            full[self.idx] = grad
        else:
            np.add.at(full, self.idx, grad)
        return (full,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=self.axis))


class Flip(Function):
    def forward(self, a: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        self.axes = axes
        return np.flip(a, axis=axes).copy()

    def backward(self, grad: np.ndarray):
        return (np.flip(grad, axis=self.axes).copy(),)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def add_bias(x: Tensor, bias: Tensor, axis: int = -1) -> Tensor:
    return AddBias.apply(x, bias, axis=axis)


def channel_mul(x: Tensor, spatial_map: Tensor) -> Tensor:
    return ChannelMul.apply(x, spatial_map)


def flip(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    return Flip.apply(x, axes=axes)


def constant(array, precision: Precision) -> Tensor:
    return Tensor(array, trainable=False, precision=precision)


class Module:
    """
    Named-parameter container for model components.

    Parameters are registered in a fixed order so that checkpoints, optimizer
    state and gradient checks all enumerate them identically.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def register(self, name: str, array: np.ndarray, trainable: bool,
                 precision: Precision = Precision.SINGLE) -> Tensor:
        tensor = Tensor(array, trainable=trainable, precision=precision, name=name)
        self._params[name] = tensor
        return tensor

    def named_parameters(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def parameters(self) -> List[Tensor]:
        return list(self._params.values())

    def trainable_parameters(self) -> List[Tensor]:
        return [p for p in self._params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def to_precision(self, precision: Precision) -> None:
        for p in self._params.values():
            p.cast(precision)

    def set_trainable(self, trainable: bool) -> None:
        for p in self._params.values():
            p.trainable = trainable
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        unexpected = set(arrays) - set(self._params)
        if missing or unexpected:
            raise ConfigError(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in self._params.items():
            array = np.asarray(arrays[name])
            if array.shape != p.shape:
                raise ConfigError(f"parameter '{name}' has shape {array.shape}, expected {p.shape}")
            p.set_data(array.astype(p.data.dtype))


def iter_grads(params: Iterable[Tensor]) -> Iterable[Tuple[Tensor, np.ndarray]]:
    for p in params:
        yield p, (p.grad if p.grad is not None else np.zeros_like(p.data))
