"""Dense float64 tensors with reverse-mode differentiation."""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from goskill.errors import NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_STATE = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (inference only)."""
    previous = is_grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


class Tensor:
    """A float64 array that records the operations producing it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data: object, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        suffix = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{suffix})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if not self.requires_grad:
            raise ShapeError("backward() called on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise ShapeError(f"seed gradient shape {seed.shape} != tensor shape {self.shape}")
        ComputationTape.from_root(self).run(self, seed)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other: object) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: object) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: object) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: object) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: object) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: object) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        return getitem(self, index)

    # -- shape / reductions ----------------------------------------------
    def sum(self, axis: Optional[int | Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Optional[int | Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    # -- elementwise -----------------------------------------------------
    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def softmax(self, axis: int = -1, mask: Optional[np.ndarray] = None) -> "Tensor":
        return softmax(self, axis, mask)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        return log_softmax(self, axis)


class ComputationTape:
    """Nodes reachable from a root, in topological order (parents first)."""

    def __init__(self, nodes: List[Tensor]) -> None:
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationTape":
        order: List[Tensor] = []
        visited: set[int] = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run(self, root: Tensor, seed: np.ndarray) -> None:
        for node in self.nodes:
            if not node.is_leaf:
                node.grad = None
        root.grad = seed if root.grad is None or not root.is_leaf else root.grad + seed
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pgrad)):
                    raise NumericError(f"non-finite gradient flowing out of '{node._op}'")
                parent.grad = pgrad.copy() if parent.grad is None else parent.grad + pgrad


# ----------------------------------------------------------------------
def as_tensor(value: object) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by '{op}'")


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def add(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a: object, b: object) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    return _result(
        a.data**p,
        (a,),
        lambda g: (g * p * a.data ** (p - 1.0),),
        "pow",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def _normalize_axes(axis: Optional[int | Tuple[int, ...]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a: Tensor, axis: Optional[int | Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis: Optional[int | Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return reduce_sum(a, axis, keepdims) / float(max(count, 1))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    return _result(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a: Tensor, index: object) -> Tensor:
    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(a.data[index], dtype=np.float64), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return list(np.split(g, bounds, axis=axis))

    return _result(data, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from exc

    def backward(g: np.ndarray) -> List[np.ndarray]:
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _result(data, tensors, backward, "stack")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a: Tensor) -> Tensor:
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data >= floor
    return _result(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "clamp_min")


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    logits = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, logits.shape)
        logits = np.where(mask, logits, -np.inf)
    peak = np.max(logits, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.exp(logits - peak)
    total = weights.sum(axis=axis, keepdims=True)
    out = weights / np.where(total > 0.0, total, 1.0)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    peak = np.max(a.data, axis=axis, keepdims=True)
    shifted = a.data - peak
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), backward, "log_softmax")


def straight_through(z: Tensor, e: Tensor) -> Tensor:
    """Forward value of ``e``; the backward pass hands the gradient to ``z`` unchanged."""
    if z.shape != e.shape:
        raise ShapeError(f"straight_through: shapes {z.shape} and {e.shape} differ")
    return _result(e.data.copy(), (z,), lambda g: (g,), "straight_through")


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


__all__ = [
    "Tensor",
    "straight_through",
    "ComputationTape",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "stack",
    "exp",
    "log",
    "relu",
    "tanh",
    "sqrt",
    "clamp_min",
    "softmax",
    "log_softmax",
    "dropout",
]
