"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays.  Every operation records its input
tensors and a vector-Jacobian closure, so ``Tensor.backward`` can push the
loss gradient to every reachable leaf.  Graphs are rebuilt on each forward
pass and are confined to a single thread; gradients accumulate additively
until explicitly zeroed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the operation's shape rule."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain."""


def _lift(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over axes that were expanded by broadcasting to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: "Tensor", b: "Tensor", op: str) -> None:
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.values.shape} and {b.values.shape} do not broadcast"
        ) from None


class Tensor:
    """A dense nd-array node in a reverse-mode differentiation graph."""

    __slots__ = ("values", "grad", "_parents", "_vjp")

    def __init__(self, values, _parents: tuple = (), _vjp: Callable | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(()))

    def is_leaf(self) -> bool:
        return self._vjp is None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, leaf={self.is_leaf()})"

    # -- gradient handling ---------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into `.grad` of every reachable node.

        `self` must hold exactly one element.  Repeated calls keep adding
        into existing gradients; propagation itself always starts from a
        fresh adjoint so earlier passes cannot leak into this one.
        """
        if self.values.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.values.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.values)}
        for node in reversed(order):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                prev = adjoint.get(id(parent))
                adjoint[id(parent)] = pg if prev is None else prev + pg

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method forms of the common ops ---------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def square(self) -> "Tensor":
        return square(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return softmax(self, axis=axis)


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return (_unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape))

    return Tensor(a.values + b.values, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return (_unbroadcast(g, a.values.shape), _unbroadcast(-g, b.values.shape))

    return Tensor(a.values - b.values, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return (
            _unbroadcast(g * b.values, a.values.shape),
            _unbroadcast(g * a.values, b.values.shape),
        )

    return Tensor(a.values * b.values, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")

    def vjp(g):
        return (
            _unbroadcast(g / b.values, a.values.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape),
        )

    return Tensor(a.values / b.values, (a, b), vjp)


def neg(a) -> Tensor:
    a = _lift(a)
    return Tensor(-a.values, (a,), lambda g: (-g,))


# -- contractions ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(
            f"matmul expects two matrices, got shapes {a.values.shape} and {b.values.shape}"
        )
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.values.shape} vs {b.values.shape}"
        )

    def vjp(g):
        return (g @ b.values.T, a.values.T @ g)

    return Tensor(a.values @ b.values, (a, b), vjp)


def tensor_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, a.values.shape)),)

    return Tensor(out, (a,), vjp)


def tensor_mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.values.mean(axis=axis, keepdims=keepdims)
    count = a.values.size if axis is None else a.values.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, a.values.shape)) / count,)

    return Tensor(out, (a,), vjp)


# -- elementwise nonlinearities ----------------------------------------------------


_relu_margin_trace: list | None = None


def trace_relu_margins() -> "_ReluMarginTrace":
    """Context manager recording min |input| of every relu evaluated inside.

    Finite-difference checks are only meaningful away from the relu kink;
    the recorded margins let a caller reject ill-conditioned cases.
    """
    return _ReluMarginTrace()


class _ReluMarginTrace:
    def __enter__(self):
        global _relu_margin_trace
        self._prev = _relu_margin_trace
        _relu_margin_trace = []
        return self

    def __exit__(self, *exc):
        global _relu_margin_trace
        self.margins = _relu_margin_trace
        _relu_margin_trace = self._prev
        return False

    def min_margin(self) -> float:
        return min(self.margins) if self.margins else float("inf")


def relu(a) -> Tensor:
    a = _lift(a)
    if _relu_margin_trace is not None and a.values.size:
        _relu_margin_trace.append(float(np.abs(a.values).min()))
    mask = a.values > 0.0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.values, 0.0), (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.values)

    def vjp(g):
        return (g * out,)

    return Tensor(out, (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values <= 0.0):
        raise DomainError(
            f"log requires strictly positive inputs, min value was {a.values.min()}"
        )

    def vjp(g):
        return (g / a.values,)

    return Tensor(np.log(a.values), (a,), vjp)


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values <= 0.0):
        raise DomainError(
            f"sqrt requires strictly positive inputs, min value was {a.values.min()}"
        )
    out = np.sqrt(a.values)

    def vjp(g):
        return (g / (2.0 * out),)

    return Tensor(out, (a,), vjp)


def square(a) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (g * 2.0 * a.values,)

    return Tensor(a.values * a.values, (a,), vjp)


def absolute(a) -> Tensor:
    a = _lift(a)

    def vjp(g):
        return (g * np.sign(a.values),)

    return Tensor(np.abs(a.values), (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along `axis`, computed with max-subtraction for overflow safety."""
    a = _lift(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return Tensor(out, (a,), vjp)


# -- structural ops -------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradients split back to each input."""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat requires at least one tensor")
    base = tensors[0].values.shape
    for t in tensors[1:]:
        s = t.values.shape
        if len(s) != len(base) or any(
            s[i] != base[i] for i in range(len(base)) if i != axis
        ):
            raise ShapeError(f"concat: shape {s} incompatible with {base} on axis {axis}")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    offsets = np.cumsum([t.values.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(out, tuple(tensors), vjp)


def take_rows(a, indices) -> Tensor:
    """Select rows (axis 0) by an index list; duplicate indices accumulate grads."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.values.ndim < 1:
        raise ShapeError("take_rows requires at least one dimension")
    n = a.values.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"take_rows: index out of range for {n} rows")

    def vjp(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(a.values[idx], (a,), vjp)


# -- gradient verification -------------------------------------------------------


@dataclass
class GradCheckResult:
    """Worst-case disagreement between analytic and central-difference grads."""

    max_relative_error: float
    worst_parameter_index: int


def grad_check_elementwise(
    loss_builder: Callable[..., Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> np.ndarray:
    """Per-element relative error between backward() and central differences.

    Returns a flat array over the concatenation of all parameter buffers;
    the denominator is max(|analytic|, |numeric|, 1e-8) per element.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    first = float(loss_builder(*params).values.reshape(()))
    second = float(loss_builder(*params).values.reshape(()))
    if first != second:
        raise RuntimeError(
            f"loss_builder is not deterministic: {first!r} != {second!r} at identical parameters"
        )

    for p in params:
        p.zero_grad()
    loss = loss_builder(*params)
    loss.backward()
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params
    ]

    errors = np.empty(sum(p.values.size for p in params))
    offset = 0
    for p, ana in zip(params, analytic):
        flat = p.values.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(loss_builder(*params).values.reshape(()))
            flat[i] = orig - step
            f_minus = float(loss_builder(*params).values.reshape(()))
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(ana_flat[i]), abs(numeric), 1e-8)
            errors[offset + i] = abs(ana_flat[i] - numeric) / denom
        offset += flat.size
    return errors


def grad_check(
    loss_builder: Callable[..., Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> GradCheckResult:
    """Compare backward() gradients against central finite differences.

    `loss_builder(*params)` must rebuild the scalar loss from scratch on
    every call and be deterministic; two evaluations at identical
    parameters are compared bitwise to detect violations.
    `worst_parameter_index` is a flat index into the concatenation of all
    parameter buffers.
    """
    errors = grad_check_elementwise(loss_builder, params, step)
    if errors.size == 0:
        return GradCheckResult(max_relative_error=0.0, worst_parameter_index=0)
    return GradCheckResult(
        max_relative_error=float(errors.max()),
        worst_parameter_index=int(errors.argmax()),
    )
