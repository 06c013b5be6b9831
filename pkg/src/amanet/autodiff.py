"""Dense float64 tensors with reverse-mode automatic differentiation.

The operator set is deliberately small: exactly what the menu-network
architecture and the soft auction objective need (position-wise linear maps,
batched matmul, ReLU/Sigmoid, stable temperature softmax, reductions,
concatenation, slicing/reshaping, layer norm). Everything runs in double
precision; the soft-argmax temperature of 500 makes single precision
overflow-prone inside exp.

Gradients accumulate: calling ``backward`` twice without ``zero_grad``
adds into existing ``.grad`` buffers. Optimizers reset explicitly.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to the operator's signature."""


class OperatorError(ValueError):
    """Unknown operator tag passed to ``forward_op``."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate_unbroadcast(t: "Tensor", grad: np.ndarray, fresh: bool) -> None:
    reduced = _unbroadcast(grad, t.shape)
    t._accumulate(reduced, own=fresh or reduced is not grad)


class Tensor:
    """A dense float64 array plus an optional reverse-mode graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...],
                backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward_fn = backward_fn
        return out

    def _accumulate(self, grad: np.ndarray, own: bool = False) -> None:
        """Add ``grad`` into this tensor's gradient buffer.

        ``own=True`` promises the array is freshly allocated and aliased
        nowhere else, so the first accumulation can adopt it without a copy.
        Bijective views of an already-finalized child gradient (reshape,
        transpose, disjoint concat slices) also qualify: reverse-topological
        order guarantees the child buffer is never read again.
        """
        if self.grad is None:
            self.grad = grad if own else np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # -- shaping ---------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    # -- autodiff ----------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from this scalar.

        Leaf gradients accumulate across repeated calls; interior nodes get a
        fresh accumulator every pass (so calling backward twice doubles leaf
        gradients, it does not compound them).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
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
        for node in order:
            if node._backward_fn is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# -- elementwise operators ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate_unbroadcast(a, g, fresh=False)
        if b.requires_grad:
            _accumulate_unbroadcast(b, g, fresh=False)

    return Tensor._result(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate_unbroadcast(a, g, fresh=False)
        if b.requires_grad:
            _accumulate_unbroadcast(b, -g, fresh=True)

    return Tensor._result(data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate_unbroadcast(a, g * b.data, fresh=True)
        if b.requires_grad:
            _accumulate_unbroadcast(b, g * a.data, fresh=True)

    return Tensor._result(data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate_unbroadcast(a, g / b.data, fresh=True)
        if b.requires_grad:
            _accumulate_unbroadcast(b, -g * a.data / (b.data * b.data), fresh=True)

    return Tensor._result(data, (a, b), backward_fn)


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.data > 0.0
    data = np.where(mask, x.data, 0.0)

    def backward_fn(g):
        x._accumulate(g * mask, own=True)

    return Tensor._result(data, (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    # Split by sign so exp never overflows.
    data = np.where(x.data >= 0,
                    1.0 / (1.0 + np.exp(-np.abs(x.data))),
                    np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward_fn(g):
        x._accumulate(g * data * (1.0 - data), own=True)

    return Tensor._result(data, (x,), backward_fn)


def softmax(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Softmax of ``temperature * logits`` along ``axis``, max-stabilized.

    Max-subtraction keeps exp bounded even at the temperature of 500 used by
    the soft winner selection, so finite inputs never overflow.
    """
    x = _lift(logits)
    if not temperature > 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    if x.ndim == 0:
        raise ShapeError("softmax requires at least one axis")
    z = temperature * x.data
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate(temperature * data * (g - inner), own=True)

    return Tensor._result(data, (x,), backward_fn)


# `softmax_stable` is the contract name; `softmax` the day-to-day spelling.
softmax_stable = softmax


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return Tensor._result(data, (x,), backward_fn)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return Tensor._result(data, (x,), backward_fn)


def invariant_sum(x, axis: int) -> Tensor:
    """Sum along ``axis`` with the addends sorted first.

    Floating-point addition is not bitwise-commutative; sorting makes the
    result bitwise-invariant to any permutation along the summed axis. The
    gradient of a sum is order-free, so backward needs no unsorting.
    """
    x = _lift(x)
    data = np.sort(x.data, axis=axis).sum(axis=axis)

    def backward_fn(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return Tensor._result(data, (x,), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate_unbroadcast(a, g @ np.swapaxes(b.data, -1, -2), fresh=True)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # One dense GEMM instead of a long loop of tiny batched
                # products followed by a reduction over the batch axes.
                flat_a = a.data.reshape(-1, a.shape[-1])
                flat_g = g.reshape(-1, g.shape[-1])
                b._accumulate(flat_a.T @ flat_g, own=True)
            else:
                _accumulate_unbroadcast(b, np.swapaxes(a.data, -1, -2) @ g, fresh=True)

    return Tensor._result(data, (a, b), backward_fn)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_lift(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of zero tensors")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[p.shape for p in parts]} along axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                # Disjoint slices of a finalized child gradient.
                part._accumulate(g[tuple(idx)], own=True)

    return Tensor._result(data, tuple(parts), backward_fn)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _lift(x)
    data = x.data.reshape(shape)

    def backward_fn(g):
        # Bijective view of a finalized child gradient.
        x._accumulate(g.reshape(x.shape), own=True)

    return Tensor._result(data, (x,), backward_fn)


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = _lift(x)
    data = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward_fn(g):
        # Bijective view of a finalized child gradient.
        x._accumulate(g.transpose(inverse), own=True)

    return Tensor._result(data, (x,), backward_fn)


def broadcast_to(x, shape: tuple[int, ...]) -> Tensor:
    x = _lift(x)
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}")

    def backward_fn(g):
        _accumulate_unbroadcast(x, g, fresh=False)

    return Tensor._result(np.ascontiguousarray(data), (x,), backward_fn)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis)))
               for p in parts)


def take(x, index) -> Tensor:
    """Slicing/indexing with scatter-add backward."""
    x = _lift(x)
    data = x.data[index]
    basic = _is_basic_index(index)  # no repeats possible: plain += suffices

    def backward_fn(g):
        buf = np.zeros_like(x.data)
        if basic:
            buf[index] += g
        else:
            np.add.at(buf, index, g)
        x._accumulate(buf, own=True)

    return Tensor._result(np.array(data, copy=True), (x,), backward_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    if x.shape[-1] != gain.shape[-1] or x.shape[-1] != bias.shape[-1]:
        raise ShapeError(
            f"layer_norm: feature dim {x.shape} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gain.data * xhat + bias.data

    def backward_fn(g):
        if gain.requires_grad:
            _accumulate_unbroadcast(gain, g * xhat, fresh=True)
        if bias.requires_grad:
            _accumulate_unbroadcast(bias, g, fresh=False)
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2), own=True)

    return Tensor._result(data, (x, gain, bias), backward_fn)


# -- generic operator dispatch ---------------------------------------------------

_OPERATORS: dict[str, Callable[..., Tensor]] = {}


def register_operator(tag: str, fn: Callable[..., Tensor]) -> None:
    _OPERATORS[tag] = fn


for _tag, _fn in [
    ("add", add), ("sub", sub), ("mul", mul), ("div", div),
    ("relu", relu), ("sigmoid", sigmoid), ("softmax", softmax),
    ("sum", reduce_sum), ("mean", reduce_mean), ("matmul", matmul),
    ("concat", lambda *inputs, axis=-1: concat(inputs, axis=axis)),
    ("reshape", reshape), ("transpose", transpose), ("layer_norm", layer_norm),
    ("linear", lambda x, w, b=None: matmul(x, w) if b is None else add(matmul(x, w), b)),
]:
    register_operator(_tag, _fn)


def forward_op(kind: str, inputs: Iterable[Tensor], attrs: dict | None = None) -> Tensor:
    """Apply the operator named ``kind`` to ``inputs`` with keyword ``attrs``.

    Raises ``OperatorError`` for unknown tags and ``ShapeError`` when the
    operand shapes do not conform; the message reports the offending shapes.
    """
    if kind not in _OPERATORS:
        raise OperatorError(f"unknown operator tag {kind!r}; known: {sorted(_OPERATORS)}")
    return _OPERATORS[kind](*inputs, **(attrs or {}))


# -- parameter graphs -----------------------------------------------------------


class Graph:
    """Named trainable leaves plus the scalar-loss computation over them.

    ``loss_fn`` re-runs the forward pass from the current leaf values each
    time it is called, which is what the finite-difference check needs.
    """

    def __init__(self, parameters: Mapping[str, Tensor], loss_fn: Callable[[], Tensor]):
        self.parameters = dict(parameters)
        for name, p in self.parameters.items():
            if not p.requires_grad:
                raise ValueError(f"parameter {name!r} is not flagged trainable")
        self.loss_fn = loss_fn

    def loss(self) -> Tensor:
        return self.loss_fn()

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def backward(self, loss: Tensor | None = None) -> dict[str, np.ndarray]:
        """Populate gradients for every trainable leaf; detached leaves get zeros."""
        if loss is None:
            loss = self.loss()
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        loss.backward()
        grads: dict[str, np.ndarray] = {}
        for name, p in self.parameters.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            grads[name] = p.grad
        return grads


def finite_difference_check(graph: Graph, epsilon: float = 1e-5,
                            abs_floor: float = 1e-6) -> float:
    """Max over parameter entries of |analytic - central difference| / (|analytic| + abs_floor)."""
    if not graph.parameters:
        raise ValueError("graph has no trainable parameters")
    graph.zero_grad()
    analytic = {k: v.copy() for k, v in graph.backward().items()}
    graph.zero_grad()
    worst = 0.0
    for name, p in graph.parameters.items():
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            up = graph.loss().item()
            flat[i] = original - epsilon
            down = graph.loss().item()
            flat[i] = original
            fd = (up - down) / (2.0 * epsilon)
            err = abs(ana[i] - fd) / (abs(ana[i]) + abs_floor)
            worst = max(worst, err)
    return worst
