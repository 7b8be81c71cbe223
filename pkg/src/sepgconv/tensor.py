"""A small reverse-mode autograd tensor over numpy arrays.

Only the operations the layers in this package need are differentiable.
Anything built through :func:`apply` records a node without a gradient rule,
so calling :func:`backward` through it raises :class:`UnsupportedOperationError`
instead of silently producing wrong gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class UnsupportedOperationError(RuntimeError):
    """Raised when backward reaches an operation with no gradient rule."""


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    return arr


class Tensor:
    """Dense float32/float64 array with an optional autograd history."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self._op})"

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """Trainable tensor; ``grad`` always exists and starts at zero."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != np.dtype(dtype):
            raise TypeError(f"dtype mismatch: tensor is {x.dtype}, expected {np.dtype(dtype)}")
        return x
    return Tensor(x, dtype=dtype)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap an op result; ``backward(g)`` returns one gradient (or None) per parent."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def apply(fn: Callable[[np.ndarray], np.ndarray], x: Tensor, name: str = "apply") -> Tensor:
    """Apply an arbitrary array function with no gradient rule."""
    x = as_tensor(x)
    return make_node(np.asarray(fn(x.data)), (x,), None, name)


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Reverse-mode accumulation of d(loss)/d(leaf) into every leaf's ``grad``."""
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss or an explicit grad, got shape {loss.shape}")
        grad = np.ones_like(loss.data)

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    pending: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node._backward is None:
            raise UnsupportedOperationError(f"operation {node._op!r} has no gradient rule")
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise RuntimeError(f"{node._op}: gradient shape {pg.shape} != input shape {p.shape}")
            key = id(p)
            pending[key] = pending[key] + pg if key in pending else pg


def parameters_zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# elementary differentiable ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype) if not isinstance(b, Tensor) else b
    out = a.data + b.data
    return make_node(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add"
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype) if not isinstance(b, Tensor) else b
    out = a.data * b.data
    return make_node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), grad, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def take(a: Tensor, index: np.ndarray, axis: int = -1) -> Tensor:
    """Gather ``a`` along ``axis`` with an integer index array (repeats allowed)."""
    index = np.asarray(index, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, index, axis=axis)

    def grad(g):
        src = np.moveaxis(np.zeros_like(a.data), axis, -1)
        gm = np.moveaxis(g.reshape(a.shape[:axis] + (index.size,) + a.shape[axis + 1 :]), axis, -1)
        np.add.at(src, (..., index.ravel()), gm)
        return (np.moveaxis(src, -1, axis),)

    return make_node(out, (a,), grad, "take")


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit output, e.g. ``"bcg,ncg->bn"``."""
    a, b = as_tensor(a), as_tensor(b)
    inputs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    for s in (sa, sb):
        if len(set(s)) != len(s):
            raise ValueError(f"repeated index within one operand is not supported: {subscripts}")
    for ch in sa + sb:
        if ch not in out_sub and not (ch in sa and ch in sb):
            raise ValueError(f"index {ch!r} summed within one operand only: {subscripts}")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def grad(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), grad, "einsum")
