"""Dense matrix values and a reverse-mode autodiff tape.

Every value is a float64 numpy array of shape ``(rows, cols)``.  A stack of
matrices ``(N, rows, cols)`` (or ``(N, m, rows, cols)`` for 3-tensors) is
allowed, and the leading axes are the only ones an op will broadcast over:
adding a ``(c, r)`` bias to a ``(N, c, r)`` batch is fine, adding a
``(c, 1)`` column to a ``(c, r)`` matrix is a shape error.

Ops accept plain arrays or :class:`Var` nodes.  With no ``Var`` among the
inputs they just compute the value; otherwise the result is recorded on the
inputs' tape so :meth:`Tape.backward` can differentiate through it.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Var",
    "Tape",
    "backward",
    "record",
    "value_of",
    "as_matrix",
    "matmul",
    "transpose",
    "add",
    "sub",
    "hadamard",
    "scale",
    "neg",
    "sigmoid",
    "tanh",
    "relu",
    "identity",
    "abs_",
    "exp",
    "log",
    "elementwise",
    "activation",
    "row_softmax",
    "masked_row_softmax",
    "sum_all",
    "mean_all",
    "sum_axis",
    "reshape",
    "concat",
    "take_rows",
    "vectorize",
    "matrixize",
    "finite_difference_gradient",
    "relative_error",
    "named_arrays",
    "named_grads",
]


class ShapeError(ValueError):
    """Operand shapes are not conformable."""

    def __init__(self, message: str, *shapes: tuple[int, ...]):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class NumericError(ArithmeticError):
    """Non-finite input where a finite one is required."""


class Var:
    """A node on a :class:`Tape`: a value plus enough to backpropagate into it."""

    __slots__ = ("value", "tape", "parents", "backward_fn", "grad", "name")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var's reflected ops

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """Ordered record of operations.

    Nodes are appended as they are created, so every node's operands precede
    it and a reversed walk is a valid backward schedule.  A tape belongs to a
    single thread.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def var(self, value, name: str | None = None) -> Var:
        node = Var(as_matrix(value), self, name=name)
        self.nodes.append(node)
        return node

    def watch(self, params: Any) -> Any:
        """Return a copy of ``params`` with every array replaced by a leaf node.

        Walks dataclasses, dicts, lists and tuples.  The leaves share memory
        with the original arrays, so in-place optimizer updates stay visible
        to the caller's structure.
        """
        return _map_arrays(params, lambda arr, path: self.var(arr, name=path))

    def backward(self, loss: Var) -> None:
        backward(self, loss)


def as_matrix(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else as_matrix(x)


def record(value: np.ndarray, inputs: Sequence, backward_fn: Callable) -> Any:
    """Attach ``value`` to the tape shared by ``inputs``.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per input;
    gradients for batched outputs are summed down to each input's shape.
    Returns the bare value when no input is a :class:`Var`.
    """
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands live on different tapes")
    if tape is None:
        return value
    node = Var(value, tape, tuple(inputs), backward_fn)
    tape.nodes.append(node)
    return node


def backward(tape: Tape, loss: Var) -> None:
    """Fill ``.grad`` on every node of ``tape`` with d(loss)/d(node).

    Nodes the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ValueError("loss must be a node recorded on this tape")
    if loss.value.size != 1:
        raise ShapeError("loss must be a scalar", loss.shape)
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not isinstance(parent, Var):
                continue
            g = _reduce_to(g, parent.shape)
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
    for node in tape.nodes:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    if g.shape != tuple(shape):
        raise ShapeError("gradient does not reduce to operand shape", g.shape, shape)
    return g


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    # Only leading (batch) axes may differ.
    if a == b:
        return a
    if len(a) > len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError("shape mismatch", a, b)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError("matmul needs matrices", av.shape, bv.shape)
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError("matmul inner dimensions differ", av.shape, bv.shape)
    out = np.matmul(av, bv)

    def back(g):
        return (
            np.matmul(g, np.swapaxes(bv, -1, -2)),
            np.matmul(np.swapaxes(av, -1, -2), g),
        )

    return record(out, (a, b), back)


def transpose(a):
    av = value_of(a)
    if av.ndim < 2:
        raise ShapeError("transpose needs a matrix", av.shape)
    return record(np.swapaxes(av, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# ---------------------------------------------------------------------------
# Elementwise


def add(a, b):
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av.shape, bv.shape)
    return record(av + bv, (a, b), lambda g: (g, g))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av.shape, bv.shape)
    return record(av - bv, (a, b), lambda g: (g, -g))


def hadamard(a, b):
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av.shape, bv.shape)
    return record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float):
    c = float(c)
    return record(value_of(a) * c, (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids exp overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    y = _sigmoid(value_of(a))
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    y = np.tanh(value_of(a))
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a):
    av = value_of(a)
    mask = av > 0.0  # subgradient 0 at 0
    return record(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def identity(a):
    return a


def abs_(a):
    av = value_of(a)
    return record(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def exp(a):
    y = np.exp(value_of(a))
    return record(y, (a,), lambda g: (g * y,))


def log(a):
    av = value_of(a)
    return record(np.log(av), (a,), lambda g: (g / av,))


_ACTIVATIONS = {
    "identity": identity,
    "linear": identity,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
}


def activation(name_or_fn) -> Callable:
    """Resolve an activation given by name; callables pass through."""
    if callable(name_or_fn):
        return name_or_fn
    try:
        return _ACTIVATIONS[name_or_fn]
    except KeyError:
        raise ValueError(f"unknown activation {name_or_fn!r}; "
                         f"expected one of {sorted(_ACTIVATIONS)}") from None


def elementwise(op: str, *args, factor: float | None = None):
    """Dispatch by name: add, sub, hadamard, scale, sigmoid, tanh, relu."""
    if op == "add":
        return add(*args)
    if op == "sub":
        return sub(*args)
    if op == "hadamard":
        return hadamard(*args)
    if op == "scale":
        if factor is None:
            (x, factor) = args
        else:
            (x,) = args
        return scale(x, factor)
    if op in ("sigmoid", "tanh", "relu"):
        (x,) = args
        return _ACTIVATIONS[op](x)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# Softmax


def _check_finite(x: np.ndarray) -> None:
    if np.isnan(x).any():
        raise NumericError("NaN in softmax input")


def row_softmax(a):
    """Softmax along the last axis with max-subtraction."""
    av = value_of(a)
    _check_finite(av)
    z = np.exp(av - av.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record(y, (a,), back)


def masked_row_softmax(a, mask: np.ndarray):
    """Row softmax restricted to entries where ``mask`` is true.

    Entries outside the mask are exactly zero; an all-false row yields a
    zero row.
    """
    av = value_of(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != av.shape[-mask.ndim:]:
        raise ShapeError("mask shape mismatch", mask.shape, av.shape)
    _check_finite(np.where(mask, av, 0.0))
    shifted = np.where(mask, av, -np.inf)
    row_max = shifted.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    z = np.where(mask, np.exp(np.where(mask, av, 0.0) - row_max), 0.0)
    denom = z.sum(axis=-1, keepdims=True)
    y = np.divide(z, denom, out=np.zeros_like(z), where=denom > 0)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record(y, (a,), back)


# ---------------------------------------------------------------------------
# Reductions and reshaping


def sum_all(a):
    av = value_of(a)
    return record(np.asarray(av.sum()), (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean_all(a):
    av = value_of(a)
    n = av.size
    return record(np.asarray(av.mean()), (a,), lambda g: (np.full(av.shape, g / n),))


def sum_axis(a, axis: int):
    av = value_of(a)
    axis = axis % av.ndim

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), av.shape).copy(),)

    return record(av.sum(axis=axis), (a,), back)


def reshape(a, shape: tuple[int, ...]):
    av = value_of(a)
    return record(av.reshape(shape), (a,), lambda g: (np.reshape(g, av.shape),))


def concat(parts: Sequence, axis: int = -1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tuple(parts), back)


def take_rows(a, index):
    """Rows ``index`` of a 2D matrix (a gather; duplicates accumulate)."""
    av = value_of(a)
    index = np.asarray(index, dtype=np.intp)

    def back(g):
        full = np.zeros_like(av)
        np.add.at(full, index, g)
        return (full,)

    return record(av[index], (a,), back)


def vectorize(x):
    """Row-major flatten of a matrix into a column vector."""
    xv = value_of(x)
    if xv.ndim != 2:
        raise ShapeError("vectorize needs a 2D matrix", xv.shape)
    return reshape(x, (xv.size, 1))


def matrixize(w, rows: int, cols: int):
    """Inverse of :func:`vectorize`."""
    wv = value_of(w)
    if wv.size != rows * cols:
        raise ShapeError(f"cannot reshape {wv.size} entries into {rows}x{cols}",
                         wv.shape, (rows, cols))
    return reshape(w, (rows, cols))


# ---------------------------------------------------------------------------
# Gradient checking


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = as_matrix(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = float(f(x))
        flat[k] = orig - h
        down = float(f(x))
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max|a-b| scaled by the larger of the two magnitudes (at least ``floor``)."""
    a, b = as_matrix(a), as_matrix(b)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)


# ---------------------------------------------------------------------------
# Parameter structures


def _map_arrays(obj: Any, fn: Callable[[np.ndarray, str], Any], path: str = "") -> Any:
    if isinstance(obj, np.ndarray):
        return fn(obj, path)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {
            f.name: _map_arrays(getattr(obj, f.name), fn, _join(path, f.name))
            for f in dataclasses.fields(obj)
        }
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, dict):
        return {k: _map_arrays(v, fn, _join(path, str(k))) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        items = [_map_arrays(v, fn, _join(path, str(i))) for i, v in enumerate(obj)]
        return type(obj)(items) if isinstance(obj, list) else tuple(items)
    return obj


def _walk(obj: Any, path: str = "") -> Iterable[tuple[str, Any]]:
    if isinstance(obj, (np.ndarray, Var)):
        yield path, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from _walk(getattr(obj, f.name), _join(path, f.name))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk(v, _join(path, str(k)))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _walk(v, _join(path, str(i)))


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def named_arrays(params: Any) -> dict[str, np.ndarray]:
    """Flatten a parameter structure into ``{dotted.path: array}`` (no copies)."""
    return {p: a for p, a in _walk(params) if isinstance(a, np.ndarray)}


def named_grads(bound: Any) -> dict[str, np.ndarray]:
    """Gradients of a structure produced by :meth:`Tape.watch`, keyed like :func:`named_arrays`."""
    out = {}
    for p, v in _walk(bound):
        if isinstance(v, Var):
            out[p] = v.grad if v.grad is not None else np.zeros_like(v.value)
    return out
