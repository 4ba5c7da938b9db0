"""Tape-based reverse-mode differentiation over 2-D numpy arrays.

Every value is a :class:`Tensor` holding a 2-D array (scalars are 1x1).
Primitive ops record themselves onto the innermost active :class:`Tape`;
outside a tape they run as plain numpy and keep no graph.

    with Tape() as tape:
        loss = reduce_mean(relu(x @ W))
    tape.backward(loss)
    W.grad  # dL/dW
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_local = threading.local()


class ShapeError(ValueError):
    pass


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A 2-D array node. Leaves with ``requires_grad`` collect gradients in ``grad``."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf; its gradient accumulator starts at zero."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.zero_grad()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of primitive ops, replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def op_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be a 1x1 scalar, got {loss.shape}")
        if loss.is_leaf:
            if loss.requires_grad:
                loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
                return
            raise ValueError("loss is not recorded on this tape")
        for pos in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[pos] is loss:
                break
        else:
            raise ValueError("loss is not recorded on this tape")

        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: pos + 1]):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    prev = pending.get(key)
                    pending[key] = pg if prev is None else prev + pg


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.name = op
        out._parents = tuple(parents)
        out._backward = fn
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(ax for ax in range(2) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic (row / column / scalar broadcasting only) ---------

def _operands(a, b) -> tuple[Tensor, Tensor]:
    """Python numbers take the dtype of the tensor they meet."""
    if isinstance(a, (int, float)) and isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    elif isinstance(b, (int, float)) and isinstance(a, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("add", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("sub", a, b)

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("mul", a, b)

    def fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = _operands(a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def fn(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _record("div", out, (a, b), fn)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _record("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _record("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + ez), ez / (1 + ez)).astype(z.dtype)


# -- linear algebra and layout -------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def fn(g):
        return (g @ b.data.T if a.requires_grad else None), (a.data.T @ g if b.requires_grad else None)

    return _record("matmul", a.data @ b.data, (a, b), fn)


def spmm(matrix: sp.spmatrix, x, matrix_t: sp.spmatrix | None = None) -> Tensor:
    """Constant sparse matrix times a tensor; ``matrix_t`` may carry a cached transpose."""
    x = as_tensor(x)
    if matrix.shape[1] != x.rows:
        raise ShapeError(f"spmm: incompatible shapes {matrix.shape} and {x.shape}")
    mt = matrix.T.tocsr() if matrix_t is None else matrix_t

    def fn(g):
        return (np.asarray(mt @ g),)

    return _record("spmm", np.asarray(matrix @ x.data), (x,), fn)


def concat_cols(tensors: Sequence) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = {t.rows for t in tensors}
    if len(rows) != 1:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat_cols: row counts differ, shapes {shapes}")
    bounds = np.cumsum([0] + [t.cols for t in tensors])

    def fn(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors)))

    return _record("concat_cols", np.concatenate([t.data for t in tensors], axis=1), tensors, fn)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)

    def fn(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _record("slice_cols", x.data[:, start:stop], (x,), fn)


def gather_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.rows):
        raise IndexError(f"gather_rows: index out of range for {x.rows} rows")

    def fn(g):
        # scatter-add as a one-hot sparse product; much faster than np.add.at
        scatter = sp.csr_matrix((np.ones(index.size, dtype=g.dtype), (index, np.arange(index.size))),
                                shape=(x.rows, index.size))
        return (np.asarray(scatter @ g),)

    return _record("gather_rows", x.data[index], (x,), fn)


def dropout_apply(x, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed, externally sampled (already rescaled) mask."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=x.data.dtype)
    if mask.ndim == 1:
        mask = mask.reshape(1, -1)
    try:
        np.broadcast_shapes(x.shape, mask.shape)
    except ValueError:
        raise ShapeError(f"dropout_apply: incompatible shapes {x.shape} and {mask.shape}") from None
    return _record("dropout_apply", x.data * mask, (x,), lambda g: (_unbroadcast(g * mask, x.shape),))


# -- reductions ----------------------------------------------------------------

def reduce_sum(x) -> Tensor:
    x = as_tensor(x)
    return _record("sum", np.sum(x.data, keepdims=True), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    if n == 0:
        raise ShapeError("reduce_mean: empty tensor")
    return _record(
        "mean", np.mean(x.data, keepdims=True), (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),)
    )


def row_sum(x) -> Tensor:
    x = as_tensor(x)
    return _record("row_sum", x.data.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def logsumexp_rows(x) -> Tensor:
    x = as_tensor(x)
    peak = x.data.max(axis=1, keepdims=True)
    shifted = np.exp(x.data - peak)
    total = shifted.sum(axis=1, keepdims=True)
    out = peak + np.log(total)
    soft = shifted / total
    return _record("logsumexp_rows", out, (x,), lambda g: (g * soft,))


def softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    out = shifted / shifted.sum(axis=1, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _record("softmax_rows", out, (x,), fn)


def cosine_rows(a, b, eps: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity, an m x 1 column."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows: incompatible shapes {a.shape} and {b.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=1, keepdims=True))
    na_c, nb_c = np.maximum(na, eps), np.maximum(nb, eps)
    dot = (a.data * b.data).sum(axis=1, keepdims=True)
    cos = dot / (na_c * nb_c)

    def fn(g):
        # the clamp has zero derivative below eps
        ka = np.where(na > eps, cos / (na_c * na_c), 0.0)
        kb = np.where(nb > eps, cos / (nb_c * nb_c), 0.0)
        ga = g * (b.data / (na_c * nb_c) - ka * a.data)
        gb = g * (a.data / (na_c * nb_c) - kb * b.data)
        return ga, gb

    return _record("cosine_rows", cos, (a, b), fn)


def dot_rows(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot_rows: incompatible shapes {a.shape} and {b.shape}")
    return _record(
        "dot_rows", (a.data * b.data).sum(axis=1, keepdims=True), (a, b), lambda g: (g * b.data, g * a.data)
    )


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels."""
    z = as_tensor(logits)
    y = np.asarray(labels, dtype=z.data.dtype).reshape(z.shape)
    n = z.data.size
    if n == 0:
        raise ShapeError("bce_with_logits: empty batch")
    per = np.maximum(z.data, 0) - z.data * y + np.log1p(np.exp(-np.abs(z.data)))
    p = _stable_sigmoid(z.data)
    return _record("bce", np.mean(per, keepdims=True), (z,), lambda g: (g * (p - y) / n,))
