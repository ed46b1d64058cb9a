"""Minimal dense tensors with a reverse-mode gradient tape.

Every differentiable quantity in the package is a :class:`Tensor`.  A tensor
is *tracked* when it lives on a :class:`Tape`; operations on tracked operands
append a node to that tape, operations on untracked operands return plain
untracked values.  There is no global tape: callers create one, ``watch`` the
leaves they want gradients for, and call :func:`backward` on a scalar root.

Broadcasting is deliberately limited to scalar-with-tensor.  Anything else
(bias rows, masks, gathers) goes through an explicitly shaped primitive so
that every vector-Jacobian product stays easy to audit.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ShapeError, TapeError, ZeroNormError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "as_tensor",
    "backward",
    "finite_diff_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "exp",
    "log",
    "tanh",
    "relu",
    "maximum",
    "sign",
    "tsum",
    "tmean",
    "l2_normalize_rows",
    "row_dot",
    "reshape",
    "concat",
    "take_rows",
    "slice_rows",
    "gather_cols",
    "add_bias",
]


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


class Tensor:
    """Dense float64 array, optionally attached to a gradient tape."""

    __slots__ = ("data", "tape", "index")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, *, _tape: "Tape | None" = None, _index: int | None = None):
        self.data = data if _tape is not None and isinstance(data, np.ndarray) else _frozen(data)
        self.tape = _tape
        self.index = _index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", tape_node={self.index}" if self.tracked else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __float__(self) -> float:
        return self.item()

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: sub(self, o)  # noqa: E731
    __rsub__ = lambda self, o: sub(o, self)  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __truediv__ = lambda self, o: div(self, o)  # noqa: E731
    __rtruediv__ = lambda self, o: div(o, self)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    fwd: Callable[..., np.ndarray] | None
    vjp: Callable[..., tuple] | None
    out: Tensor


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as operations execute, so every node's parents already
    precede it.  A tape belongs to one thread; separate tapes are independent.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, value) -> Tensor:
        """Register ``value`` as a tracked leaf and return it."""
        arr = _frozen(value.data if isinstance(value, Tensor) else value)
        t = Tensor(arr, _tape=self, _index=len(self.nodes))
        self.nodes.append(_Node("leaf", (), None, None, t))
        return t

    def leaves(self) -> list[Tensor]:
        return [n.out for n in self.nodes if n.op == "leaf"]

    def _record(self, op, out_arr, inputs, fwd, vjp) -> Tensor:
        out_arr.setflags(write=False)
        t = Tensor(out_arr, _tape=self, _index=len(self.nodes))
        self.nodes.append(_Node(op, inputs, fwd, vjp, t))
        return t

    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the leaves, in tape order."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                values.append(node.out.data)
                continue
            args = [values[t.index] if t.tape is self else t.data for t in node.inputs]
            values.append(node.fwd(*args))
        return values

    def backward(self, root: Tensor) -> "Gradients":
        if root.tape is not self:
            raise TapeError("backward: root is not recorded on this tape")
        if root.size != 1:
            raise TapeError(f"backward: root must be scalar, got shape {root.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.index] = np.ones(root.shape)
        for i in range(root.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.op == "leaf":
                continue
            parent_grads = node.vjp(g, node.out.data, *(t.data for t in node.inputs))
            for t, pg in zip(node.inputs, parent_grads):
                if pg is None or t.tape is not self:
                    continue
                if grads[t.index] is None:
                    grads[t.index] = np.array(pg, dtype=np.float64)
                else:
                    grads[t.index] = grads[t.index] + pg
        return Gradients(self, grads)


class Gradients(Mapping):
    """Result of a backward pass.

    Iterates over the tape's leaves; indexing also works for any intermediate
    node.  Nodes the root does not depend on report a zero gradient.
    """

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if not isinstance(t, Tensor) or t.tape is not self._tape:
            raise KeyError(t)
        g = self._grads[t.index]
        return np.zeros(t.shape) if g is None else g

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tape.leaves())

    def __len__(self) -> int:
        return len(self._tape.leaves())


def backward(root: Tensor) -> Gradients:
    """Reverse-mode gradients of a scalar tracked tensor."""
    if not isinstance(root, Tensor) or root.tape is None:
        raise TapeError("backward: root is untracked; watch an input on a Tape first")
    return root.tape.backward(root)


def finite_diff_grad(fn: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ValueError("finite_diff_grad: step h must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for k in range(base.size):
        xp = base.copy().reshape(-1)
        xm = base.copy().reshape(-1)
        xp[k] += h
        xm[k] -= h
        fp = float(as_tensor(fn(Tensor(xp.reshape(base.shape)))).item())
        fm = float(as_tensor(fn(Tensor(xm.reshape(base.shape)))).item())
        flat[k] = (fp - fm) / (2.0 * h)
    return grad


# --- recording machinery ----------------------------------------------------


def _shared_tape(op: str, inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError(f"{op}: operands are recorded on different tapes")
    return tape


def _apply(op: str, fwd, vjp, *inputs: Tensor) -> Tensor:
    out = fwd(*(t.data for t in inputs))
    tape = _shared_tape(op, inputs)
    if tape is None:
        return Tensor(out)
    return tape._record(op, np.asarray(out, dtype=np.float64), tuple(inputs), fwd, vjp)


def _is_scalar(t: Tensor) -> bool:
    return t.ndim == 0


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    return np.asarray(g.sum()) if like.ndim == 0 and g.ndim != 0 else g


# --- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("add", a, b)
    return _apply(
        "add",
        np.add,
        lambda g, out, x, y: (_reduce_to(g, x), _reduce_to(g, y)),
        a,
        b,
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("sub", a, b)
    return _apply(
        "sub",
        np.subtract,
        lambda g, out, x, y: (_reduce_to(g, x), _reduce_to(-g, y)),
        a,
        b,
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("mul", a, b)
    return _apply(
        "mul",
        np.multiply,
        lambda g, out, x, y: (_reduce_to(g * y, x), _reduce_to(g * x, y)),
        a,
        b,
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes("div", a, b)
    return _apply(
        "div",
        np.divide,
        lambda g, out, x, y: (_reduce_to(g / y, x), _reduce_to(-g * x / (y * y), y)),
        a,
        b,
    )


def neg(a) -> Tensor:
    return _apply("neg", np.negative, lambda g, out, x: (-g,), as_tensor(a))


def exp(a) -> Tensor:
    return _apply("exp", np.exp, lambda g, out, x: (g * out,), as_tensor(a))


def log(a) -> Tensor:
    return _apply("log", np.log, lambda g, out, x: (g / x,), as_tensor(a))


def tanh(a) -> Tensor:
    return _apply("tanh", np.tanh, lambda g, out, x: (g * (1.0 - out * out),), as_tensor(a))


def relu(a) -> Tensor:
    return _apply(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda g, out, x: (g * (x > 0.0),),
        as_tensor(a),
    )


def maximum(a, c: float) -> Tensor:
    """Elementwise ``max(a, c)`` against a constant; ties route no gradient."""
    c = float(c)
    return _apply(
        "maximum",
        lambda x: np.maximum(x, c),
        lambda g, out, x: (g * (x > c),),
        as_tensor(a),
    )


def sign(a) -> Tensor:
    """Elementwise sign with ``sign(0) = 0``.  Piecewise constant, so zero gradient."""
    return _apply("sign", np.sign, lambda g, out, x: (np.zeros_like(x),), as_tensor(a))


# --- reductions and linear algebra ------------------------------------------


def _expand_reduced(g: np.ndarray, x: np.ndarray, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, x.shape)
    return np.broadcast_to(np.expand_dims(g, axis), x.shape)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    return _apply(
        "sum",
        lambda x: np.asarray(np.sum(x, axis=axis)),
        lambda g, out, x: (_expand_reduced(g, x, axis),),
        a,
    )


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return _apply(
        "mean",
        lambda x: np.asarray(np.mean(x, axis=axis)),
        lambda g, out, x: (_expand_reduced(g, x, axis) / count,),
        a,
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _apply(
        "matmul",
        np.matmul,
        lambda g, out, x, y: (g @ y.T, x.T @ g),
        a,
        b,
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expected a matrix")
    return _apply("transpose", lambda x: x.T.copy(), lambda g, out, x: (g.T,), a)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, shape)
    return _apply(
        "reshape",
        lambda x: x.reshape(shape).copy(),
        lambda g, out, x: (g.reshape(x.shape),),
        a,
    )


def add_bias(a, b) -> Tensor:
    """Add a length-k vector to every row of an n x k matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError("add_bias", a.shape, b.shape)
    return _apply(
        "add_bias",
        lambda x, y: x + y[None, :],
        lambda g, out, x, y: (g, g.sum(axis=0)),
        a,
        b,
    )


def l2_normalize_rows(a) -> Tensor:
    """Scale each row of a matrix to unit Euclidean norm.  Zero rows are an error."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("l2_normalize_rows", a.shape, detail="expected a matrix")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1))
    if np.any(norms == 0.0):
        bad = np.flatnonzero(norms == 0.0).tolist()
        raise ZeroNormError(f"l2_normalize_rows: zero row(s) at {bad}")

    def fwd(x):
        return x / np.sqrt(np.sum(x * x, axis=1))[:, None]

    def vjp(g, out, x):
        n = np.sqrt(np.sum(x * x, axis=1))[:, None]
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) / n,)

    return _apply("l2_normalize_rows", fwd, vjp, a)


def row_dot(a, b) -> Tensor:
    """Row-wise inner products of two n x d matrices, giving a length-n vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError("row_dot", a.shape, b.shape)
    return _apply(
        "row_dot",
        lambda x, y: np.sum(x * y, axis=1),
        lambda g, out, x, y: (g[:, None] * y, g[:, None] * x),
        a,
        b,
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat", detail="no operands")
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis):
            raise ShapeError("concat", ts[0].shape, t.shape)
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g, out, *xs):
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", lambda *xs: np.concatenate(xs, axis=axis), vjp, *ts)


def take_rows(a, index) -> Tensor:
    """``a[index]`` along the first axis; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if a.ndim < 1 or (idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0])):
        raise ShapeError("take_rows", a.shape, idx.shape, detail="index out of range")

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, idx, g)
        return (gx,)

    return _apply("take_rows", lambda x: x[idx], vjp, a)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeError("slice_rows", a.shape, detail=f"rows {start}:{stop}")

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        gx[start:stop] = g
        return (gx,)

    return _apply("slice_rows", lambda x: x[start:stop].copy(), vjp, a)


def gather_cols(a, index) -> Tensor:
    """Per-row column gather: ``out[i, k] = a[i, index[i, k]]``."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    if a.ndim != 2 or idx.ndim != 2 or idx.shape[0] != a.shape[0]:
        raise ShapeError("gather_cols", a.shape, idx.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError("gather_cols", a.shape, idx.shape, detail="index out of range")
    rows = np.arange(a.shape[0])[:, None]

    def vjp(g, out, x):
        gx = np.zeros_like(x)
        np.add.at(gx, (np.broadcast_to(rows, idx.shape), idx), g)
        return (gx,)

    return _apply("gather_cols", lambda x: x[rows, idx], vjp, a)
