"""Reverse-mode differentiation over dense float64 arrays.

Operations on :class:`Tensor` objects are recorded on the innermost active
:class:`Tape`. Every primitive expresses its vector-Jacobian product with
other primitives, so a backward pass run with ``create_graph=True`` is itself
recorded and can be differentiated again (exact second-order meta-gradients).
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

FIRST_ORDER = "first"
EXACT = "exact"
MODES = (FIRST_ORDER, EXACT)


class ShapeError(ValueError):
    pass


class SecondOrderError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_local = threading.local()


def _tapes() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
        _local.recording = True
    return _local.tapes


def current_tape() -> "Tape | None":
    tapes = _tapes()
    return tapes[-1] if tapes else None


@contextmanager
def _record(enabled: bool):
    _tapes()
    prev = _local.recording
    _local.recording = enabled
    try:
        yield
    finally:
        _local.recording = prev


def no_record():
    """Context in which operations produce constants."""
    return _record(False)


class Node:
    __slots__ = ("op", "inputs", "out", "saved", "index", "tape")

    def __init__(self, op, inputs, out, saved, index, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.saved = saved
        self.index = index
        self.tape = tape


class Tape:
    """Append-only record of differentiable operations.

    ``mode`` decides how :func:`sgd_step` treats inner gradients: ``"exact"``
    records them so outer gradients flow through, ``"first"`` treats them as
    constants.
    """

    def __init__(self, mode: str = FIRST_ORDER):
        if mode not in MODES:
            raise ValueError(f"unknown tape mode {mode!r}; expected one of {MODES}")
        self.mode = mode
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        tapes = _tapes()
        assert tapes and tapes[-1] is self
        tapes.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op, inputs, out, saved) -> Node:
        node = Node(op, inputs, out, saved, len(self.nodes), self)
        self.nodes.append(node)
        return node


class Tensor:
    __slots__ = ("value", "requires_grad", "node")
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False):
        self.value = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

    def __len__(self) -> int:
        return len(self.value)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- primitives


class Op:
    name = "op"
    # False means the vjp is not itself differentiable
    second_order = True

    def forward(self, *values, **kw):
        raise NotImplementedError

    def vjp(self, g: Tensor, node: Node) -> tuple:
        raise NotImplementedError


def apply(op: Op, *inputs, **kw) -> Tensor:
    inputs = tuple(as_tensor(t) for t in inputs)
    out_value, saved = op.forward(*(t.value for t in inputs), **kw)
    out = Tensor(out_value)
    tape = current_tape()
    if tape is not None and _local.recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = tape.record(op, inputs, out, saved)
    return out


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}") from None


def _fit(g: Tensor, shape: tuple) -> Tensor:
    return g if g.shape == shape else sum_to(g, shape)


class _Add(Op):
    name = "add"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        return a + b, None

    def vjp(self, g, node):
        a, b = node.inputs
        return _fit(g, a.shape), _fit(g, b.shape)


class _Sub(Op):
    name = "sub"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        return a - b, None

    def vjp(self, g, node):
        a, b = node.inputs
        return _fit(g, a.shape), _fit(neg(g), b.shape)


class _Mul(Op):
    name = "mul"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        return a * b, None

    def vjp(self, g, node):
        a, b = node.inputs
        ga = _fit(g * b, a.shape) if a.requires_grad else None
        gb = _fit(g * a, b.shape) if b.requires_grad else None
        return ga, gb


class _Div(Op):
    name = "div"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        if np.any(b == 0):
            raise ZeroDivisionError("division by exact zero")
        return a / b, None

    def vjp(self, g, node):
        a, b = node.inputs
        ga = _fit(g / b, a.shape) if a.requires_grad else None
        gb = _fit(neg(g * node.out / b), b.shape) if b.requires_grad else None
        return ga, gb


class _Neg(Op):
    name = "neg"

    def forward(self, a):
        return -a, None

    def vjp(self, g, node):
        return (neg(g),)


class _MatMul(Op):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
        return a @ b, None

    def vjp(self, g, node):
        a, b = node.inputs
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb


class _SpMM(Op):
    """Constant sparse matrix times dense matrix."""

    name = "spmm"

    def forward(self, x, matrix=None):
        if matrix.shape[1] != x.shape[0]:
            raise ShapeError(f"spmm shape mismatch: {matrix.shape} vs {x.shape}")
        return np.asarray(matrix @ x), matrix

    def vjp(self, g, node):
        return (spmm(node.saved.T, g),)


class _Transpose(Op):
    name = "transpose"

    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
        return a.T.copy(), None

    def vjp(self, g, node):
        return (transpose(g),)


class _Reshape(Op):
    name = "reshape"

    def forward(self, a, shape=None):
        return a.reshape(shape), a.shape

    def vjp(self, g, node):
        return (reshape(g, node.saved),)


class _Concat(Op):
    name = "concat"

    def forward(self, *xs, axis=1):
        try:
            out = np.concatenate(xs, axis=axis)
        except ValueError:
            raise ShapeError(
                "concat shape mismatch: " + " vs ".join(str(x.shape) for x in xs)
            ) from None
        return out, ([x.shape[axis] for x in xs], axis % out.ndim)

    def vjp(self, g, node):
        sizes, axis = node.saved
        grads = []
        start = 0
        for size in sizes:
            key = [slice(None)] * g.ndim
            key[axis] = slice(start, start + size)
            grads.append(getitem(g, tuple(key)))
            start += size
        return tuple(grads)


class _GetItem(Op):
    name = "getitem"

    def forward(self, a, key=None):
        return a[key], (key, a.shape)

    def vjp(self, g, node):
        key, shape = node.saved
        return (scatter_add(g, key, shape),)


class _ScatterAdd(Op):
    name = "scatter_add"

    def forward(self, g, key=None, shape=None):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return out, key

    def vjp(self, gg, node):
        return (getitem(gg, node.saved),)


class _ReLU(Op):
    name = "relu"

    def forward(self, a):
        mask = a > 0
        return np.where(mask, a, 0.0), mask

    def vjp(self, g, node):
        return (g * Tensor(node.saved.astype(np.float64)),)


class _Tanh(Op):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a), None

    def vjp(self, g, node):
        y = node.out
        return (g * (1.0 - y * y),)


class _Exp(Op):
    name = "exp"

    def forward(self, a):
        return np.exp(a), None

    def vjp(self, g, node):
        return (g * node.out,)


class _Log(Op):
    name = "log"

    def forward(self, a):
        if np.any(a <= 0):
            raise ValueError("log of non-positive value")
        return np.log(a), None

    def vjp(self, g, node):
        return (g / node.inputs[0],)


class _Square(Op):
    name = "square"

    def forward(self, a):
        return a * a, None

    def vjp(self, g, node):
        return (g * (2.0 * node.inputs[0]),)


class _Sqrt(Op):
    name = "sqrt"

    def forward(self, a):
        if np.any(a < 0):
            raise ValueError("sqrt of negative value")
        return np.sqrt(a), None

    def vjp(self, g, node):
        return (g / (2.0 * node.out),)


class _Sum(Op):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        kept = np.sum(a, axis=axis, keepdims=True).shape
        return np.sum(a, axis=axis, keepdims=keepdims), (a.shape, kept)

    def vjp(self, g, node):
        shape, kept = node.saved
        return (broadcast_to(reshape(g, kept), shape),)


class _BroadcastTo(Op):
    name = "broadcast_to"

    def forward(self, a, shape=None):
        try:
            return np.broadcast_to(a, shape).copy(), a.shape
        except ValueError:
            raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from None

    def vjp(self, g, node):
        return (sum_to(g, node.saved),)


class _SumTo(Op):
    name = "sum_to"

    def forward(self, a, shape=None):
        lead = a.ndim - len(shape)
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(shape) if n == 1 and a.shape[lead + i] != 1
        )
        out = np.sum(a, axis=axes, keepdims=True) if axes else a
        return out.reshape(shape), a.shape

    def vjp(self, g, node):
        return (broadcast_to(g, node.saved),)


class _RowSoftmax(Op):
    name = "row_softmax"

    def forward(self, a):
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True), None

    def vjp(self, g, node):
        y = node.out
        return (y * (g - tsum(g * y, axis=-1, keepdims=True)),)


class _LogSoftmax(Op):
    name = "log_softmax"

    def forward(self, a):
        s = a - a.max(axis=-1, keepdims=True)
        return s - np.log(np.exp(s).sum(axis=-1, keepdims=True)), None

    def vjp(self, g, node):
        return (g - exp(node.out) * tsum(g, axis=-1, keepdims=True),)


class _RowL2Normalize(Op):
    name = "row_l2_normalize"

    def forward(self, a):
        norms = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
        if np.any(norms == 0):
            rows = np.flatnonzero(norms.ravel() == 0).tolist()
            raise ZeroDivisionError(f"cannot normalize zero-norm rows {rows}")
        return a / norms, None

    def vjp(self, g, node):
        x = node.inputs[0]
        y = node.out
        norms = sqrt(tsum(square(x), axis=-1, keepdims=True))
        return ((g - y * tsum(g * y, axis=-1, keepdims=True)) / norms,)


class _SqDist(Op):
    """Pairwise squared Euclidean distances between rows of two matrices."""

    name = "sqdist"

    def forward(self, z, p):
        if z.ndim != 2 or p.ndim != 2 or z.shape[1] != p.shape[1]:
            raise ShapeError(f"sqdist shape mismatch: {z.shape} vs {p.shape}")
        diff = z[:, None, :] - p[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff), None

    def vjp(self, g, node):
        z, p = node.inputs
        gz = gp = None
        if z.requires_grad:
            gz = 2.0 * (z * tsum(g, axis=1, keepdims=True) - matmul(g, p))
        if p.requires_grad:
            col = transpose(tsum(g, axis=0, keepdims=True))
            gp = 2.0 * (p * col - matmul(transpose(g), z))
        return gz, gp


_ADD, _SUB, _MUL, _DIV, _NEG = _Add(), _Sub(), _Mul(), _Div(), _Neg()
_MATMUL, _SPMM, _TRANSPOSE, _RESHAPE = _MatMul(), _SpMM(), _Transpose(), _Reshape()
_GETITEM, _SCATTER, _CONCAT = _GetItem(), _ScatterAdd(), _Concat()
_RELU, _TANH, _EXP, _LOG, _SQUARE, _SQRT = _ReLU(), _Tanh(), _Exp(), _Log(), _Square(), _Sqrt()
_SUM, _BROADCAST, _SUMTO = _Sum(), _BroadcastTo(), _SumTo()
_SOFTMAX, _LOGSOFTMAX, _NORMALIZE, _SQDIST = _RowSoftmax(), _LogSoftmax(), _RowL2Normalize(), _SqDist()


def add(a, b) -> Tensor:
    return apply(_ADD, a, b)


def sub(a, b) -> Tensor:
    return apply(_SUB, a, b)


def mul(a, b) -> Tensor:
    return apply(_MUL, a, b)


def div(a, b) -> Tensor:
    return apply(_DIV, a, b)


def neg(a) -> Tensor:
    return apply(_NEG, a)


def matmul(a, b) -> Tensor:
    return apply(_MATMUL, a, b)


def spmm(matrix: sp.spmatrix, x) -> Tensor:
    return apply(_SPMM, x, matrix=matrix)


def transpose(a) -> Tensor:
    return apply(_TRANSPOSE, a)


def reshape(a, shape) -> Tensor:
    return apply(_RESHAPE, a, shape=tuple(shape))


def concat(xs: Sequence, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    return apply(_CONCAT, *xs, axis=axis)


def getitem(a, key) -> Tensor:
    return apply(_GETITEM, a, key=key)


def gather_rows(a, rows) -> Tensor:
    return getitem(a, np.asarray(rows, dtype=np.intp))


def scatter_add(g, key, shape) -> Tensor:
    return apply(_SCATTER, g, key=key, shape=tuple(shape))


def relu(a) -> Tensor:
    return apply(_RELU, a)


def tanh(a) -> Tensor:
    return apply(_TANH, a)


def exp(a) -> Tensor:
    return apply(_EXP, a)


def log(a) -> Tensor:
    return apply(_LOG, a)


def square(a) -> Tensor:
    return apply(_SQUARE, a)


def sqrt(a) -> Tensor:
    return apply(_SQRT, a)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    return apply(_SUM, a, axis=axis, keepdims=keepdims)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return apply(_BROADCAST, a, shape=tuple(shape))


def sum_to(a, shape) -> Tensor:
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return apply(_SUMTO, a, shape=tuple(shape))


def row_softmax(a) -> Tensor:
    return apply(_SOFTMAX, a)


def log_softmax(a) -> Tensor:
    return apply(_LOGSOFTMAX, a)


def row_l2_normalize(a) -> Tensor:
    return apply(_NORMALIZE, a)


def sqdist(z, p) -> Tensor:
    return apply(_SQDIST, z, p)


# ------------------------------------------------------------ parameter sets


class ParamSet:
    """Ordered name -> Tensor collection with a flat-vector view."""

    def __init__(self, entries: Iterable[tuple[str, Tensor]] | dict = ()):
        items = entries.items() if isinstance(entries, dict) else entries
        self._entries: "OrderedDict[str, Tensor]" = OrderedDict(
            (k, as_tensor(v)) for k, v in items
        )

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}: {v.shape}" for k, v in self._entries.items())
        return f"ParamSet({inner})"

    def names(self) -> list[str]:
        return list(self._entries)

    def values(self) -> list[Tensor]:
        return list(self._entries.values())

    def items(self):
        return self._entries.items()

    def shapes(self) -> list[tuple]:
        return [t.shape for t in self._entries.values()]

    @property
    def total_len(self) -> int:
        return sum(t.size for t in self._entries.values())

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([t.value.ravel() for t in self._entries.values()])

    def unflatten(self, vector, requires_grad: bool = False) -> "ParamSet":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.total_len,):
            raise ShapeError(f"flat vector shape {vector.shape} vs ({self.total_len},)")
        out, start = [], 0
        for name, t in self._entries.items():
            chunk = vector[start : start + t.size].reshape(t.shape).copy()
            out.append((name, Tensor(chunk, requires_grad=requires_grad)))
            start += t.size
        return ParamSet(out)

    def flat(self) -> Tensor:
        """Differentiable concatenation of all entries."""
        return concat([reshape(t, (t.size,)) for t in self._entries.values()], axis=0)

    def from_flat(self, flat: Tensor) -> "ParamSet":
        """Differentiable inverse of :meth:`flat` using this set's layout."""
        if flat.shape != (self.total_len,):
            raise ShapeError(f"flat tensor shape {flat.shape} vs ({self.total_len},)")
        out, start = [], 0
        for name, t in self._entries.items():
            piece = getitem(flat, slice(start, start + t.size))
            out.append((name, reshape(piece, t.shape)))
            start += t.size
        return ParamSet(out)

    def detached(self, requires_grad: bool = False) -> "ParamSet":
        return ParamSet(
            (k, Tensor(v.value.copy(), requires_grad=requires_grad)) for k, v in self.items()
        )

    def leaves(self) -> "ParamSet":
        return self.detached(requires_grad=True)

    def select(self, names: Iterable[str]) -> "ParamSet":
        return ParamSet((k, self._entries[k]) for k in names)

    def merged(self, other: "ParamSet") -> "ParamSet":
        return ParamSet(list(self.items()) + list(other.items()))

    def bit_equal(self, other: "ParamSet") -> bool:
        if self.names() != other.names() or self.shapes() != other.shapes():
            return False
        return self.flatten().tobytes() == other.flatten().tobytes()


# ------------------------------------------------------------------ backward


def grad(loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False,
         stop: Sequence[Tensor] = ()) -> list[Tensor]:
    """Gradients of a scalar ``loss`` with respect to ``wrt``.

    Tensors that did not participate get zeros. With ``create_graph`` the
    backward computation is recorded on the loss's tape. Cotangents are not
    propagated past tensors in ``stop``, which gives partial derivatives
    holding those tensors fixed.
    """
    if loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    wrt = list(wrt)
    results: list = [None] * len(wrt)
    if loss.node is None:
        return [Tensor(np.zeros(t.shape)) for t in wrt]

    tape = loss.node.tape
    live = {id(loss)}
    blocked = {id(t) for t in stop}
    path = []
    for node in reversed(tape.nodes[: loss.node.index + 1]):
        if id(node.out) in live and id(node.out) not in blocked:
            path.append(node)
            for t in node.inputs:
                if t.requires_grad:
                    live.add(id(t))

    if create_graph:
        missing = sorted({n.op.name for n in path if not n.op.second_order})
        if missing:
            raise SecondOrderError(
                "exact second-order mode needs second derivatives for: " + ", ".join(missing)
            )

    wanted: dict[int, list[int]] = {}
    for i, t in enumerate(wrt):
        wanted.setdefault(id(t), []).append(i)

    cot: dict[int, Tensor] = {id(loss): Tensor(1.0)}
    if create_graph:
        _tapes().append(tape)
    try:
        with _record(create_graph):
            for node in path:
                key = id(node.out)
                g = cot.pop(key, None)
                if g is None:
                    continue
                for i in wanted.get(key, ()):
                    results[i] = g
                grads = node.op.vjp(g, node)
                for t, gi in zip(node.inputs, grads):
                    if gi is None or not t.requires_grad:
                        continue
                    k = id(t)
                    cot[k] = gi if k not in cot else cot[k] + gi
    finally:
        if create_graph:
            _tapes().pop()

    for i, t in enumerate(wrt):
        if results[i] is None:
            g = cot.get(id(t))
            results[i] = g if g is not None else Tensor(np.zeros(t.shape))
    return results


def backward(loss: Tensor, wrt: ParamSet, create_graph: bool = False) -> ParamSet:
    grads = grad(loss, wrt.values(), create_graph=create_graph)
    return ParamSet(zip(wrt.names(), grads))


def sgd_step(loss: Tensor, params: ParamSet, lr: float, hold: Sequence[Tensor] = ()) -> ParamSet:
    """One differentiable descent step; honours the active tape's mode.

    In first-order mode the gradient is a constant, so the step passes the
    outer gradient straight through to ``params``. The step direction is the
    partial gradient with the tensors in ``hold`` kept fixed.
    """
    tape = current_tape()
    if tape is None or not _local.recording:
        raise RuntimeError("sgd_step needs an active recording tape")
    exact = tape.mode == EXACT
    grads = grad(loss, params.values(), create_graph=exact, stop=hold)
    return ParamSet(
        (name, p - lr * g) for (name, p), g in zip(params.items(), grads)
    )


def grad_of_grad(
    outer_loss_builder: Callable[[ParamSet], Tensor],
    inner_params: ParamSet,
    mode: str = EXACT,
) -> ParamSet:
    """Gradient of an outer loss that internally adapts ``inner_params``.

    The builder should perform its inner updates with :func:`sgd_step`.
    """
    params = inner_params.leaves()
    with Tape(mode):
        loss = outer_loss_builder(params)
        return backward(loss, params)


def finite_diff_check(
    f: Callable[[ParamSet], Tensor], params: ParamSet, h: float = 1e-5
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |numeric|).

    The analytic side is recorded in exact mode so inner updates inside ``f``
    are differentiated through, as the finite difference does.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    leaves = params.leaves()
    with Tape(EXACT):
        loss = f(leaves)
        if not np.isfinite(loss.value):
            raise NonFiniteError("f is non-finite at the base point")
        analytic = ParamSet(zip(leaves.names(), grad(loss, leaves.values()))).flatten()

    base = params.flatten()
    numeric = np.empty_like(base)

    def value(vec):
        # a scratch tape keeps inner sgd_step calls live; values match any mode
        with Tape():
            return f(params.unflatten(vec, requires_grad=True)).item()

    for i in range(base.size):
        probe = base.copy()
        probe[i] = base[i] + h
        up = value(probe)
        probe[i] = base[i] - h
        down = value(probe)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError(f"f is non-finite at probe coordinate {i}")
        numeric[i] = (up - down) / (2 * h)
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
