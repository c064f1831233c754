"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Each op returns a new :class:`Tensor`. When any input requires gradients the
op records a :class:`Node` in the active :class:`Graph`; nodes are appended in
creation order, so the node list is already a topological order and
:func:`backward` simply walks it in reverse.

Broadcasting is restricted to the trailing-axis rule: an operand ``b`` is
compatible with ``a`` iff ``b.shape == a.shape[a.ndim - b.ndim:]`` (a 0-d
scalar therefore broadcasts against anything). The broadcast operand is always
the second one.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs violate the shape contract of the op."""


class GraphError(RuntimeError):
    """Raised on invalid backward calls (non-scalar root, freed graph)."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self._node: Node | None = None
        self.name = name

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
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar, all routed through apply_op
    def __add__(self, other):
        return apply_op("add", self, _wrap(other))

    def __sub__(self, other):
        return apply_op("add", self, apply_op("scale", _wrap(other), alpha=-1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return apply_op("scale", self, alpha=float(other))
        return apply_op("mul", self, _wrap(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return apply_op("matmul", self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    # (output grad, per-input "needs grad" flags) -> per-input grads
    backward_fn: Callable[[np.ndarray, tuple[bool, ...]], tuple[np.ndarray | None, ...]]
    index: int = -1


@dataclass
class Graph:
    """Ordered record of differentiable ops built during one forward pass."""

    nodes: list[Node] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)


# Node indices come from one global counter so that nodes built outside an
# explicit graph context still sort topologically; only explicit graphs keep
# the node list (the default mode keeps nothing alive between steps).
_counter = itertools.count()
_active: list[Graph] = []


def active_graph() -> Graph | None:
    return _active[-1] if _active else None


class new_graph:
    """Context manager that records ops into a fresh graph."""

    def __init__(self):
        self.graph = Graph()

    def __enter__(self) -> Graph:
        _active.append(self.graph)
        return self.graph

    def __exit__(self, *exc) -> None:
        _active.pop()


class no_grad:
    """Context manager under which no op records nodes."""

    _depth = 0

    def __enter__(self):
        no_grad._depth += 1
        return self

    def __exit__(self, *exc):
        no_grad._depth -= 1


def grad_enabled() -> bool:
    return no_grad._depth == 0


# ---------------------------------------------------------------------------
# op table: each entry computes the forward value and a closure producing the
# per-input gradients from the output gradient.

def _trailing_ok(a: np.ndarray, b: np.ndarray) -> bool:
    return b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    return g


def _fail(kind: str, *shapes) -> ShapeError:
    return ShapeError(f"{kind}: incompatible shapes {', '.join(str(s) for s in shapes)}")


def _op_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _fail("matmul", a.shape, b.shape)
    out = a @ b
    return out, lambda g, need: (g @ b.T if need[0] else None, a.T @ g if need[1] else None)


def _op_add(a, b):
    if a.shape != b.shape and not _trailing_ok(a, b):
        raise _fail("add", a.shape, b.shape)
    return a + b, lambda g, need: (g, _reduce_to(g, b.shape))


def _op_broadcast_add(a, b):
    if b.ndim >= a.ndim or not _trailing_ok(a, b):
        raise _fail("broadcast_add", a.shape, b.shape)
    return a + b, lambda g, need: (g, _reduce_to(g, b.shape))


def _op_mul(a, b):
    if a.shape != b.shape and not _trailing_ok(a, b):
        raise _fail("mul", a.shape, b.shape)
    return a * b, lambda g, need: (g * b if need[0] else None,
                                   _reduce_to(g * a, b.shape) if need[1] else None)


def _op_scale(a, *, alpha: float):
    return alpha * a, lambda g, need: (alpha * g,)


def _op_tanh(a):
    y = np.tanh(a)
    return y, lambda g, need: (g * (1.0 - y * y),)


_GELU_C = math.sqrt(2.0 / math.pi)


def _op_gelu(a):
    # tanh approximation; derivative is exact for this form
    a2 = a * a
    th = np.tanh(_GELU_C * a * (1.0 + 0.044715 * a2))
    y = 0.5 * a * (1.0 + th)

    def back(g, need):
        du = _GELU_C * (1.0 + 0.134145 * a2)
        return (g * (0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du),)

    return y, back


def _op_sum(a):
    return np.asarray(a.sum()), lambda g, need: (np.full(a.shape, float(g)),)


def _op_mean(a):
    n = a.size
    return np.asarray(a.mean()), lambda g, need: (np.full(a.shape, float(g) / n),)


def _op_slice(a, *, start: int, stop: int, axis: int = -1):
    ax = axis % a.ndim
    if not 0 <= start < stop <= a.shape[ax]:
        raise _fail(f"slice[{start}:{stop}, axis={axis}]", a.shape)
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def back(g, need):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return a[idx].copy(), back


def _op_concat(*arrays, axis: int = -1):
    if not arrays:
        raise ShapeError("concat: no inputs")
    ax = axis % arrays[0].ndim
    try:
        out = np.concatenate(arrays, axis=ax)
    except ValueError:
        raise _fail("concat", *(x.shape for x in arrays)) from None
    bounds = np.cumsum([0] + [x.shape[ax] for x in arrays])

    def back(g, need):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(arrays)))

    return out, back


_OPS: dict[str, Callable] = {
    "matmul": _op_matmul,
    "add": _op_add,
    "broadcast_add": _op_broadcast_add,
    "mul": _op_mul,
    "scale": _op_scale,
    "tanh": _op_tanh,
    "gelu": _op_gelu,
    "sum": _op_sum,
    "mean": _op_mean,
    "slice": _op_slice,
    "concat": _op_concat,
}

OP_KINDS = tuple(_OPS)


def apply_op(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """Evaluate op ``kind`` on ``inputs`` and record it when gradients are needed."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    inputs = tuple(_wrap(x) for x in inputs)
    value, back = fn(*(x.data for x in inputs), **attrs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(value, dtype=np.float64)
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = grad_enabled() and any(x.requires_grad for x in inputs)
    if out.requires_grad:
        node = Node(kind, inputs, out, back, next(_counter))
        out._node = node
        if _active:
            _active[-1].nodes.append(node)
    return out


# functional spellings
def matmul(a, b): return apply_op("matmul", a, b)
def add(a, b): return apply_op("add", a, b)
def broadcast_add(a, b): return apply_op("broadcast_add", a, b)
def mul(a, b): return apply_op("mul", a, b)
def scale(a, alpha: float): return apply_op("scale", a, alpha=alpha)
def tanh(a): return apply_op("tanh", a)
def gelu(a): return apply_op("gelu", a)
def tsum(a): return apply_op("sum", a)
def mean(a): return apply_op("mean", a)
def slice_(a, start: int, stop: int, axis: int = -1): return apply_op("slice", a, start=start, stop=stop, axis=axis)
def concat(tensors: Sequence[Tensor], axis: int = -1): return apply_op("concat", *tensors, axis=axis)


def sub(a, b):
    return add(a, scale(b, -1.0))


def square(a):
    return mul(a, a)


# ---------------------------------------------------------------------------

def backward(root: Tensor, retain_graph: bool = True) -> dict[int, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a map ``id(leaf) -> grad`` for the leaves touched by this call.
    With ``retain_graph=False`` the node closures are dropped afterwards and a
    second call on the same root raises :class:`GraphError`.
    """
    if root.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if root._node is None:
        if not root.requires_grad:
            return {}
        g = np.ones(root.shape)
        root.grad = g if root.grad is None else root.grad + g
        return {id(root): g}
    if root._node.backward_fn is None:
        raise GraphError("graph already freed")

    # collect reachable nodes, then sort by recording index (= topological order)
    seen: set[int] = set()
    order: list[Node] = []
    stack = [root._node]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        for x in node.inputs:
            if x._node is not None:
                stack.append(x._node)
    order.sort(key=lambda n: n.index)

    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(order):
        if node.backward_fn is None:
            raise GraphError("graph already freed")
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        need = tuple(x.requires_grad for x in node.inputs)
        for x, g in zip(node.inputs, node.backward_fn(g_out, need)):
            if g is None or not x.requires_grad:
                continue
            key = id(x)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if x._node is None:
                leaves[key] = x

    touched = {}
    for key, leaf in leaves.items():
        g = grads[key]
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        leaf.grad = leaf.grad + g
        touched[key] = g

    if not retain_graph:
        for node in order:
            node.backward_fn = None
    return touched


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` rebuilds the graph from the current parameter values and returns the
    scalar loss. Relative error per entry is
    ``|auto - fd| / max(1, |fd|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for p in params:
        p.zero_grad()
    with new_graph():
        loss = f()
        backward(loss)
    auto = [np.array(p.grad, copy=True) for p in params]

    worst = 0.0
    with no_grad():
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = f().item()
                flat[j] = orig - eps
                down = f().item()
                flat[j] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise FloatingPointError(
                        f"non-finite loss while probing parameter {pi} entry {j}")
                fd = (up - down) / (2 * eps)
                err = abs(auto[pi].reshape(-1)[j] - fd) / max(1.0, abs(fd))
                worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
