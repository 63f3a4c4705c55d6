"""Dense tensors with reverse-mode automatic differentiation, plus Adam.

A :class:`Tensor` wraps a numpy array and remembers the op that produced it.
Calling :func:`backward` on a scalar tensor walks the recorded graph in
reverse topological order and returns a :class:`Gradients` mapping.

Broadcasting is deliberately narrow: two operands broadcast only when they
have identical shapes, when one is a 0-d scalar, or when one operand's shape
equals the other's shape without its leading (batch) axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

EXP_MAX = 30.0
LOG_MIN = 1e-12

Array = np.ndarray


class Tensor:
    """Shape-tagged dense array node in a differentiable graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: Array = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def parents(self) -> tuple["Tensor", ...]:
        return self._parents

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; semantics live in the module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _lift(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data: Array, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    out.op = op
    out._parents = parents
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
    return out


# ---------------------------------------------------------------- broadcasting


def _broadcast_kind(op: str, a: tuple, b: tuple) -> str:
    if a == b:
        return "same"
    if len(a) == 0:
        return "a_scalar"
    if len(b) == 0:
        return "b_scalar"
    if a[1:] == b:
        return "b_batch"
    if b[1:] == a:
        return "a_batch"
    raise ShapeError(op, a, b)


def _unbroadcast(grad: Array, kind: str, side: str) -> Array:
    if kind == "same":
        return grad
    if kind == f"{side}_scalar":
        return np.asarray(grad.sum(), dtype=grad.dtype)
    if kind == f"{side}_batch":
        return grad.sum(axis=0)
    return grad


# ------------------------------------------------------------------ arithmetic


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    kind = _broadcast_kind("add", a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, kind, "a"), _unbroadcast(g, kind, "b")

    return _node(a.data + b.data, "add", (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    kind = _broadcast_kind("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, kind, "a"), _unbroadcast(g * ad, kind, "b")

    return _node(ad * bd, "mul", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-D tensor with a 2-D or 1-D tensor."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _node(ad @ bd, "matmul", (a, b), backward)


# ------------------------------------------------------------------ elementwise


def exp(a: Tensor) -> Tensor:
    """exp with inputs clamped to at most ``EXP_MAX``."""
    x = a.data
    inside = x <= EXP_MAX
    y = np.exp(np.minimum(x, EXP_MAX))

    def backward(g):
        return (g * y * inside,)

    return _node(y, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    """log with inputs clamped to at least ``LOG_MIN``."""
    x = a.data
    inside = x >= LOG_MIN
    safe = np.maximum(x, LOG_MIN)

    def backward(g):
        return (g * inside / safe,)

    return _node(np.log(safe), "log", (a,), backward)


def relu(a: Tensor) -> Tensor:
    x = a.data
    mask = x > 0
    return _node(np.where(mask, x, 0).astype(x.dtype), "relu", (a,), lambda g: (g * mask,))


def _sigmoid(x: Array) -> Array:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _node(y, "sigmoid", (a,), lambda g: (g * y * (1 - y),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.logaddexp(0, x).astype(x.dtype), "softplus", (a,), lambda g: (g * _sigmoid(x),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient flows only where the input is inside."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), "clip", (a,), lambda g: (g * inside,))


# ------------------------------------------------------------------- reductions


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    x = a.data
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError("reduce_sum", x.shape, (axis,))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(np.asarray(x.sum(axis=axis), dtype=x.dtype), "reduce_sum", (a,), backward)


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / n)


def reduce_logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    x = a.data
    if x.size == 0:
        raise ShapeError("reduce_logsumexp", x.shape)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    s = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    out = s.reshape(()) if axis is None else np.squeeze(s, axis=axis)

    def backward(g):
        soft = np.exp(x - s)
        gg = g if axis is None else np.expand_dims(g, axis)
        return (gg * soft,)

    return _node(np.asarray(out, dtype=x.dtype), "reduce_logsumexp", (a,), backward)


def cumlogsumexp(a: Tensor) -> Tensor:
    """Running log-sum-exp of a 1-D tensor: ``out[k] = log sum_{j<=k} exp(a[j])``."""
    x = a.data
    if x.ndim != 1:
        raise ShapeError("cumlogsumexp", x.shape)
    y = np.logaddexp.accumulate(x)

    def backward(g):
        # d out[k] / d x[j] = exp(x[j] - out[k]) for j <= k; every factor is <= 1
        w = np.exp(np.minimum(x[None, :] - y[:, None], 0.0))
        w = np.tril(w)
        return (g @ w,)

    return _node(y, "cumlogsumexp", (a,), backward)


# ------------------------------------------------------------ shape and index


def slice_(a: Tensor, index) -> Tensor:
    x = a.data
    try:
        out = x[index]
    except IndexError as exc:
        raise ShapeError("slice", x.shape) from exc

    def backward(g):
        full = np.zeros_like(x)
        full[index] = g
        return (full,)

    return _node(np.array(out), "slice", (a,), backward)


def take(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; repeated indices accumulate gradient."""
    x = a.data
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0]):
        raise ShapeError("take", x.shape, idx.shape)

    def backward(g):
        full = np.zeros_like(x)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x[idx], "take", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", ())
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for k, (s, r) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)
        ):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = a.data
    if math.prod(shape) != x.size:
        raise ShapeError("reshape", x.shape, shape)
    return _node(x.reshape(shape), "reshape", (a,), lambda g: (g.reshape(x.shape),))


# ------------------------------------------------------------------ backward


@dataclass
class Graph:
    """Topologically ordered view of every differentiable node under a root."""

    nodes: list[Tensor]

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


@dataclass
class Gradients:
    """Gradient lookup keyed by tensor identity."""

    _by_id: dict[int, Array] = field(default_factory=dict)
    _keep: list[Tensor] = field(default_factory=list)

    def __getitem__(self, t: Tensor) -> Array:
        try:
            return self._by_id[id(t)]
        except KeyError:
            return np.zeros_like(t.data)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._by_id


def backward(root: Tensor) -> Gradients:
    """Reverse-mode pass from a scalar root; fills ``.grad`` on every leaf."""
    if root.data.size != 1:
        raise ShapeError("backward (root must be scalar)", root.shape)
    grads = Gradients()
    if not root.requires_grad:
        return grads
    graph = Graph.trace(root)
    acc: dict[int, Array] = {id(root): np.ones_like(root.data)}
    for node in reversed(graph.nodes):
        g = acc.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            grads._by_id[id(node)] = g
            grads._keep.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype).reshape(parent.shape)
            if id(parent) in acc:
                acc[id(parent)] = acc[id(parent)] + pg
            else:
                acc[id(parent)] = pg
    return grads


# ---------------------------------------------------------------------- Adam


class Adam:
    """Adam with bias correction; moments are kept in each parameter's dtype."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, Array] = {}
        self.v: dict[str, Array] = {}
        self.t = 0

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        """Update ``params`` in place."""
        for name, p in params.items():
            if grads[name].shape != p.shape:
                raise ShapeError("adam_step", p.shape, grads[name].shape)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": dict(self.m),
            "v": dict(self.v),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Adam":
        opt = cls(state["lr"], state["beta1"], state["beta2"], state["eps"])
        opt.t = state["t"]
        opt.m = {k: np.array(a) for k, a in state["m"].items()}
        opt.v = {k: np.array(a) for k, a in state["v"].items()}
        return opt


def leaves(arrays: dict[str, Array]) -> dict[str, Tensor]:
    """Wrap named arrays as parameter leaves sharing their storage."""
    return {k: Tensor(a, requires_grad=True) for k, a in arrays.items()}
