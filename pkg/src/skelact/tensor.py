"""Minimal reverse-mode autodiff on dense numpy arrays.

Every differentiable value is a :class:`Tensor` wrapping a numpy array.
Operations build an implicit tape: each result remembers its parents, a
gradient rule, and a monotonically increasing sequence number, so replaying
in decreasing sequence order visits operations in exact reverse execution
order.  Gradients accumulate additively at fan-out points and are returned
as a map from leaf tensors to arrays; nothing on the graph is mutated, so
calling :func:`backward` twice yields identical results.

Double precision is the default; single precision flows through untouched
when explicitly requested by the caller.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

_SEQ = itertools.count()
_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


class Tensor:
    """A dense array with an optional gradient trail.

    Tensors are value-semantic: ops never mutate their inputs.  Only leaf
    tensors created with ``requires_grad=True`` receive entries in the
    gradient map produced by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable | None = None
        self._seq = next(_SEQ)

    @classmethod
    def _op(cls, data: np.ndarray, parents: Sequence["Tensor"], grad_fn: Callable):
        """Build a non-leaf tensor recording `grad_fn` against `parents`.

        `grad_fn(g)` must return one gradient array (or None) per parent.
        When grad recording is off, or no parent requires grad, the result
        is a plain constant.
        """
        out = cls.__new__(cls)
        out.data = data
        out._seq = next(_SEQ)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._grad_fn = grad_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._grad_fn = None
        return out

    # ---- introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    # ---- operator sugar ------------------------------------------------

    def __matmul__(self, other):
        return matmul(self, _coerce(other, self))

    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, _coerce(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, Tensor(np.asarray(-1.0, dtype=self.data.dtype)))

    def __sub__(self, other):
        return add(self, -_coerce(other, self))

    def __rsub__(self, other):
        return add(_coerce(other, self), -self)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _reduce_leading(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Like _unbroadcast but only over matmul batch (leading) axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---- primitives ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting; operands must be >= 2-D."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    data = a.data @ b.data

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _reduce_leading(ga, a.shape), _reduce_leading(gb, b.shape)

    return Tensor._op(data, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._op(data, (a, b), grad_fn)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    data = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._op(data, (a, b), grad_fn)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return Tensor._op(data, (x,), grad_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    data = _sigmoid(x.data)

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return Tensor._op(data, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - data * data),)

    return Tensor._op(data, (x,), grad_fn)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return Tensor._op(data, (x,), grad_fn)


def inv_sqrt_or_zero(x: Tensor) -> Tensor:
    """x^(-1/2) where x > 0, exactly 0 elsewhere (degree normalization)."""
    data = np.zeros_like(x.data)
    pos = x.data > 0
    data[pos] = 1.0 / np.sqrt(x.data[pos])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[pos] = -0.5 * g[pos] * data[pos] / x.data[pos]
        return (gx,)

    return Tensor._op(data, (x,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._op(data, tensors, grad_fn)


def slice_(x: Tensor, key) -> Tensor:
    """Basic (view-style) indexing; gradient scatters back into place."""
    data = x.data[key]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)

    return Tensor._op(np.array(data, copy=True), (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return Tensor._op(data, (x,), grad_fn)


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    data = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inv),)

    return Tensor._op(data, (x,), grad_fn)


def broadcast(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Explicit broadcast to `shape`; gradient sums the expanded axes."""
    data = np.broadcast_to(x.data, shape).copy()

    def grad_fn(g):
        return (_unbroadcast(g, x.shape),)

    return Tensor._op(data, (x,), grad_fn)


def sum_over_axis(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._op(data, (x,), grad_fn)


def mean_over_axis(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for a in axes:
        n *= x.shape[a]
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy() / n,)

    return Tensor._op(data, (x,), grad_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return Tensor._op(data, (x,), grad_fn)


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-softmax probability of integer targets.

    `logits` has classes on the last axis; `targets` is an integer array of
    the remaining shape (or a plain int for 1-D logits).  `mask`, when
    given, weights entries (0 excludes a frame entirely: it contributes
    neither to the mean nor to the gradient).  Numerically stabilized by
    max subtraction.
    """
    t = np.asarray(targets, dtype=np.int64)
    lead = logits.shape[:-1]
    if t.shape != lead:
        raise ValueError(f"targets shape {t.shape} does not match logits {logits.shape}")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1))  # log-sum-exp of shifted
    picked = np.take_along_axis(shifted, t[..., None], axis=-1)[..., 0]
    per_entry = lse - picked
    if mask is None:
        w = np.ones(lead, dtype=z.dtype)
    else:
        w = np.asarray(mask, dtype=z.dtype)
        if w.shape != lead:
            raise ValueError("mask shape must match targets shape")
    denom = w.sum()
    if denom <= 0:
        raise ValueError("softmax_cross_entropy needs at least one unmasked entry")
    data = np.asarray((per_entry * w).sum() / denom)

    def grad_fn(g):
        p = np.exp(shifted - lse[..., None])
        np.put_along_axis(p, t[..., None], np.take_along_axis(p, t[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p * (w / denom)[..., None],)

    return Tensor._op(data, (logits,), grad_fn)


# ---- tape replay ---------------------------------------------------------


@dataclass
class Tape:
    """Ordered record of the operations reachable from one root tensor.

    `nodes` is in execution order; replaying it reversed visits every
    gradient rule in exact reverse execution order.  A tape is confined to
    the thread that ran the forward pass.
    """

    root: Tensor
    nodes: list[Tensor]

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(root=root, nodes=nodes)

    def gradients(self) -> dict[Tensor, np.ndarray]:
        """Replay the tape backward; returns grads for requires-grad leaves."""
        grads: dict[int, np.ndarray] = {id(self.root): np.ones_like(self.root.data)}
        by_id = {id(t): t for t in self.nodes}
        for t in reversed(self.nodes):
            g = grads.get(id(t))
            if g is None or t._grad_fn is None:
                continue
            parent_grads = t._grad_fn(g)
            for p, pg in zip(t._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        return {
            t: grads[i]
            for i, t in by_id.items()
            if t.requires_grad and t._grad_fn is None and i in grads
        }


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradient map of a scalar loss over every requires-grad leaf tensor."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar root")
    if not loss.requires_grad:
        raise ValueError("root does not require grad; nothing to differentiate")
    return Tape.from_root(loss).gradients()


# ---- finite differences ---------------------------------------------------


@dataclass
class FdReport:
    """Worst-case comparison of backward() against central differences."""

    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    per_param: dict[str, float]

    def __str__(self) -> str:
        return (
            f"max rel err {self.max_rel_error:.3e} at "
            f"{self.worst_param}{list(self.worst_index)}"
        )


def finite_difference_check(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-5,
    floor: float = 1e-5,
) -> FdReport:
    """Compare analytic gradients of `fn()` against central differences.

    `fn` must be a deterministic closure over `params` returning a scalar
    Tensor.  Every coordinate of every param is nudged by ±epsilon and the
    error |fd - bp| / max(|fd|, |bp|, floor) recorded.  The floor keeps
    near-zero gradients honest: central differences of a unit-scale loss
    carry ~1e-11 of cancellation noise at the default epsilon (one ulp of
    the loss divided by 2*epsilon), so relative comparison below `floor`
    would measure that noise, not correctness.  Callers should keep their
    probe losses at unit scale for the same reason.
    """
    analytic = backward(fn())
    worst = 0.0
    worst_param = ""
    worst_index: tuple[int, ...] = ()
    per_param: dict[str, float] = {}
    for name, p in params.items():
        bp = analytic.get(p)
        if bp is None:
            bp = np.zeros_like(p.data)
        local = 0.0
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + epsilon
            hi = float(fn().data)
            flat[i] = old - epsilon
            lo = float(fn().data)
            flat[i] = old
            fd = (hi - lo) / (2.0 * epsilon)
            bpv = float(bp.reshape(-1)[i])
            err = abs(fd - bpv) / max(abs(fd), abs(bpv), floor)
            if err > local:
                local = err
            if err > worst:
                worst = err
                worst_param = name
                worst_index = np.unravel_index(i, p.shape) if p.shape else ()
        per_param[name] = local
    return FdReport(worst, worst_param, tuple(int(j) for j in worst_index), per_param)
