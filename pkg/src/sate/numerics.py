"""Dense float tensors with tape-based reverse-mode differentiation.

Every tensor produced by an operation on a ``requires_grad`` input remembers
its parents and a backward rule.  Creation order is recorded through a global
monotonically increasing id, so sorting the reachable nodes by id gives a
valid topological order; :func:`backward` walks that tape in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "ContractError",
    "NonFiniteError",
    "no_grad",
    "is_grad_enabled",
    "set_debug",
    "backward",
    "matmul",
    "add",
    "scale",
    "concat",
    "stack",
    "where",
    "masked_fill",
    "exp",
    "log",
    "relu",
    "softmax",
    "log_softmax",
    "logsumexp",
    "layer_norm",
    "embed_lookup",
    "dropout_mask",
    "dropout",
    "cross_entropy_with_label_smoothing",
    "grad_check",
    "GradCheckReport",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its preconditions."""


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an operation produces NaN or Inf."""


_ids = itertools.count()
_local = threading.local()
_debug = False


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def record_kinks():
    """Collect the active-set pattern of every piecewise op evaluated inside."""
    prev = getattr(_local, "kinks", None)
    _local.kinks = log = []
    try:
        yield log
    finally:
        _local.kinks = prev


def _note_kink(active: np.ndarray) -> None:
    log = getattr(_local, "kinks", None)
    if log is not None:
        log.append(np.packbits(active).tobytes())


def set_debug(enabled: bool) -> None:
    """Toggle NaN/Inf checking after every operation (off by default)."""
    global _debug
    _debug = bool(enabled)


def _float_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray) and dtype is None:
        dtype = np.float64 if data.dtype == np.float64 else np.float32
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _float_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_ids)
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], rule: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._id = next(_ids)
        out._op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = rule
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        if _debug and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by {op}")
        return out

    # -- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_lift(other, self))

    def __rsub__(self, other):
        return add(_lift(other, self), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Tape and backward pass
# ---------------------------------------------------------------------------


@dataclass
class Tape:
    """Operations reachable from an output, in topological (creation) order."""

    records: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen.add(node._id)
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._id)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def backward(loss: Tensor, visit: Callable[[Tensor], None] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if visit is not None:
            visit(node)
        if node._backward is None:
            g = g.astype(node.data.dtype, copy=False).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    out = a.data + b.data

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), rule, "add")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        return scale(a, b) if np.ndim(b) == 0 else mul(a, _lift(b, a))
    out = a.data * b.data

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), rule, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), rule, "div")


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._from_op(t.data * t.data.dtype.type(c), (t,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading dims so the weight gradient is one GEMM
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def rule(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return Tensor._from_op(out, (a, b), rule, "matmul")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), rule, "matmul")


def tsum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape),)

    return Tensor._from_op(np.asarray(out), (t,), rule, "sum")


def tmean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = t.data.size if axis is None else int(np.prod([t.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(t, axis, keepdims), 1.0 / n)


def reshape(t: Tensor, shape) -> Tensor:
    out = t.data.reshape(shape)
    return Tensor._from_op(out, (t,), lambda g: (g.reshape(t.shape),), "reshape")


def transpose(t: Tensor, axes=None) -> Tensor:
    axes = tuple(range(t.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = t.data.transpose(axes)
    return Tensor._from_op(out, (t,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, slice, np.integer)) for i in items)


def getitem(t: Tensor, index) -> Tensor:
    out = t.data[index]
    basic = _is_basic_index(index)

    def rule(g):
        full = np.zeros_like(t.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.asarray(out), (t,), rule, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tensors, rule, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(out, tensors, rule, "stack")


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is a constant mask."""
    ref = a if isinstance(a, Tensor) else b
    a, b = _lift(a, ref), _lift(b, ref)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def rule(g):
        ga = _unbroadcast(np.where(cond, g, 0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(cond, 0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), rule, "where")


def masked_fill(t: Tensor, mask: np.ndarray, value: float) -> Tensor:
    return where(mask, Tensor(np.asarray(value, dtype=t.dtype)), t)


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return Tensor._from_op(out, (t,), lambda g: (g * out,), "exp")


def log(t: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = np.log(t.data)
    return Tensor._from_op(out, (t,), lambda g: (g / t.data,), "log")


def relu(t: Tensor) -> Tensor:
    out = np.maximum(t.data, 0)
    _note_kink(out > 0)
    return Tensor._from_op(out, (t,), lambda g: (g * (out > 0),), "relu")


# ---------------------------------------------------------------------------
# Normalizations
# ---------------------------------------------------------------------------


def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    out = _softmax_np(t.data, axis)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (t,), rule, "softmax")


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (t,), rule, "log_softmax")


def logsumexp(t: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = t.data.max(axis=axis, keepdims=True)
    s = np.exp(t.data - m)
    total = s.sum(axis=axis, keepdims=True)
    out = m + np.log(total)
    weights = s / total

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return Tensor._from_op(out if keepdims else np.squeeze(out, axis), (t,), rule, "logsumexp")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        dbeta = g.sum(axis=lead) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
        return dx, dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), rule, "layer_norm")


# ---------------------------------------------------------------------------
# Lookup, dropout, losses
# ---------------------------------------------------------------------------


def embed_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return Tensor._from_op(out, (table,), rule, "embed_lookup")


def dropout_mask(shape, p: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: kept entries are scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p}")
    keep = rng.random(shape, dtype=np.float32) >= p
    return keep.astype(dtype) * np.dtype(dtype).type(1.0 / (1.0 - p))


def dropout(t: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p == 0.0 or rng is None:
        return t
    return mul(t, Tensor(dropout_mask(t.shape, p, rng, t.dtype)))


def cross_entropy_with_label_smoothing(
    logits: Tensor,
    target,
    eps: float = 0.1,
    weights: np.ndarray | None = None,
    reduction: str = "mean",
) -> Tensor:
    """(1-eps) * NLL(target) + eps * mean NLL over the vocabulary, per row.

    ``logits`` is (N, C); ``weights`` (N,) zero out padded rows.  ``mean``
    divides by the weight total, ``sum`` does not.
    """
    if not 0.0 <= eps < 1.0:
        raise ContractError(f"label smoothing must lie in [0, 1), got {eps}")
    if logits.ndim != 2:
        raise DimensionError(f"expected (N, C) logits, got {logits.shape}")
    n, c = logits.shape
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if target.shape[0] != n:
        raise DimensionError(f"{n} rows of logits but {target.shape[0]} targets")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
    live = w != 0
    if np.any((target[live] < 0) | (target[live] >= c)):
        raise IndexError(f"target index out of range [0, {c})")
    safe_target = np.where(live, target, 0)

    lp = logits.data - logits.data.max(axis=1, keepdims=True)
    lp = lp - np.log(np.exp(lp).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    per_row = -(1.0 - eps) * lp[rows, safe_target] - eps * lp.mean(axis=1)
    denom = max(float(w.sum()), 1e-12) if reduction == "mean" else 1.0
    out = np.asarray((per_row * w).sum() / denom, dtype=logits.dtype)

    def rule(g):
        grad = np.exp(lp) - eps / c
        grad[rows, safe_target] -= 1.0 - eps
        grad *= (w / denom)[:, None]
        return ((grad * g).astype(logits.dtype, copy=False),)

    return Tensor._from_op(out, (logits,), rule, "cross_entropy")


# ---------------------------------------------------------------------------
# Finite-difference checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    tol: float
    n_checked: int
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries absolute."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[..., Tensor],
    point: Iterable[np.ndarray],
    h: float = 1e-3,
    tol: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = True,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f`` against central differences.

    Inputs are promoted to float64.  ``max_entries`` samples that many
    coordinates per input instead of probing all of them.  With
    ``skip_kinks`` a coordinate whose +-h probes change the active set of a
    ReLU is left out (the difference quotient straddles a kink there); the
    number left out is reported.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with record_kinks() as base_kinks:
        out = f(*tensors)
    backward(out)
    errors = []
    checked = skipped = 0
    for k, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = np.arange(t.data.size)
        if max_entries is not None and flat.size > max_entries:
            flat = (rng or np.random.default_rng(0)).choice(flat, size=max_entries, replace=False)
        keep = np.ones(flat.size, dtype=bool)
        numeric = np.empty(flat.size)
        for j, idx in enumerate(flat):
            pos = np.unravel_index(idx, t.shape)
            vals = []
            for sign in (1.0, -1.0):
                probe = [a.copy() for a in arrays]
                probe[k][pos] += sign * h
                with no_grad(), record_kinks() as kinks:
                    vals.append(f(*[Tensor(p) for p in probe]).item())
                if skip_kinks and kinks != base_kinks:
                    keep[j] = False
            numeric[j] = (vals[0] - vals[1]) / (2 * h)
        err = relative_error(analytic.reshape(-1)[flat[keep]], numeric[keep])
        errors.append(float(err.max()) if err.size else 0.0)
        checked += int(keep.sum())
        skipped += int((~keep).sum())
    return GradCheckReport(max(errors, default=0.0), errors, tol, checked, skipped)
