"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are recorded define-by-run: every differentiable op returns a new
:class:`Tensor` that remembers its parents and a closure mapping the output
gradient to parent gradients.  Nothing is recorded when no input requires a
gradient, so frozen inference pays no bookkeeping cost.

Broadcasting is deliberately narrow.  Binary ops accept equal shapes, a
python scalar, or (for ``add`` only) a 1-D bias matching the trailing axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import ContractError, ShapeError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ShapeError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# tape and backward pass
# ---------------------------------------------------------------------------

@dataclass
class Tape:
    """Recorded operations in topological order (inputs before outputs)."""

    nodes: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return Tape(order)


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Sets ``.grad`` on every leaf that requires a gradient and returns a map
    from leaf tensor to gradient array.  Tensors listed in ``wrt`` that the
    loss does not depend on receive zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    if loss.requires_grad:
        tape = build_tape(loss)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                leaves[node] = g
                continue
            pgs = node._backward(g)
            for p, pg in zip(node._parents, pgs):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    if wrt is not None:
        for t in wrt:
            if t not in leaves:
                t.grad = np.zeros_like(t.data)
                leaves[t] = t.grad
    return leaves


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if np.isscalar(b):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")
    b = as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _make(a.data + b.data, (a, b), lambda g: (g, g.reshape(-1, n).sum(axis=0)), "add_bias")
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if np.isscalar(b):
        return add(a, -float(b))
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if np.isscalar(b):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "scale")
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def _gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS picks kernels by shape: single-row products go through gemv, and a
    # column count that is not a multiple of the kernel width is blocked
    # differently for different row counts.  Zero padding keeps every row on
    # the same path, so a sequence prefix reproduces the full run bit for bit.
    m, n = a.shape[-2], b.shape[-1]
    pad_n = -n % 8
    if m == 1:
        a = np.concatenate([a, np.zeros_like(a)], axis=-2)
    if pad_n:
        b = np.concatenate([b, np.zeros(b.shape[:-1] + (pad_n,))], axis=-1)
    out = a @ b
    return out[..., :m, :n] if (m == 1 or pad_n) else out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    ``b`` is either a 2-D weight shared across the leading axes of ``a`` or a
    batch of matrices whose leading axes equal those of ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k, n = bd.shape

        def bw(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n) if b.requires_grad else None
            return ga, gb

        return _make(_gemm(ad, bd), (a, b), bw, "matmul")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ between {a.shape} and {b.shape}")

    def bwb(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(_gemm(ad, bd), (a, b), bwb, "bmm")


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: needs equal-length vectors, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(np.array(ad @ bd), (a, b), lambda g: (g * bd, g * ad), "dot")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(np.array(a.data[idx]), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = 1.0 / (1.0 + np.exp(-x))
    return _make(x * s, (a,), lambda g: (g * s * (1.0 + x * (1.0 - s)),), "silu")


# ---------------------------------------------------------------------------
# normalisation, attention, loss primitives
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``.

    ``mask`` is an optional boolean array broadcastable to ``x``; entries that
    are False receive probability zero.  Every row must keep at least one
    unmasked entry.
    """
    x = as_tensor(x)
    xd = x.data
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    moved = np.moveaxis(xd, axis, -1)
    mshape = moved.shape
    y = np.moveaxis(K.softmax_rows(moved.reshape(-1, mshape[-1])).reshape(mshape), -1, axis)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax along the last axis, computed via log-sum-exp."""
    x = as_tensor(x)
    shape = x.shape
    ls = K.log_softmax_rows(x.data.reshape(-1, shape[-1])).reshape(shape)

    def bw(g):
        return (g - np.exp(ls) * np.sum(g, axis=-1, keepdims=True),)

    return _make(ls, (x,), bw, "log_softmax")


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """``gain * x / sqrt(mean(x**2) + eps)`` over the trailing axis."""
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.ndim != 1 or gain.shape[0] != x.shape[-1]:
        raise ShapeError(f"rms_norm: gain {gain.shape} does not match input {x.shape}")
    if eps <= 0:
        raise ContractError("rms_norm: eps must be positive")
    shape = x.shape
    x2 = x.data.reshape(-1, shape[-1])
    y, inv = K.rms_norm_fwd(x2, gain.data, eps)

    def bw(g):
        gx, gg = K.rms_norm_bwd(x2, gain.data, inv, g.reshape(-1, shape[-1]))
        return gx.reshape(shape), gg

    return _make(y.reshape(shape), (x, gain), bw, "rms_norm")


def rope_tables(positions: np.ndarray, head_dim: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    if head_dim % 2:
        raise ShapeError(f"rotary embedding needs an even head dimension, got {head_dim}")
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    x0 = x[..., 0::2]
    x1 = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out


def rope(x: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate channel pairs of ``x[..., T, head_dim]`` by position-dependent angles."""
    x = as_tensor(x)
    pos = np.atleast_1d(np.asarray(positions))
    if x.ndim < 2 or pos.shape[0] != x.shape[-2]:
        raise ShapeError(f"rope: {pos.shape[0]} positions for input of shape {x.shape}")
    cos, sin = rope_tables(pos, x.shape[-1], base)
    return _make(_rotate(x.data, cos, sin), (x,), lambda g: (_rotate(g, cos, -sin),), "rope")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for table with {vocab} rows")

    def bw(g):
        out = np.zeros(table.shape)
        np.add.at(out, ids, g)
        return (out,)

    return _make(table.data[ids], (table,), bw, "embedding")


def cross_entropy_logits(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Summed token cross-entropy ``-sum_i log softmax(logits_i)[targets_i]``.

    Rows whose target equals ``ignore_index`` contribute nothing.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects [T, V] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, vocab = logits.shape
    if t.shape[0] != n:
        raise ShapeError(f"{t.shape[0]} targets for {n} logit rows")
    keep = np.ones(n, dtype=bool) if ignore_index is None else t != ignore_index
    tk = t[keep]
    if tk.size and (tk.min() < 0 or tk.max() >= vocab):
        raise IndexError(f"target id out of range for vocabulary of size {vocab}")
    rows = np.nonzero(keep)[0]
    ls = K.log_softmax_rows(logits.data)
    loss = -np.sum(ls[rows, tk])

    def bw(g):
        p = np.exp(ls)
        p[~keep] = 0.0
        p[rows, tk] -= 1.0
        return (p * g,)

    return _make(np.array(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)))


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    backward(f(xt), wrt=[xt])
    analytic = xt.grad.reshape(-1)
    numeric = np.empty_like(analytic)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        numeric[i] = (fp - fm) / (2 * h)
    return _rel_err(analytic, numeric)


def _tensor_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(np.linalg.norm(analytic - numeric) / denom) if denom > 0 else 0.0


def grad_check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                      per: str = "element") -> float:
    """Like :func:`grad_check` but perturbs every coordinate of every parameter in place.

    ``per="tensor"`` measures the error normwise for each parameter tensor,
    which ignores entries whose true gradient is below the rounding noise of
    the difference quotient.
    """
    if per not in ("element", "tensor"):
        raise ValueError(f"per must be 'element' or 'tensor', got {per!r}")
    metric = _rel_err if per == "element" else _tensor_err
    params = list(params)
    backward(loss_fn(), wrt=params)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        base = p.data
        numeric = np.empty_like(analytic)
        flat = base.reshape(-1)
        for i in range(flat.size):
            xp = flat.copy()
            xp[i] += h
            p.data = xp.reshape(base.shape)
            fp = loss_fn().item()
            xm = flat.copy()
            xm[i] -= h
            p.data = xm.reshape(base.shape)
            fm = loss_fn().item()
            numeric[i] = (fp - fm) / (2 * h)
        p.data = base
        worst = max(worst, metric(analytic, numeric))
    return worst
