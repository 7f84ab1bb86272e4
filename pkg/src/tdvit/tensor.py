"""Dense tensors with reverse-mode automatic differentiation.

Values are contiguous row-major numpy arrays. Every differentiable
operation records its inputs and a backward rule on the output tensor,
so the graph is a tape rebuilt on each forward pass. ``backward`` walks
that tape once in reverse topological order and accumulates gradients
into the leaves.

Precision is a per-tensor choice (float32 for training, float64 for
verification); nothing here is a global switch. A graph and its tensors
belong to one worker at a time: none of these ops lock or share state.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

# When True, every op asserts its output is finite. Off by default:
# it costs a full pass over each result.
DEBUG_CHECKS = False

_seq_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense array plus an optional gradient slot and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_seq", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._bwd: Optional[Callable[[np.ndarray], None]] = None
        self._seq = next(_seq_counter)
        self._op = "leaf"

    # -- array-ish accessors -------------------------------------------------

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be shared with other consumers of the same upstream grad
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd, op: str) -> Tensor:
    """Wrap an op result, recording tape linkage when grads are enabled."""
    if DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq_counter)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


def _contig(x: np.ndarray) -> np.ndarray:
    """C-contiguous copy when needed; unlike np.ascontiguousarray, keeps 0-d shape."""
    return x if x.flags["C_CONTIGUOUS"] else np.ascontiguousarray(x).reshape(x.shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate_grad(-g)

    return _make(-a.data, (a,), bwd, "neg")


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Backward follows dA = dC @ B^T and dB = A^T @ dC.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul shape mismatch: {tuple(a.shape)} x {tuple(b.shape)}"
        )
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd, "matmul")


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at exactly 0 is 0."""
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        a.accumulate_grad(g * mask)

    return _make(np.where(mask, a.data, 0), (a,), bwd, "relu")


def sigmoid(a: Tensor) -> Tensor:
    """1 / (1 + exp(-x)), stable for large |x|."""
    a = as_tensor(a)
    z = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    out_data = out_data.astype(a.dtype, copy=False)

    def bwd(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), stable; derivative is sigmoid(x)."""
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)

    def bwd(g):
        z = np.exp(-np.abs(a.data))
        s = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        a.accumulate_grad(g * s)

    return _make(out_data, (a,), bwd, "softplus")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    inner = erf(x * np.sqrt(0.5))
    out_data = (0.5 * x * (1.0 + inner)).astype(a.dtype, copy=False)

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * (1.0 / np.sqrt(2.0 * np.pi))
        a.accumulate_grad(g * (0.5 * (1.0 + inner) + x * pdf))

    return _make(out_data, (a,), bwd, "gelu")


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        a.accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), bwd, "log")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, with per-row max subtraction."""
    a = as_tensor(a)
    out_data = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(out_data, out=out_data)
    out_data /= out_data.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a.accumulate_grad((g - dot) * out_data)

    return _make(out_data, (a,), bwd, "softmax_rows")


# -- reductions and shape ops -------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.accumulate_grad(np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False))

    return _make(np.asarray(out_data), (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def bwd(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        a.accumulate_grad(_contig(g.transpose(inv)))

    return _make(_contig(a.data.transpose(axes)), (a,), bwd, "transpose")


def transpose_last2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    perm = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, perm)


def expand(a: Tensor, shape) -> Tensor:
    """Broadcast to `shape` (materialized); backward sums the copies."""
    a = as_tensor(a)
    shape = tuple(shape)
    out_data = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))

    return _make(out_data, (a,), bwd, "expand")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(_contig(g[tuple(idx)]))

    return _make(out_data, tuple(tensors), bwd, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate_grad(_contig(np.take(g, i, axis=axis)))

    return _make(out_data, tuple(tensors), bwd, "stack")


def _rows3(x: np.ndarray):
    """View (..., N, D) as (L, N, D) plus the leading shape."""
    lead = x.shape[:-2]
    return x.reshape((-1,) + x.shape[-2:]), lead


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along the second-to-last axis.

    `idx` has shape lead+(K,) (or (K,), broadcast over leading axes);
    backward scatter-adds into the source rows.
    """
    a = as_tensor(a)
    lead = a.shape[:-2]
    idx = np.broadcast_to(np.asarray(idx, dtype=np.intp), lead + np.asarray(idx).shape[-1:])
    a3, _ = _rows3(a.data)
    idx2 = idx.reshape(a3.shape[0], -1)
    rows = np.arange(a3.shape[0])[:, None]
    out_data = _contig(a3[rows, idx2]).reshape(lead + (idx2.shape[1], a.shape[-1]))

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga3, _ = _rows3(ga)
        np.add.at(ga3, (rows, idx2), g.reshape(idx2.shape + (a.shape[-1],)))
        a.accumulate_grad(ga)

    return _make(out_data, (a,), bwd, "gather_rows")


def scatter_rows(base: Tensor, idx, rows_t: Tensor) -> Tensor:
    """Copy of `base` with rows at `idx` (unique per batch) replaced by `rows_t`."""
    base = as_tensor(base)
    rows_t = as_tensor(rows_t)
    lead = base.shape[:-2]
    idx = np.broadcast_to(np.asarray(idx, dtype=np.intp), lead + np.asarray(idx).shape[-1:])
    out_data = base.data.copy()
    out3, _ = _rows3(out_data)
    idx2 = idx.reshape(out3.shape[0], -1)
    rsel = np.arange(out3.shape[0])[:, None]
    out3[rsel, idx2] = rows_t.data.reshape(idx2.shape + (base.shape[-1],))

    def bwd(g):
        if rows_t.requires_grad:
            g3 = g.reshape(out3.shape)
            rows_t.accumulate_grad(
                _contig(g3[rsel, idx2]).reshape(rows_t.shape)
            )
        if base.requires_grad:
            gb = g.copy()
            gb3 = gb.reshape(out3.shape)
            gb3[rsel, idx2] = 0
            base.accumulate_grad(gb)

    return _make(out_data, (base, rows_t), bwd, "scatter_rows")


def layer_norm(a: Tensor, scale: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out_data = y * scale.data + offset.data

    def bwd(g):
        lead_axes = tuple(range(g.ndim - 1))
        if scale.requires_grad:
            scale.accumulate_grad((g * y).sum(axis=lead_axes))
        if offset.requires_grad:
            offset.accumulate_grad(g.sum(axis=lead_axes))
        if a.requires_grad:
            dy = g * scale.data
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * y).mean(axis=-1, keepdims=True)
            a.accumulate_grad(inv * (dy - m1 - y * m2))

    return _make(out_data, (a, scale, offset), bwd, "layer_norm")


# -- backward pass ------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    """Reachable tape nodes, ordered by creation sequence (a topological order)."""
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate grad on every requires_grad leaf reachable from a scalar loss.

    Gradients accumulate additively, both across reuse of a tensor inside
    one graph and across repeated backward calls (zero_grad to reset).
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {tuple(loss.shape)}")
    nodes = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node._bwd is None:
            node.accumulate_grad(g)
            continue
        # Route parent contributions through a local map so stale .grad
        # values from earlier backward calls never leak into this pass.
        saved = {}
        for p in node._parents:
            if p.requires_grad:
                saved[id(p)] = p.grad
                p.grad = None
        node._bwd(g)
        for p in node._parents:
            if id(p) in saved:
                if p.grad is not None:
                    key = id(p)
                    grads[key] = p.grad if key not in grads else grads[key] + p.grad
                p.grad = saved.pop(id(p))


def global_grad_norm(tensors: Iterable[Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))
