"""A small dense reverse-mode autodiff engine on float64 numpy arrays.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. :func:`backward`
walks the recorded graph in reverse topological order. Gradients are
accumulated into ``.grad`` of leaf tensors that ``requires_grad``; calling
``backward`` twice without :meth:`Tensor.zero_grad` sums the two passes.

Non-differentiable points use subgradient 0 (relu at 0, norm at 0, arcosh at
its clamp boundary).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .hypgeom import EPS_EXP


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = "",
                 _owned: bool = False):
        # op outputs are fresh arrays; anything else is copied so callers can't mutate it
        arr = np.asarray(data, dtype=np.float64) if _owned else np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if any(data.base is p.data or data is p.data for p in parents):
        data = data.copy()
    if not any(p.requires_grad for p in parents):
        return Tensor(data, op=op, _owned=True)
    return Tensor(data, True, tuple(parents), backward, op, _owned=True)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ------------------------------------------------------------------ elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def cosh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.cosh(a.data), (a,), lambda g: (g * np.sinh(a.data),), "cosh")


def sinh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sinh(a.data), (a,), lambda g: (g * np.cosh(a.data),), "sinh")


def arcosh(a) -> Tensor:
    """``arcosh(max(a, 1))``; gradient 0 wherever the clamp is active or at 1."""
    a = as_tensor(a)
    z = a.data
    inside = z > 1.0
    out = np.arccosh(np.maximum(z, 1.0))

    def back(g):
        denom = np.sqrt(np.where(inside, z * z - 1.0, 1.0))
        return (np.where(inside, g / denom, 0.0),)

    return _make(out, (a,), back, "arcosh")


def bounded(a, k: float = 1.0) -> Tensor:
    """``k * a / (1 + a)`` for nonnegative ``a``."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("bounded: negative distance")
    one_plus = 1.0 + a.data
    return _make(k * a.data / one_plus, (a,), lambda g: (g * k / (one_plus * one_plus),), "bounded")


# ------------------------------------------------------------------ structural

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def propagate(op: sp.csr_matrix, x) -> Tensor:
    """Sparse constant operator times dense tensor."""
    x = as_tensor(x)
    if op.shape[1] != x.shape[0]:
        raise ValueError(f"propagate: operator {op.shape} vs input {x.shape}")
    indptr, indices = op.indptr.astype(np.int64), op.indices.astype(np.int64)
    out = kernels.csr_matmul(indptr, indices, op.data, np.ascontiguousarray(x.data))

    def back(g):
        t = op.T.tocsr()
        t.sort_indices()
        return (kernels.csr_matmul(t.indptr.astype(np.int64), t.indices.astype(np.int64),
                                   t.data, np.ascontiguousarray(g)),)

    return _make(out, (x,), back, "propagate")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back, "sum")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def back(g):
        full = np.zeros(a.shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), back, "getitem")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def diagonal(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"diagonal: expected square matrix, got {a.shape}")
    return _make(np.diagonal(a.data).copy(), (a,), lambda g: (np.diag(g),), "diagonal")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def row_norm(a) -> Tensor:
    """Row-wise L2 norm of a matrix; subgradient 0 for zero rows."""
    a = as_tensor(a)
    r = np.sqrt(np.einsum("ij,ij->i", a.data, a.data))

    def back(g):
        w = np.divide(g, r, out=np.zeros_like(r), where=r > 0)
        return (w[:, None] * a.data,)

    return _make(r, (a,), back, "row_norm")


def logsumexp(a, axis: int, mask: np.ndarray | None = None) -> Tensor:
    """Stable log-sum-exp along ``axis`` over entries where ``mask`` is True."""
    a = as_tensor(a)
    x = a.data
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    masked = np.where(mask, x, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("logsumexp: a reduction slice has no unmasked entries")
    e = np.where(mask, np.exp(masked - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    soft = e / s
    return _make(out, (a,), lambda g: (soft * np.expand_dims(g, axis),), "logsumexp")


def pairwise_dist(a, b) -> Tensor:
    """Euclidean distance matrix ``D[i, j] = |a_i - b_j|``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"pairwise_dist: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = np.ascontiguousarray(a.data), np.ascontiguousarray(b.data)
    out = kernels.pairwise_dist(ad, bd)
    return _make(out, (a, b),
                 lambda g: kernels.pairwise_dist_backward(ad, bd, out, np.ascontiguousarray(g)),
                 "pairwise_dist")


_SERIES_R = 1e-3


def exp_origin(v) -> Tensor:
    """Row-wise exponential map at the hyperboloid origin (see ``hypgeom.exp_origin``)."""
    v = as_tensor(v)
    x = v.data
    if not np.all(np.isfinite(x)):
        raise ValueError("exp_origin: non-finite tangent vector")
    r = np.sqrt(np.einsum("...i,...i->...", x, x))[..., None]
    tiny = r < EPS_EXP
    small = r < _SERIES_R
    safe = np.where(small, 1.0, r)
    r2 = r * r
    # sinh(r)/r and its derivative divided by r, with series near 0
    s = np.where(small, 1.0 + r2 / 6.0 + r2 * r2 / 120.0, np.sinh(r) / safe)
    ds_over_r = np.where(small, 1.0 / 3.0 + r2 / 30.0,
                         (r * np.cosh(r) - np.sinh(r)) / (safe * safe * safe))
    # d cosh(r)/dv = sinh(r)/r * v
    spatial = np.where(tiny, 0.0, s * x)
    out = np.empty(x.shape[:-1] + (x.shape[-1] + 1,))
    out[..., 1:] = spatial
    out[..., 0] = np.sqrt(1.0 + np.einsum("...i,...i->...", spatial, spatial))

    def back(g):
        g0 = g[..., :1]
        gs = g[..., 1:]
        dot = np.einsum("...i,...i->...", gs, x)[..., None]
        return (g0 * s * x + s * gs + ds_over_r * dot * x,)

    return _make(out, (v,), back, "exp_origin")


# ------------------------------------------------------------------ backward

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(p.shape)
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg


# ------------------------------------------------------------------ gradcheck

@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray
    numeric: np.ndarray


def gradcheck(f: Callable[[Tensor], Tensor], point, h: float = 1e-5, tol: float = 1e-4,
              floor: float = 1e-6) -> GradcheckReport:
    """Compare reverse-mode gradients of scalar ``f`` against central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    x0 = np.array(as_tensor(point).data, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ValueError("gradcheck needs a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x0)).item()
        flat[i] = orig - h
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradcheckReport(max_rel < tol, max_rel, worst, analytic, numeric)
