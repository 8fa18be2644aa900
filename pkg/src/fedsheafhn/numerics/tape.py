"""Reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array wrapped in a :class:`Node`.  Nodes are
appended to a :class:`Tape` in creation order, which is a valid topological
order, so the backward pass is a single reverse sweep.
"""
from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError, NumericError

ACTIVATIONS = ("identity", "elu", "tanh", "relu")


class Node:
    __slots__ = ("tape", "index", "value", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, tape, value, parents=(), backward_fn=None, requires_grad=False, op="leaf"):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.shape}, grad={self.requires_grad})"


def _as_matrix(value, name="input"):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected a matrix, got {arr.ndim}-d array")
    if not np.all(np.isfinite(arr)):
        raise NumericError(name, "non-finite input rejected")
    return arr


class Tape:
    """Ordered record of operations."""

    def __init__(self):
        self.nodes: list[Node] = []

    def param(self, value, name="param"):
        """Differentiable leaf."""
        return Node(self, _as_matrix(value, name), requires_grad=True, op=name)

    def const(self, value, name="const"):
        return Node(self, _as_matrix(value, name), op=name)

    def backward(self, loss, wrt=None):
        """Gradients of scalar ``loss`` w.r.t. the nodes in ``wrt``.

        ``wrt`` defaults to every differentiable leaf on the tape.  Leaves the
        loss does not depend on receive zeros.
        """
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
        if wrt is None:
            wrt = [n for n in self.nodes if n.requires_grad and n.backward_fn is None]
        grads: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None) if node.backward_fn is not None else grads.get(node.index)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        return [grads.get(n.index, np.zeros_like(n.value)) for n in wrt]


def _record(op, value, parents, backward_fn):
    if not np.all(np.isfinite(value)):
        raise NumericError(op)
    tape = parents[0].tape
    for p in parents[1:]:
        if p.tape is not tape:
            raise ContractError(f"{op}: operands recorded on different tapes")
    requires_grad = any(p.requires_grad for p in parents)
    return Node(tape, value, tuple(parents), backward_fn if requires_grad else None, requires_grad, op)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    return _record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return _record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, rows, cols):
    """Row-major reshape."""
    if rows * cols != a.value.size:
        raise DimensionError(f"reshape: {a.shape} -> ({rows}, {cols})")
    shape = a.shape
    return _record("reshape", a.value.reshape(rows, cols).copy(), (a,), lambda g: (g.reshape(shape),))


def slice_rows(a, start, stop):
    n, m = a.shape
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice_rows: [{start}:{stop}] of {a.shape}")

    def back(g):
        out = np.zeros((n, m))
        out[start:stop] = g
        return (out,)

    return _record("slice_rows", a.value[start:stop].copy(), (a,), back)


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _record("gather_rows", a.value[idx], (a,), back)


def kron_eye(w, n):
    """Block-diagonal matrix I_n (x) W."""
    k = w.shape[0]
    if w.shape[1] != k:
        raise DimensionError(f"kron_eye: W must be square, got {w.shape}")

    def back(g):
        blocks = g.reshape(n, k, n, k)
        return (np.einsum("ikil->kl", blocks),)

    return _record("kron_eye", np.kron(np.eye(n), w.value), (w,), back)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    _same_shape("add", a, b)
    return _record("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _record("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    c = float(c)
    return _record("scale", a.value * c, (a,), lambda g: (g * c,))


def add_bias(a, bias):
    """Add a 1 x k row to every row of an n x k matrix."""
    if bias.shape != (1, a.shape[1]):
        raise DimensionError(f"add_bias: {a.shape} + {bias.shape}")
    return _record("add_bias", a.value + bias.value, (a, bias), lambda g: (g, g.sum(axis=0, keepdims=True)))


def add_scalar_row(a, c):
    """Add a constant row vector (numpy) without differentiating it."""
    c = np.asarray(c, dtype=np.float64).reshape(1, -1)
    return _record("add_const", a.value + c, (a,), lambda g: (g,))


def elu(a):
    x = a.value
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    return _record("elu", out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg + 1.0),))


def tanh(a):
    out = np.tanh(a.value)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    x = a.value
    return _record("relu", np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),))


def identity(a):
    return a


def activation(name, a):
    """Apply the named elementwise nonlinearity."""
    try:
        fn = {"identity": identity, "elu": elu, "tanh": tanh, "relu": relu}[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}") from None
    return fn(a)


# -- reductions and normalisations -----------------------------------------

def sum_all(a):
    shape = a.shape
    return _record("sum", np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(a):
    """Column-wise mean over rows: n x k -> 1 x k."""
    n = a.shape[0]
    return _record("mean_rows", a.value.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def inner(a, c):
    """<a, c> for a constant array ``c``; seeds a reverse pass with upstream ``c``."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"inner: {a.shape} vs {c.shape}")
    return _record("inner", np.array([[np.sum(a.value * c)]]), (a,), lambda g: (g[0, 0] * c,))


def softmax_rows(a):
    x = a.value
    if x.size == 0:
        raise DimensionError("softmax_rows: empty matrix")
    z = np.exp(x - x.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _record("softmax_rows", s, (a,), back)


def cross_entropy(logits, labels, mask):
    """Mean softmax cross-entropy over the rows selected by ``mask``."""
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ContractError("cross_entropy: empty mask")
    x = logits.value[rows]
    shifted = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    y = labels[rows]
    loss = -logp[np.arange(rows.size), y].mean()
    n, c = logits.shape

    def back(g):
        p = np.exp(logp)
        p[np.arange(rows.size), y] -= 1.0
        out = np.zeros((n, c))
        out[rows] = p * (g[0, 0] / rows.size)
        return (out,)

    return _record("cross_entropy", np.array([[loss]]), (logits,), back)


# -- sheaf operators --------------------------------------------------------

def sheaf_laplacian(f_src, f_dst, src, dst, n):
    """Dense sheaf Laplacian assembled from per-incidence diagonal maps.

    Row ``e`` of ``f_src``/``f_dst`` holds the diagonal restriction map of
    edge ``(src[e], dst[e])`` seen from its source/destination endpoint.
    """
    _same_shape("sheaf_laplacian", f_src, f_dst)
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    fs = np.ascontiguousarray(f_src.value)
    fd = np.ascontiguousarray(f_dst.value)
    out = kernels.sheaf_laplacian(fs, fd, src, dst, n)

    def back(g):
        return kernels.sheaf_laplacian_backward(np.ascontiguousarray(g), fs, fd, src, dst)

    return _record("sheaf_laplacian", out, (f_src, f_dst), back)


def normalize_laplacian(lap, eps=1e-8):
    """D^{-1/2} L D^{-1/2} with D the diagonal of L, clamped below at ``eps``.

    Under diagonal restriction maps the block diagonal of L is diagonal, so
    only the main diagonal is needed.
    """
    L = lap.value
    d = np.diag(L).copy()
    clamped = d < eps
    s = 1.0 / np.sqrt(np.where(clamped, eps, d))
    out = s[:, None] * L * s[None, :]

    def back(g):
        gl = g * s[:, None] * s[None, :]
        gs = np.sum(g * L * s[None, :], axis=1) + np.sum(g * L * s[:, None], axis=0)
        dd = np.where(clamped, 0.0, -0.5 * s**3)
        gl[np.diag_indices_from(gl)] += gs * dd
        return (gl,)

    return _record("normalize_laplacian", out, (lap,), back)


def scaled_dot_scores(q, k):
    """Q K^T / sqrt(d)."""
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"scores: {q.shape} vs {k.shape}")
    return scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[1]))
