"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is a plain numpy array underneath; no views, no strides, no
broadcasting cleverness beyond what the ops here explicitly support. The
graph is recorded implicitly: each Tensor produced by an op keeps its
parent tensors and a closure that routes the incoming gradient to them.
``backward`` does a topological sweep, so each node is visited once and
parameter gradients accumulate additively across calls.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericFault, OracleError, ShapeError

_ids = itertools.count()


def _as_finite_f64(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(arr)):
        raise NumericFault("tensor payload contains NaN/Inf")
    return arr


class Tensor:
    """Immutable dense f64 array plus the bookkeeping for reverse mode."""

    def __init__(self, data, parents: tuple = (), backward_fn=None):
        self.data = _as_finite_f64(data)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # operator sugar, used mostly by the loss code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Param(Tensor):
    """A trainable leaf. Its .grad persists between backward calls."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data)
        self.id = next(_ids)
        self.name = name if name is not None else f"param{self.id}"
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name}, shape={self.shape})"


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g, out):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g, out):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return Tensor(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g, out):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g, out):
        a._accumulate(g * c)

    return Tensor(out_data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g, out):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(out_data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    out_data = a.data.T.copy()

    def bwd(g, out):
        a._accumulate(g.T)

    return Tensor(out_data, (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out_data = a.data.reshape(shape).copy()

    def bwd(g, out):
        a._accumulate(g.reshape(a.shape))

    return Tensor(out_data, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat: no parts given")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].shape
    for p in parts[1:]:
        ok = len(p.shape) == len(ref) and all(
            p.shape[i] == ref[i] for i in range(len(ref)) if i != axis % len(ref)
        )
        if not ok:
            raise ShapeError(f"concat: shape {p.shape} incompatible with {ref} on axis {axis}")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis % len(ref)] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis % g.ndim] = slice(lo, hi)
            p._accumulate(g[tuple(idx)])

    return Tensor(out_data, tuple(parts), bwd)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally-shaped tensors along a new leading axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("stack: no parts given")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.shape != ref:
            raise ShapeError(f"stack: shape {p.shape} != {ref}")
    out_data = np.stack([p.data for p in parts])

    def bwd(g, out):
        for i, p in enumerate(parts):
            p._accumulate(g[i])

    return Tensor(out_data, tuple(parts), bwd)


def gather_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out_data = a.data[idx].copy()

    def bwd(g, out):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a._accumulate(acc)

    return Tensor(out_data, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    out_data = np.array(a.data.sum())

    def bwd(g, out):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return Tensor(out_data, (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.size)


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        out_data = a.data.copy()

        def bwd(g, out):
            a._accumulate(g)

    elif kind == "relu":
        out_data = np.maximum(a.data, 0.0)

        def bwd(g, out):
            a._accumulate(g * (a.data > 0.0))

    elif kind == "sigmoid":
        out_data = 1.0 / (1.0 + np.exp(-a.data))

        def bwd(g, out):
            a._accumulate(g * out.data * (1.0 - out.data))

    else:
        raise ContractError(f"unknown activation kind: {kind!r}")
    return Tensor(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    return activation(a, "relu")


def sigmoid(a: Tensor) -> Tensor:
    return activation(a, "sigmoid")


def logsumexp(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a 2-D tensor; backward is the softmax."""
    if a.data.ndim != 2:
        raise ShapeError(f"logsumexp expects a matrix, got shape {a.shape}")
    m = a.data.max(axis=1, keepdims=True)
    out_data = (np.log(np.exp(a.data - m).sum(axis=1, keepdims=True)) + m).ravel()

    def bwd(g, out):
        soft = np.exp(a.data - out.data[:, None])
        a._accumulate(g[:, None] * soft)

    return Tensor(out_data, (a,), bwd)


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a C_in x H x W map with C_out x C_in x k x k kernels."""
    from .errors import ConfigError

    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d: need rank-3 input and rank-4 kernels, got {x.shape}, {kernels.shape}")
    c_in, h, w = x.shape
    c_out, kc, k, k2 = kernels.shape
    if kc != c_in or k != k2:
        raise ShapeError(f"conv2d: kernels {kernels.shape} do not match input {x.shape}")
    if (h + 2 * pad - k) % stride != 0 or (w + 2 * pad - k) % stride != 0:
        raise ConfigError(f"conv2d: non-integral output size for input {x.shape}, k={k}, stride={stride}, pad={pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigError(f"conv2d: non-positive output size {ho}x{wo}")

    cols = _im2col(x.data, k, stride, pad, ho, wo)  # (C_in*k*k, ho*wo)
    w2d = kernels.data.reshape(c_out, c_in * k * k)
    out_data = (w2d @ cols).reshape(c_out, ho, wo)

    def bwd(g, out):
        g2d = g.reshape(c_out, ho * wo)
        kernels._accumulate((g2d @ cols.T).reshape(kernels.shape))
        gcols = w2d.T @ g2d
        x._accumulate(_col2im(gcols, (c_in, h, w), k, stride, pad, ho, wo))

    return Tensor(out_data, (x, kernels), bwd)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    c = x.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # C, ho, wo, k, k
    return win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)


def _col2im(cols: np.ndarray, xshape: tuple, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    c, h, w = xshape
    gxp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    cols5 = cols.reshape(c, k, k, ho, wo)
    for i in range(k):
        for j in range(k):
            gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols5[:, i, j]
    return gxp[:, pad : pad + h, pad : pad + w]


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects rank-3 input, got {x.shape}")
    c, r, co = x.shape
    out_data = x.data.mean(axis=(1, 2))

    def bwd(g, out):
        x._accumulate(np.broadcast_to(g[:, None, None] / (r * co), x.shape).copy())

    return Tensor(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable tensor.

    `loss` must be a scalar produced on the current tape. Parameter grads
    accumulate additively; intermediates get fresh grad buffers.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad, node)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def check_gradients(
    closure: Callable[[], Tensor],
    params: Iterable[Param],
    h: float = 1e-5,
    tol: float = 1e-6,
) -> dict:
    """Compare analytic grads against central differences, per parameter.

    The closure must rebuild the loss from scratch on every call and be
    bit-deterministic; this is verified with a double evaluation. Relative
    error is (analytic - numeric) / max(1, |numeric|).
    """
    if h <= 0:
        raise ContractError("check_gradients: h must be positive")
    params = list(params)

    l0 = closure().item()
    if closure().item() != l0:
        raise OracleError("closure is not deterministic; finite differences are invalid")

    for p in params:
        p.zero_grad()
    backward(closure())
    analytic = {p.id: p.grad.copy() for p in params}

    report = {"params": {}, "passed": True, "max_rel_err": 0.0}
    for p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.ravel()
        nflat = numeric.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = closure().item()
            flat[i] = orig - h
            lm = closure().item()
            flat[i] = orig
            nflat[i] = (lp - lm) / (2.0 * h)
        rel = np.abs(analytic[p.id] - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = float(rel.max()) if rel.size else 0.0
        report["params"][p.name] = worst
        report["max_rel_err"] = max(report["max_rel_err"], worst)
    report["passed"] = report["max_rel_err"] <= tol
    return report
