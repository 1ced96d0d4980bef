"""Recorded-op tensors: reverse-mode gradients plus exact FLOP accounting.

This is a small eager autodiff engine over numpy arrays. Every operation
produces a new Tensor, records how to push gradients back to its inputs, and
charges a deterministic FLOP amount to the active counter (if one is
installed). The charge conventions are fixed and documented here because
downstream cost-model tests compare instrumented totals against closed-form
expressions to the last digit:

* matmul of [m,k] by [k,n]: 2*m*n*k (one multiply-add = 2 FLOPs)
* elementwise add/sub/mul/div, scalar ops, relu/gelu/sigmoid/exp/log/sqrt:
  1 FLOP per output element
* tile_rows / tile_cols (broadcast materialized as an outer product with a
  ones vector): 1 FLOP per output element
* sum over k elements: k-1 FLOPs per output element; mean: k FLOPs
* depthwise 2D convolution with a k x k kernel on [H,W,C]: 2*H*W*C*k*k
* reshape / slice / gather / concat: 0 FLOPs (memory movement)

The counter sees recorded forward ops only; the backward sweep runs raw numpy
and is not metered. Bias additions in the layer modules are wrapped in
`counting_paused()` so analytic layer cost formulas that exclude biases stay
exact.

Default element type is float32. Verification paths (finite-difference
checks, dense oracles) switch to float64 via `default_dtype`. Every op result
is checked for NaN/Inf and raises NumericError on the first non-finite value.
"""

from __future__ import annotations

import json
import struct
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, NumericError, ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_state = threading.local()


def _counter_stack():
    if not hasattr(_state, "counters"):
        _state.counters = []
    return _state.counters


def _dtype_stack():
    if not hasattr(_state, "dtypes"):
        _state.dtypes = [np.float32]
    return _state.dtypes


class OpCounter:
    """Accumulates FLOPs by op kind.

    Invariants: `total` equals the sum of `per_op` values, and both only grow.
    A counter is installed for a scope with `count_flops(counter)`; distinct
    threads keep distinct active-counter stacks, so independent contexts never
    share mutable state.
    """

    def __init__(self):
        self.per_op: dict[str, int] = {}

    @property
    def total(self) -> int:
        return sum(self.per_op.values())

    def add(self, kind: str, flops: int) -> None:
        if flops < 0:
            raise ContractError(f"negative FLOP charge for op {kind!r}")
        self.per_op[kind] = self.per_op.get(kind, 0) + int(flops)

    def snapshot(self) -> dict[str, int]:
        return dict(self.per_op)

    def __repr__(self):
        return f"OpCounter(total={self.total}, per_op={self.per_op})"


@contextmanager
def count_flops(counter: OpCounter | None = None):
    """Install `counter` (or a fresh one) as the active FLOP sink."""
    counter = counter if counter is not None else OpCounter()
    stack = _counter_stack()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


@contextmanager
def counting_paused():
    """Suspend FLOP accounting inside the scope; recording still happens."""
    stack = _counter_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _charge(kind: str, flops: int) -> None:
    stack = _counter_stack()
    if stack and stack[-1] is not None:
        stack[-1].add(kind, flops)


@contextmanager
def default_dtype(dtype):
    """Set the element type used for tensors created without an explicit dtype."""
    dtype = np.dtype(dtype).type
    if dtype not in _ALLOWED_DTYPES:
        raise ConfigError(f"unsupported dtype {dtype}")
    stack = _dtype_stack()
    stack.append(dtype)
    try:
        yield
    finally:
        stack.pop()


def active_dtype():
    return _dtype_stack()[-1]


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    """A numpy array with an optional gradient tape entry.

    The flat buffer is row-major; `size(shape) == data.size` always holds.
    Results of every operation are finite or the op raises NumericError.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else active_dtype())
        if arr.dtype.type not in _ALLOWED_DTYPES:
            raise ConfigError(f"unsupported dtype {arr.dtype}")
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False, dtype=None):
        return Tensor(np.zeros(shape), requires_grad=requires_grad, dtype=dtype)

    @staticmethod
    def ones(shape, requires_grad=False, dtype=None):
        return Tensor(np.ones(shape), requires_grad=requires_grad, dtype=dtype)

    @staticmethod
    def full(shape, value, requires_grad=False, dtype=None):
        return Tensor(np.full(shape, value), requires_grad=requires_grad, dtype=dtype)

    # -- bookkeeping -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    # -- graph plumbing ---------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, retain_graph: bool = False) -> None:
        """Reverse sweep from a scalar. Frees the recorded graph unless retained."""
        if self.size != 1:
            raise ContractError("backward requires a scalar (size-1) tensor")
        if not self.requires_grad:
            raise ContractError("backward on a tensor with no recorded graph")
        if self._op != "leaf" and self._backward is None and not self._parents:
            raise ContractError("recorded graph already consumed; "
                                "pass retain_graph=True to reuse it")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
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
        # interior grads are per-sweep scratch; only leaves accumulate across calls
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
            if not retain_graph:
                node._backward = None
                node._parents = ()

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return mul_scalar(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _result(data, op, parents, backward):
    _check_finite(data, op)
    req = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = req
    out.grad = None
    out._op = op
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    """Allow identical shapes, or b as a row vector broadcast over a's rows."""
    if a.shape == b.shape:
        return "same"
    if a.data.ndim == 2 and b.data.ndim in (1, 2):
        bs = b.shape if b.data.ndim == 2 else (1,) + b.shape
        if bs == (1, a.shape[1]):
            return "row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- arithmetic -------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "add")
    out_data = a.data + b.data if mode == "same" else a.data + b.data.reshape(1, -1)
    _charge("add", out_data.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            gb = g if mode == "same" else g.sum(axis=0).reshape(b.shape)
            b._accumulate(gb)

    return _result(out_data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "sub")
    out_data = a.data - b.data if mode == "same" else a.data - b.data.reshape(1, -1)
    _charge("sub", out_data.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            gb = -g if mode == "same" else -g.sum(axis=0).reshape(b.shape)
            b._accumulate(gb)

    return _result(out_data, "sub", (a, b), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; b may be a row vector broadcast across a's rows."""
    mode = _binary_shapes(a, b, "hadamard")
    b_view = b.data if mode == "same" else b.data.reshape(1, -1)
    out_data = a.data * b_view
    _charge("hadamard", out_data.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b_view)
        if b.requires_grad:
            gb = g * a.data
            if mode == "row":
                gb = gb.sum(axis=0).reshape(b.shape)
            b._accumulate(gb)

    return _result(out_data, "hadamard", (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "div")
    b_view = b.data if mode == "same" else b.data.reshape(1, -1)
    out_data = a.data / b_view
    _charge("div", out_data.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b_view)
        if b.requires_grad:
            gb = -g * a.data / (b_view * b_view)
            if mode == "row":
                gb = gb.sum(axis=0).reshape(b.shape)
            b._accumulate(gb)

    return _result(out_data, "div", (a, b), backward)


def add_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data + c
    _charge("add", out_data.size)

    def backward(g):
        a._accumulate(g)

    return _result(out_data, "add_scalar", (a,), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c
    _charge("hadamard", out_data.size)

    def backward(g):
        a._accumulate(g * c)

    return _result(out_data, "mul_scalar", (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; charges 2*m*n*k."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul requires rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    out_data = a.data @ b.data
    _charge("matmul", 2 * m * n * k)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(out_data, "matmul", (a, b), backward)


# -- broadcast materialization ------------------------------------------------


def tile_rows(row: Tensor, num_rows: int) -> Tensor:
    """Materialize a row vector into `num_rows` identical rows (outer product
    with a ones column, charged 1 FLOP per output element)."""
    if row.data.ndim == 1:
        base = row.data.reshape(1, -1)
    elif row.data.ndim == 2 and row.shape[0] == 1:
        base = row.data
    else:
        raise ShapeError(f"tile_rows expects a row vector, got {row.shape}")
    out_data = np.repeat(base, num_rows, axis=0)
    _charge("tile", out_data.size)

    def backward(g):
        row._accumulate(g.sum(axis=0).reshape(row.shape))

    return _result(out_data, "tile_rows", (row,), backward)


def tile_cols(col: Tensor, num_cols: int) -> Tensor:
    """Materialize a column vector into `num_cols` identical columns."""
    if col.data.ndim != 2 or col.shape[1] != 1:
        raise ShapeError(f"tile_cols expects an [n,1] column, got {col.shape}")
    out_data = np.repeat(col.data, num_cols, axis=1)
    _charge("tile", out_data.size)

    def backward(g):
        col._accumulate(g.sum(axis=1, keepdims=True))

    return _result(out_data, "tile_cols", (col,), backward)


# -- reductions ------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    out_data = np.array(a.data.sum(), dtype=a.data.dtype)
    _charge("sum", max(a.size - 1, 0))

    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _result(out_data, "sum_all", (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Column means: [n, c] -> [1, c]; n FLOPs per output element."""
    if a.data.ndim != 2:
        raise ShapeError("mean_rows expects a rank-2 tensor")
    n = a.shape[0]
    out_data = a.data.mean(axis=0, keepdims=True)
    _charge("mean", a.size)

    def backward(g):
        a._accumulate(np.repeat(g / n, n, axis=0))

    return _result(out_data, "mean_rows", (a,), backward)


def mean_cols(a: Tensor) -> Tensor:
    """Row means: [n, c] -> [n, 1]."""
    if a.data.ndim != 2:
        raise ShapeError("mean_cols expects a rank-2 tensor")
    c = a.shape[1]
    out_data = a.data.mean(axis=1, keepdims=True)
    _charge("mean", a.size)

    def backward(g):
        a._accumulate(np.repeat(g / c, c, axis=1))

    return _result(out_data, "mean_cols", (a,), backward)


# -- nonlinearities -----------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)
    _charge("relu", a.size)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _result(out_data, "relu", (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU: x * Phi(x)."""
    phi = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * phi
    _charge("gelu", a.size)

    def backward(g):
        dens = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        a._accumulate(g * (phi + a.data * dens))

    return _result(out_data, "gelu", (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid exp overflow in float32.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype)
    _charge("sigmoid", a.size)

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _result(out_data, "sigmoid", (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    _charge("exp", a.size)

    def backward(g):
        a._accumulate(g * out_data)

    return _result(out_data, "exp", (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)
    _charge("log", a.size)

    def backward(g):
        a._accumulate(g / a.data)

    return _result(out_data, "log", (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    _charge("sqrt", a.size)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)

    return _result(out_data, "sqrt", (a,), backward)


# -- shape ops (zero cost) ---------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _result(out_data, "reshape", (a,), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_rows expects a rank-2 tensor")
    if not (0 <= start <= stop <= a.shape[0]):
        raise IndexError(f"row slice [{start}:{stop}] out of range for {a.shape}")
    out_data = a.data[start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accumulate(full)

    return _result(out_data, "slice_rows", (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects a rank-2 tensor")
    if not (0 <= start <= stop <= a.shape[1]):
        raise IndexError(f"column slice [{start}:{stop}] out of range for {a.shape}")
    out_data = a.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accumulate(full)

    return _result(out_data, "slice_cols", (a,), backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by integer index (duplicates allowed); gradient scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeError("gather_rows expects a rank-2 tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError("gather_rows index out of range")
    out_data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(out_data, "gather_rows", (a,), backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_rows needs at least one tensor")
    cols = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != cols:
            raise ShapeError("concat_rows: column counts differ")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]

    def backward(g):
        at = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p._accumulate(g[at:at + n])
            at += n

    return _result(out_data, "concat_rows", tuple(parts), backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ContractError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError("concat_cols: row counts differ")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.shape[1] for p in parts]

    def backward(g):
        at = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p._accumulate(g[:, at:at + n])
            at += n

    return _result(out_data, "concat_cols", tuple(parts), backward)


# -- depthwise convolution ------------------------------------------------------


def depthwise_conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 2D convolution with same-size zero padding.

    x is [H, W, C], kernel is [k, k, C] with k odd. Each channel is convolved
    with its own k x k filter; charge is 2*H*W*C*k*k.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"depthwise_conv2d expects [H,W,C] input, got {x.shape}")
    if kernel.data.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"depthwise_conv2d expects [k,k,C] kernel, got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigError("depthwise_conv2d kernel size must be odd")
    h, w, c = x.shape
    if kernel.shape[2] != c:
        raise ShapeError("depthwise_conv2d: channel counts differ")
    pad = k // 2
    xp = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=x.data.dtype)
    xp[pad:pad + h, pad:pad + w] = x.data
    out_data = np.zeros((h, w, c), dtype=x.data.dtype)
    for di in range(k):
        for dj in range(k):
            out_data += xp[di:di + h, dj:dj + w] * kernel.data[di, dj]
    _charge("depthwise_conv2d", 2 * h * w * c * k * k)

    def backward(g):
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    gp[di:di + h, dj:dj + w] += g * kernel.data[di, dj]
            x._accumulate(gp[pad:pad + h, pad:pad + w])
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for di in range(k):
                for dj in range(k):
                    gk[di, dj] = (xp[di:di + h, dj:dj + w] * g).sum(axis=(0, 1))
            kernel._accumulate(gk)

    return _result(out_data, "depthwise_conv2d", (x, kernel), backward)


# -- loss primitives -----------------------------------------------------------------

# The losses are primitives (not composites of exp/log) so the stable forms
# can be used without tripping the finiteness invariant at saturated logits.


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices.

    Charged 5 FLOPs per logit element (shift, exp, accumulate, log, pick),
    a documented convention; this op never appears in the exact-count paths.
    """
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy_with_logits expects [n, num_classes]")
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if idx.shape[0] != n:
        raise ShapeError("label count does not match logit rows")
    if idx.min() < 0 or idx.max() >= k:
        raise IndexError("class label out of range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[np.arange(n), idx]
    out_data = np.array(losses.mean(), dtype=z.dtype)
    _charge("cross_entropy", 5 * logits.size)

    def backward(g):
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), idx] -= 1.0
        logits._accumulate(g * soft / n)

    return _result(out_data, "cross_entropy", (logits,), backward)


def bce_with_logits(scores: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw scores, computed in the stable form
    max(x,0) - x*y + log1p(exp(-|x|)). Charged 4 FLOPs per score."""
    y = np.asarray(targets, dtype=scores.data.dtype)
    if y.shape != scores.shape:
        raise ShapeError("bce_with_logits: target shape differs from scores")
    x = scores.data
    losses = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out_data = np.array(losses.mean(), dtype=x.dtype)
    _charge("bce", 4 * scores.size)

    def backward(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        scores._accumulate(g * (s - y) / scores.size)

    return _result(out_data, "bce", (scores,), backward)


# -- verification -----------------------------------------------------------------


def finite_difference_check(fn, tensors, h: float = 1e-5):
    """Compare analytic gradients of scalar fn(*) against central differences.

    `fn` maps the given tensors to a scalar Tensor. All inputs must already be
    float64 (verification runs 64-bit). Returns the worst scale-relative error
    max|analytic - numeric| / max(max|numeric|, 1e-12) across all tensors.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ContractError("finite_difference_check requires float64 tensors")
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data)
            flat[i] = orig - h
            down = float(fn().data)
            flat[i] = orig
            num_flat[i] = (up - down) / (2 * h)
        scale = max(np.abs(numeric).max(initial=0.0), 1e-12)
        err = np.abs(analytic - numeric).max(initial=0.0) / scale
        worst = max(worst, err)
    return worst


# -- parameter checkpoints -----------------------------------------------------------

_CKPT_MAGIC = b"RMPC"


def save_checkpoint(path, named_tensors: dict) -> None:
    """Write named tensors as a JSON header plus flat little-endian payload.

    Header records name, dtype, shape, and byte offset of every entry; the
    payload is the concatenation of the raw buffers in header order.
    """
    entries = []
    blobs = []
    offset = 0
    for name, t in named_tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({
            "name": name,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by save_checkpoint; returns name -> ndarray."""
    from .errors import DataError

    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        body = f.read()
    out = {}
    for e in header["tensors"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<"))
        out[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return out
