"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

The model is define-by-run: while a ``Tape`` is active (used as a context
manager), every op records the backward rule of its output. ``backward``
replays the records in reverse, visiting each node exactly once. Tensors
created outside an active tape, or derived only from such tensors, are
constants and record nothing, so the same op functions double as a plain
evaluation path.

Gradients buffers are allocated only during the backward pass. A tape is
meant to be rebuilt for every optimization iteration and used by a single
thread.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus an optional node id on the active tape."""

    __slots__ = ("data", "node")

    def __init__(self, data, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "" if self.node is None else f", node={self.node}"
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        return div(Tensor(np.full_like(self.data, float(other))), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of differentiable operations.

    Node ids are list indices, so parents always precede children: the
    record order is a topological order of the graph by construction.
    """

    def __init__(self):
        # node id -> tuple of (parent_node_id, grad_fn) pairs
        self.nodes: list[tuple] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def leaf(self, data) -> Tensor:
        """Register ``data`` as a differentiable leaf on this tape."""
        self.nodes.append(())
        return Tensor(data, node=len(self.nodes) - 1)

    def gradient(self, loss: Tensor, tensors: list[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. ``tensors``.

        Tensors not reachable from the loss get a zero gradient.
        """
        grads = backward(self, loss)
        out = []
        for t in tensors:
            g = None if t.node is None else grads[t.node]
            out.append(np.zeros_like(t.data) if g is None else g)
        return out


def backward(tape: Tape, loss: Tensor) -> list:
    """Reverse sweep over ``tape``; returns per-node gradients.

    ``loss`` must be a scalar recorded on ``tape``. The result list is
    indexed by node id; entries are ``None`` for nodes the loss does not
    depend on.
    """
    if loss.node is None:
        raise ValueError("loss is a constant: it was not recorded on any tape")
    if loss.data.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
    grads: list = [None] * len(tape.nodes)
    grads[loss.node] = np.ones((), dtype=np.float64)
    for nid in range(loss.node, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        for pid, grad_fn in tape.nodes[nid]:
            contrib = grad_fn(g)
            if grads[pid] is None:
                grads[pid] = contrib
            else:
                grads[pid] = grads[pid] + contrib
    return grads


def _record(data: np.ndarray, pairs) -> Tensor:
    """Wrap ``data``; record backward rules for the taped parents."""
    tape = _active()
    if tape is None:
        return Tensor(data)
    live = tuple((t.node, fn) for t, fn in pairs if t.node is not None)
    if not live:
        return Tensor(data)
    tape.nodes.append(live)
    return Tensor(data, node=len(tape.nodes) - 1)


def _ensure_finite(data: np.ndarray, op: str):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.data + b.data, [(a, lambda g: g), (b, lambda g: g)])


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + c, [(a, lambda g: g)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.data - b.data, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = a.data * b.data
    _ensure_finite(out, "mul")
    ad, bd = a.data, b.data
    return _record(out, [(a, lambda g: g * bd), (b, lambda g: g * ad)])


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, [(a, lambda g: g * c)])


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    _ensure_finite(out, "div")
    bd = b.data
    return _record(out, [(a, lambda g: g / bd), (b, lambda g: -g * out / bd)])


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, [(a, lambda g: -g)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data
    _ensure_finite(out, "matmul")
    ad, bd = a.data, b.data
    return _record(out, [(a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-m bias row vector to every row of an (n, m) matrix."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ShapeError(f"add_bias: {x.data.shape} with bias {b.data.shape}")
    return _record(x.data + b.data, [(x, lambda g: g), (b, lambda g: g.sum(axis=0))])


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of an (n, m) matrix by an (n, 1) column of scales."""
    if x.data.ndim != 2 or s.data.shape != (x.data.shape[0], 1):
        raise ShapeError(f"scale_rows: {x.data.shape} with scales {s.data.shape}")
    out = x.data * s.data
    _ensure_finite(out, "scale_rows")
    xd, sd = x.data, s.data
    return _record(out, [
        (x, lambda g: g * sd),
        (s, lambda g: (g * xd).sum(axis=1, keepdims=True)),
    ])


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.sin(ad), [(a, lambda g: g * np.cos(ad))])


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.cos(ad), [(a, lambda g: -g * np.sin(ad))])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _ensure_finite(out, "exp")
    return _record(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _ensure_finite(out, "log")
    ad = a.data
    return _record(out, [(a, lambda g: g / ad)])


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; the subgradient at 0 is taken as 0."""
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    _ensure_finite(out, "sqrt")

    def grad(g):
        with np.errstate(divide="ignore"):
            d = np.where(out > 0.0, 0.5 / out, 0.0)
        return g * d

    return _record(out, [(a, grad)])


def abs_(a: Tensor) -> Tensor:
    """Elementwise absolute value; the subgradient at 0 is taken as 0."""
    ad = a.data
    return _record(np.abs(ad), [(a, lambda g: g * np.sign(ad))])


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.maximum(ad, 0.0), [(a, lambda g: g * (ad > 0.0))])


def sigmoid(a: Tensor) -> Tensor:
    # two-branch form keeps exp() arguments non-positive, so no overflow
    ad = a.data
    ez = np.exp(-np.abs(ad))
    out = np.where(ad >= 0.0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return _record(out, [(a, lambda g: g * out * (1.0 - out))])


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through strictly inside the bounds."""
    ad = a.data
    mask = (ad > lo) & (ad < hi)
    return _record(np.clip(ad, lo, hi), [(a, lambda g: g * mask)])


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    _ensure_finite(out, "sum")
    shape = a.data.shape
    return _record(out, [(a, lambda g: np.full(shape, float(g)))])


def mean(a: Tensor) -> Tensor:
    out = np.asarray(a.data.mean())
    _ensure_finite(out, "mean")
    shape, size = a.data.shape, a.data.size
    return _record(out, [(a, lambda g: np.full(shape, float(g) / size))])


def sum_rows(a: Tensor) -> Tensor:
    """Row sums of an (n, m) matrix as an (n, 1) column."""
    if a.data.ndim != 2:
        raise ShapeError(f"sum_rows expects a matrix, got shape {a.data.shape}")
    out = a.data.sum(axis=1, keepdims=True)
    _ensure_finite(out, "sum_rows")
    m = a.data.shape[1]
    return _record(out, [(a, lambda g: np.repeat(g, m, axis=1))])


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise ShapeError(f"concat: axis must be 0 or 1, got {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    pairs = []
    start = 0
    for p in parts:
        width = p.data.shape[axis]
        lo, hi = start, start + width

        def grad(g, lo=lo, hi=hi):
            return g[lo:hi] if axis == 0 else g[:, lo:hi]

        pairs.append((p, grad))
        start = hi
    return _record(out, pairs)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    """Contiguous slice [start:stop) along rows (axis 0) or columns (axis 1)."""
    if axis not in (0, 1) or a.data.ndim != 2:
        raise ShapeError(f"slice_axis: matrix with axis 0 or 1, got shape {a.data.shape}")
    if not (0 <= start < stop <= a.data.shape[axis]):
        raise ShapeError(f"slice_axis: bounds [{start}, {stop}) invalid for shape {a.data.shape}")
    out = a.data[start:stop] if axis == 0 else a.data[:, start:stop]
    shape = a.data.shape

    def grad(g):
        full = np.zeros(shape)
        if axis == 0:
            full[start:stop] = g
        else:
            full[:, start:stop] = g
        return full

    return _record(np.ascontiguousarray(out), [(a, grad)])


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows by integer index; backward scatter-adds into the source."""
    idx = np.asarray(idx)
    if idx.ndim != 1 or a.data.ndim != 2:
        raise ShapeError("gather_rows expects a matrix and a 1-D index array")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.data.shape[0]} rows")
    shape = a.data.shape

    def grad(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return full

    return _record(a.data[idx], [(a, grad)])


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_err: float
    worst_param: str | None = None
    worst_index: int | None = None
    analytic: float = 0.0
    numeric: float = 0.0

    def __str__(self):
        if self.passed:
            return f"gradient check passed (max rel err {self.max_rel_err:.3e})"
        return (
            f"gradient check FAILED at {self.worst_param}[{self.worst_index}]: "
            f"analytic {self.analytic:.6e} vs numeric {self.numeric:.6e} "
            f"(rel err {self.max_rel_err:.3e})"
        )


def gradient_check(fn, params, step: float = 1e-5, tol: float = 1e-4,
                   atol: float = 1e-8, names=None) -> GradCheckResult:
    """Compare the tape gradient of ``fn`` against central finite differences.

    ``fn`` maps a list of Tensors to a scalar Tensor. ``params`` is a list
    of arrays; every element of every array is perturbed by ``±step``.
    Elements where both gradients are below ``atol`` in magnitude are
    skipped (dead paths have nothing meaningful to compare).
    """
    arrays = [np.array(p, dtype=np.float64) for p in params]
    if names is None:
        names = [f"param {i}" for i in range(len(arrays))]

    with Tape() as tape:
        leaves = [tape.leaf(a) for a in arrays]
        loss = fn(leaves)
        analytic = tape.gradient(loss, leaves)

    result = GradCheckResult(passed=True, max_rel_err=0.0)
    for pi, arr in enumerate(arrays):
        flat = arr.reshape(-1)
        grad_flat = analytic[pi].reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + step
            f_plus = float(fn([Tensor(a) for a in arrays]).data)
            flat[j] = saved - step
            f_minus = float(fn([Tensor(a) for a in arrays]).data)
            flat[j] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            a_val = float(grad_flat[j])
            denom = max(abs(a_val), abs(numeric))
            if denom <= atol:
                continue
            rel = abs(a_val - numeric) / denom
            if rel > result.max_rel_err:
                result.max_rel_err = rel
                result.worst_param = names[pi]
                result.worst_index = j
                result.analytic = a_val
                result.numeric = numeric
    result.passed = result.max_rel_err < tol
    return result
