"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` pairs a float64 value array with a same-shaped gradient
buffer. While a :class:`Graph` is active (entered as a context manager),
every operation appends a backward rule to the graph's tape;
``Graph.backward`` seeds the loss gradient with 1 and replays the tape in
reverse execution order, so gradients accumulate additively through shared
subexpressions.

Everything runs in double precision with numpy's fixed sequential
reductions, so identical inputs give bit-identical outputs. Graph recording
is thread-local: one graph per thread, distinct graphs may run concurrently.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_tls = threading.local()


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def active_graph() -> "Graph | None":
    """The graph currently recording in this thread, or None."""
    return getattr(_tls, "graph", None)


class Tensor:
    """Dense float64 array with an accumulated-gradient buffer.

    ``grad`` always has the same shape as ``data`` and is all-zero right
    after construction and after :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal constructor: takes ownership of `data` without copying.
        t = object.__new__(cls)
        t.data = data
        t.grad = np.zeros_like(data)
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all arithmetic goes through the module-level ops so
    # recording stays in one code path.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Graph:
    """Ordered tape of executed operations with their backward rules.

    Replaying the tape in reverse execution order visits every recorded
    operation exactly once. Use one graph per loss evaluation; gradients of
    parameters should be zeroed before the forward pass being differentiated.
    """

    def __init__(self):
        self._tape: list = []

    def __enter__(self) -> "Graph":
        if active_graph() is not None:
            raise RuntimeError("another Graph is already recording in this thread")
        _tls.graph = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tls.graph = None

    def record(self, backward_fn) -> None:
        self._tape.append(backward_fn)

    @property
    def n_ops(self) -> int:
        return len(self._tape)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into every recorded tensor's grad."""
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
        loss.grad[...] += 1.0
        for fn in reversed(self._tape):
            fn()


def as_tensor(x) -> Tensor:
    """Wrap plain arrays/numbers as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Build the output tensor and record `backward` if a graph is active."""
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    g = active_graph()
    if g is not None and requires:
        g.record(backward(out))
    return out


# ---------------------------------------------------------------------------
# elementwise / broadcasting arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise a + b with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.shape)

        return fn

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    """Elementwise a - b with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad -= _unbroadcast(out.grad, b.shape)

        return fn

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise a * b with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.shape)

        return fn

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    """Elementwise a / b with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad / b.data, a.shape)
            if b.requires_grad:
                b.grad -= _unbroadcast(out.grad * a.data / (b.data * b.data), b.shape)

        return fn

    return _result(a.data / b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant (not differentiated through c)."""
    a = as_tensor(a)
    c = float(c)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * c

        return fn

    return _result(a.data * c, (a,), backward)


def sqrt(a) -> Tensor:
    """Elementwise square root; inputs must be positive for a finite gradient."""
    a = as_tensor(a)
    root = np.sqrt(a.data)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * 0.5 / root

        return fn

    return _result(root, (a,), backward)


# ---------------------------------------------------------------------------
# matrix ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} @ {b.shape}")

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad @ np.swapaxes(b.data, -1, -2), a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(np.swapaxes(a.data, -1, -2) @ out.grad, b.shape)

        return fn

    return _result(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose: operand must be at least 2-D, got {a.shape}")

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += np.swapaxes(out.grad, -1, -2)

        return fn

    return _result(np.swapaxes(a.data, -1, -2).copy(), (a,), backward)


def reshape(a, shape) -> Tensor:
    """View the same values under a new shape."""
    a = as_tensor(a)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad.reshape(a.shape)

        return fn

    return _result(a.data.reshape(shape).copy(), (a,), backward)


def concat(tensors) -> Tensor:
    """Concatenate along the last axis."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading shapes disagree: {[t.shape for t in ts]}")
    widths = [t.shape[-1] for t in ts]

    def backward(out):
        def fn():
            offset = 0
            for t, w in zip(ts, widths):
                if t.requires_grad:
                    t.grad += out.grad[..., offset : offset + w]
                offset += w

        return fn

    return _result(np.concatenate([t.data for t in ts], axis=-1), tuple(ts), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _spread(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum over one axis (or all elements when axis is None)."""
    a = as_tensor(a)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _spread(out.grad, a.shape, axis, keepdims)

        return fn

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean over one axis (or all elements when axis is None)."""
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += _spread(out.grad, a.shape, axis, keepdims) / count

        return fn

    return _result(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * (a.data > 0.0)

        return fn

    return _result(np.maximum(a.data, 0.0), (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian-error GELU: x * Phi(x), with Phi the standard normal CDF."""
    a = as_tensor(a)
    phi = ndtr(a.data)

    def backward(out):
        def fn():
            if a.requires_grad:
                dens = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
                a.grad += out.grad * (phi + a.data * dens)

        return fn

    return _result(a.data * phi, (a,), backward)


def sigmoid(a) -> Tensor:
    """Logistic function, evaluated stably for large |x|."""
    a = as_tensor(a)
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def backward(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * s * (1.0 - s)

        return fn

    return _result(s.copy(), (a,), backward)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stabilised by per-row max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(out):
        def fn():
            if a.requires_grad:
                inner = (out.grad * p).sum(axis=-1, keepdims=True)
                a.grad += p * (out.grad - inner)

        return fn

    return _result(p.copy(), (a,), backward)


def log_softmax(a) -> Tensor:
    """log(softmax) over the last axis, computed without overflow."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse

    def backward(out):
        def fn():
            if a.requires_grad:
                total = out.grad.sum(axis=-1, keepdims=True)
                a.grad += out.grad - np.exp(logp) * total

        return fn

    return _result(logp.copy(), (a,), backward)


def layer_norm(a, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance (up to eps).

    When `gamma`/`beta` are given they apply an elementwise affine transform
    after normalisation; they must be 1-D of the normalised width.
    """
    a = as_tensor(a)
    if eps <= 0.0:
        raise ValueError("layer_norm: eps must be positive")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    if gamma is not None:
        out_data = xhat * gamma.data + beta.data
        inputs = (a, gamma, beta)
    else:
        out_data = xhat.copy()
        inputs = (a,)
    width = a.shape[-1]

    def backward(out):
        def fn():
            g = out.grad
            gh = g * gamma.data if gamma is not None else g
            if gamma is not None and gamma.requires_grad:
                gamma.grad += (g * xhat).reshape(-1, width).sum(axis=0)
            if beta is not None and beta.requires_grad:
                beta.grad += g.reshape(-1, width).sum(axis=0)
            if a.requires_grad:
                m1 = gh.mean(axis=-1, keepdims=True)
                m2 = (gh * xhat).mean(axis=-1, keepdims=True)
                a.grad += inv * (gh - m1 - xhat * m2)

        return fn

    return _result(out_data, inputs, backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of comparing an analytic gradient against central differences."""

    max_rel_error: float
    tol: float
    worst_index: tuple[int, ...]
    n_coords: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f, x: Tensor, h: float = 1e-5, tol: float = 1e-6, scale_floor: float = 1e-3) -> GradCheckReport:
    """Compare the recorded gradient of ``f`` at ``x`` with central differences.

    ``f`` must map a tensor to a scalar tensor and be pure (no recording side
    effects of its own). The per-coordinate relative error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, scale_floor)``; the
    floor turns the comparison into an absolute one for near-zero
    coordinates, where central differences only carry round-off noise.
    """
    x.requires_grad = True
    x.zero_grad()
    with Graph() as g:
        y = f(x)
    if y.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {y.shape}")
    if not np.isfinite(y.item()):
        raise ValueError("grad_check: f(x) is not finite")
    g.backward(y)
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x).item()
        flat[i] = orig - h
        down = f(x).item()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("grad_check: f produced a non-finite value during probing")
        numeric.reshape(-1)[i] = (up - down) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale_floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_error=float(rel.reshape(-1)[worst]),
        tol=tol,
        worst_index=tuple(np.unravel_index(worst, x.shape)) if x.ndim else (),
        n_coords=int(x.size),
    )
