"""Dense float64 tensors with taped reverse-mode differentiation.

Values are contiguous numpy float64 arrays. Every operation validates its
output and raises EvaluationError on NaN/Inf instead of propagating poison.
Gradients come from an explicit operation record (Tape): each primitive
appends (output, inputs, backward rule) during the forward pass, and
``Tape.backward`` replays the record in reverse, accumulating contributions
additively. Running backward twice doubles every ``.grad`` exactly.

Tensors are treated as immutable once a forward pass has completed; a Tape
must stay on the thread that created it.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EvaluationError, ShapeError

_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def _current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of primitive operations for one forward pass."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, output: "Tensor", inputs: tuple, backward: Callable) -> None:
        self._entries.append((output, inputs, backward))

    def backward(self, output: "Tensor") -> None:
        """Accumulate d(output)/dx into ``.grad`` of every recorded tensor.

        ``output`` must be a scalar. Replays the record in reverse order;
        contributions add, so a second call doubles every gradient.
        """
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        touched: dict[int, Tensor] = {id(output): output}
        for out, inputs, rule in reversed(self._entries):
            g = grads.get(id(out))
            if g is None:
                continue
            contribs = rule(g)
            for t, c in zip(inputs, contribs):
                if c is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + c
                else:
                    grads[key] = np.array(c, dtype=np.float64)
                    touched[key] = t
        for key, t in touched.items():
            if not t.requires_grad:
                continue
            g = grads[key].reshape(t.data.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g


class Tensor:
    """Dense float64 array with optional gradient accumulation."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C")
        if not np.all(np.isfinite(arr)):
            raise EvaluationError("tensor created with non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all routed through the module-level primitives
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _from_op(arr: np.ndarray, inputs: tuple, backward: Callable, name: str) -> Tensor:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{name} produced non-finite values")
    req = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(arr, req)
    tape = _current_tape()
    if tape is not None and req:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back over the axes numpy broadcasting expanded."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise primitives ---

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _from_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _from_op(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(all="ignore"):
        out_data = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(out_data, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        out_data = np.exp(a.data)

    def back(g):
        return (g * out_data,)

    return _from_op(out_data, (a,), back, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        out_data = np.log(a.data)

    def back(g):
        return (g / a.data,)

    return _from_op(out_data, (a,), back, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        out_data = np.sqrt(a.data)

    def back(g):
        return (g * 0.5 / out_data,)

    return _from_op(out_data, (a,), back, "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out_data * out_data),)

    return _from_op(out_data, (a,), back, "tanh")


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (g * np.sign(a.data),)

    return _from_op(np.abs(a.data), (a,), back, "absolute")


def relu(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (g * (a.data > 0.0),)

    return _from_op(np.maximum(a.data, 0.0), (a,), back, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out_data[~pos] = e / (1.0 + e)

    def back(g):
        return (g * out_data * (1.0 - out_data),)

    return _from_op(out_data, (a,), back, "sigmoid")


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values to [lo, hi]; the gradient passes only inside the interval."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi

    def back(g):
        return (g * inside,)

    return _from_op(out_data, (a,), back, "clamp")


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh form), built from primitives."""
    a = as_tensor(a)
    c = math.sqrt(2.0 / math.pi)
    inner = mul(add(a, mul(mul(mul(a, a), a), 0.044715)), c)
    return mul(mul(a, add(tanh(inner), 1.0)), 0.5)


# --- reductions and structure ---

def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _from_op(out_data, (a,), back, "sum")


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.data.shape),)

    return _from_op(out_data, (a,), back, "mean")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not agree: {a.shape} x {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _from_op(a.data @ b.data, (a, b), back, "matmul")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def back(g):
        return (g.reshape(a.data.shape),)

    return _from_op(a.data.reshape(shape), (a,), back, "reshape")


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inv),)

    return _from_op(a.data.transpose(axes), (a,), back, "permute")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return permute(a, (1, 0))


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _from_op(np.concatenate([p.data for p in parts], axis=axis),
                    parts, back, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _from_op(np.array(out_data), (a,), back, "getitem")


def take_columns(a, cols: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"take_columns expects a matrix, got shape {a.shape}")
    cols = np.asarray(cols, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        full[:, cols] = g
        return (full,)

    return _from_op(a.data[:, cols], (a,), back, "take_columns")


def scatter_columns(a, cols: Sequence[int], width: int) -> Tensor:
    """Place the columns of ``a`` at positions ``cols`` of a zero matrix."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"scatter_columns expects a matrix, got shape {a.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    out_data = np.zeros((a.shape[0], width))
    out_data[:, cols] = a.data

    def back(g):
        return (g[:, cols],)

    return _from_op(out_data, (a,), back, "scatter_columns")


def conv_transpose2d(x, weight, stride: int, padding: int) -> Tensor:
    """Transposed 2-D convolution.

    x: (C_in, H, W); weight: (C_in, C_out, K, K). Output spatial size is
    (H - 1) * stride - 2 * padding + K per axis.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or x.shape[0] != weight.shape[0]:
        raise ShapeError(
            f"conv_transpose2d shapes do not agree: {x.shape} vs {weight.shape}")
    _, h, w = x.shape
    _, c_out, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv_transpose2d kernel must be square, got {k}x{k2}")
    h_out = (h - 1) * stride - 2 * padding + k
    w_out = (w - 1) * stride - 2 * padding + k
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(
            f"conv_transpose2d output {h_out}x{w_out} is empty for input {x.shape}")
    buf = np.zeros((c_out, (h - 1) * stride + k, (w - 1) * stride + k))
    for ki in range(k):
        for kj in range(k):
            contrib = np.tensordot(weight.data[:, :, ki, kj], x.data, axes=([0], [0]))
            buf[:, ki:ki + (h - 1) * stride + 1:stride,
                kj:kj + (w - 1) * stride + 1:stride] += contrib
    out_data = buf[:, padding:padding + h_out, padding:padding + w_out]

    def back(g):
        gbuf = np.zeros((c_out, (h - 1) * stride + k, (w - 1) * stride + k))
        gbuf[:, padding:padding + h_out, padding:padding + w_out] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for ki in range(k):
            for kj in range(k):
                sub = gbuf[:, ki:ki + (h - 1) * stride + 1:stride,
                           kj:kj + (w - 1) * stride + 1:stride]
                gx += np.tensordot(weight.data[:, :, ki, kj], sub, axes=([1], [0]))
                gw[:, :, ki, kj] = np.tensordot(x.data, sub, axes=([1, 2], [1, 2]))
        return gx, gw

    return _from_op(out_data, (x, weight), back, "conv_transpose2d")


# --- contract operations ---

def linear(x, weight, bias) -> Tensor:
    """Row-wise affine map y = x @ weight + bias."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear shapes do not agree: {x.shape} x {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias shape {bias.shape} vs width {weight.shape[1]}")
    return add(matmul(x, weight), bias)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = as_tensor(x)
    if x.data.shape == () or x.data.shape[axis] == 0:
        raise ShapeError(f"softmax needs a non-empty axis, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_data,)

    return _from_op(out_data, (x,), back, "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by the affine (gamma, beta)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects a matrix, got shape {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs width {d}")
    if eps <= 0:
        raise DomainError(f"layer_norm eps must be positive, got {eps}")
    mu = tmean(x, axis=1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=1, keepdims=True)
    normed = div(centered, sqrt(add(var, eps)))
    return add(mul(normed, gamma), beta)


# --- gradient oracle ---

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> float:
    """Compare taped gradients of the scalar ``f()`` with central differences.

    Returns the max over all parameter entries of
    |analytic - numeric| / max(1, |analytic|). ``f`` must be deterministic
    and read the given parameter tensors.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise DomainError(f"grad_check eps {eps} outside [1e-7, 1e-3]")
    for t in params:
        t.grad = None
    with Tape() as tape:
        out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise EvaluationError("grad_check target is not a finite scalar")
    tape.backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in params]
    for t in params:
        t.grad = None

    worst = 0.0
    for t, a in zip(params, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst
