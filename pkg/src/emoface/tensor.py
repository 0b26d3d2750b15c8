"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a float32/float64 ndarray. While a ``GradTape`` is active,
every differentiable op appends a record (output, inputs, backward closure) to
the tape; ``GradTape.backward`` replays those records in exact reverse
execution order and accumulates gradients additively into ``Tensor.grad``.

CPU only, single-threaded per training step. Tensors are treated as immutable
values: ops never write into their inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf as _erf


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class SequenceTooShortError(ValueError):
    """Temporal input is shorter than the kernel it is convolved with."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the op (e.g. zero vector in cosine similarity)."""


_FLOATS = (np.float32, np.float64)


def _as_array(x, dtype=None) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.dtype.type not in _FLOATS:
        a = a.astype(np.float32)
    return a


class Tensor:
    """Dense real array plus gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and ndarrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradTape:
    """Ordered record of executed ops; backward walks it in reverse.

    A tensor that lies on no path from the backward root keeps ``grad=None``
    (reported as exact zeros by :func:`grad_of`).
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a GradTape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._entries)

    def backward(self, root: Tensor, seed: np.ndarray | None = None):
        """Accumulate d(root)/d(x) into ``x.grad`` for every tensor on the tape."""
        if seed is None:
            seed = np.ones_like(root.data)
        root.grad = seed if root.grad is None else root.grad + seed
        for out, inputs, backward_fn in reversed(self._entries):
            if out.grad is None:
                continue
            grads = backward_fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = g.astype(t.dtype, copy=False)
                else:
                    t.grad = t.grad + g.astype(t.dtype, copy=False)


_ACTIVE_TAPE: GradTape | None = None


def active_tape() -> GradTape | None:
    return _ACTIVE_TAPE


def register_op(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Record a custom op on the active tape; no-op outside a tape.

    ``backward_fn(out_grad)`` must return one gradient array (or None) per
    input, in order. Entry point for ops defined outside this module.
    """
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._entries.append((out, inputs, backward_fn))
    return out


def grad_of(t: Tensor) -> np.ndarray:
    """Gradient of ``t`` after backward; exact zeros if it received none."""
    if t.grad is None:
        return np.zeros_like(t.data)
    return t.grad


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return register_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return register_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return register_op(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data / b.data)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return register_op(out, (a, b), backward)


def neg(a) -> Tensor:
    a = _lift(a)
    out = Tensor(-a.data)
    return register_op(out, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data ** p)

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return register_op(out, (a,), backward)


def exp(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.exp(a.data))
    return register_op(out, (a,), lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.log(a.data))
    return register_op(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.sqrt(a.data))
    return register_op(out, (a,), lambda g: (g * 0.5 / out.data,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.tanh(a.data))
    return register_op(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    d = a.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(y.astype(d.dtype))
    return register_op(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))


def softplus(a) -> Tensor:
    """log(1+exp(x)), overflow-safe."""
    a = _lift(a)
    out = Tensor(np.logaddexp(0.0, a.data).astype(a.dtype))

    def backward(g):
        d = a.data
        s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
        return (g * s,)

    return register_op(out, (a,), backward)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _lift(a)
    out = Tensor(np.where(a.data > 0, a.data, slope * a.data))

    def backward(g):
        return (g * np.where(a.data > 0, 1.0, slope),)

    return register_op(out, (a,), backward)


_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit, x*Phi(x)."""
    a = _lift(a)
    d = a.data
    phi = 0.5 * (1.0 + _erf(d / _SQRT_2))
    out = Tensor((d * phi).astype(d.dtype))

    def backward(g):
        dens = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        return (g * (phi + d * dens),)

    return register_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.reshape(shape))
    return register_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _lift(a)
    inv = np.argsort(axes)
    out = Tensor(a.data.transpose(axes))
    return register_op(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_lift(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return register_op(out, tuple(parts), backward)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _lift(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return register_op(out, (a,), backward)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return register_op(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = 1
        for ax in axes:
            n *= a.shape[ax]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions do not match: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return register_op(out, (a, b), backward)


def gather_rows(table, idx) -> Tensor:
    """Rows of a 2-D table selected by an integer index array."""
    table = _lift(table)
    if table.ndim != 2:
        raise ShapeMismatchError(f"gather_rows expects a 2-D table, got shape {table.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(table.data[idx])

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return register_op(out, (table,), backward)


def repeat_time(a, factor: int) -> Tensor:
    """Nearest-neighbor upsampling along axis -2: each step repeated ``factor`` times."""
    a = _lift(a)
    tau = a.shape[-2]
    expanded = np.broadcast_to(a.data[..., :, None, :], a.shape[:-2] + (tau, factor, a.shape[-1]))
    out = Tensor(expanded.reshape(a.shape[:-2] + (tau * factor, a.shape[-1])).copy())

    def backward(g):
        return (g.reshape(a.shape[:-2] + (tau, factor, a.shape[-1])).sum(axis=-2),)

    return register_op(out, (a,), backward)


def take_along_time(a, idx) -> Tensor:
    """Permute values along axis -2 by per-slot indices (e.g. from argsort).

    ``idx`` must be a permutation along that axis for every remaining index,
    so the backward scatter has no collisions.
    """
    a = _lift(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(np.take_along_axis(a.data, idx, axis=-2))

    def backward(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, g, axis=-2)
        return (ga,)

    return register_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# normalization / reductions used by the model stacks


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return register_op(out, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    n = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        dxhat = g * gain.data
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        return gx, ggain, gbias

    return register_op(out, (a, gain, bias), backward)


def cosine_sim(u, v, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along the last axis; errors on zero vectors."""
    u, v = _lift(u), _lift(v)
    nu = float(np.min(np.linalg.norm(u.data, axis=-1)))
    nv = float(np.min(np.linalg.norm(v.data, axis=-1)))
    if nu < 1e-12 or nv < 1e-12:
        raise DegenerateInputError("cosine_sim is undefined for zero vectors")
    un = sqrt(sum_(u * u, axis=-1) + eps)
    vn = sqrt(sum_(v * v, axis=-1) + eps)
    return sum_(u * v, axis=-1) / (un * vn)


# ---------------------------------------------------------------------------
# temporal convolutions (valid cross-correlation, channels-last)


def _conv_windows(data: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (..., T, C) -> (..., tau, C, K) with w[..., t, c, j] = x[..., t*stride + j, c]
    w = sliding_window_view(data, k, axis=-2)
    idx = [slice(None)] * w.ndim
    idx[-3] = slice(None, None, stride)
    return w[tuple(idx)]


def conv1d(x, kernel, stride: int = 1) -> Tensor:
    """Valid cross-correlation along time. x: (..., T, C_in), kernel: (K, C_in, C_out)."""
    x, kernel = _lift(x), _lift(kernel)
    k, c_in, _ = kernel.shape
    t = x.shape[-2]
    if k > t:
        raise SequenceTooShortError(f"kernel size {k} exceeds sequence length {t}")
    if x.shape[-1] != c_in:
        raise ShapeMismatchError(f"conv1d channels mismatch: input {x.shape} vs kernel {kernel.shape}")
    w = _conv_windows(x.data, k, stride)
    out = Tensor(np.einsum("...tcj,jco->...to", w, kernel.data, optimize=True).astype(x.dtype))
    tau = out.shape[-2]

    def backward(g):
        gk = np.einsum("...tcj,...to->jco", w, g, optimize=True)
        gw = np.einsum("...to,jco->...tjc", g, kernel.data, optimize=True)
        gx = np.zeros_like(x.data)
        span = (tau - 1) * stride + 1
        for j in range(k):
            idx = [slice(None)] * gx.ndim
            idx[-2] = slice(j, j + span, stride)
            sl = [slice(None)] * gw.ndim
            sl[-2] = j
            gx[tuple(idx)] += gw[tuple(sl)]
        return gx, gk

    return register_op(out, (x, kernel), backward)


def upconv1d(x, kernel, factor: int) -> Tensor:
    """Transposed temporal convolution expanding each step into ``factor`` frames.

    x: (..., tau, C_in), kernel: (factor, C_in, C_out) -> (..., tau*factor, C_out).
    """
    x, kernel = _lift(x), _lift(kernel)
    k, c_in, c_out = kernel.shape
    if k != factor:
        raise ShapeMismatchError(f"upconv1d kernel leading dim {k} must equal factor {factor}")
    if x.shape[-1] != c_in:
        raise ShapeMismatchError(f"upconv1d channels mismatch: input {x.shape} vs kernel {kernel.shape}")
    y = np.einsum("...tc,jco->...tjo", x.data, kernel.data, optimize=True)
    out_shape = x.shape[:-2] + (x.shape[-2] * factor, c_out)
    out = Tensor(y.reshape(out_shape).astype(x.dtype))

    def backward(g):
        gr = g.reshape(y.shape)
        gx = np.einsum("...tjo,jco->...tc", gr, kernel.data, optimize=True)
        gk = np.einsum("...tc,...tjo->jco", x.data, gr, optimize=True)
        return gx, gk

    return register_op(out, (x, kernel), backward)


# ---------------------------------------------------------------------------
# gradient verification


class GradCheckReport:
    """Outcome of comparing tape gradients against central finite differences."""

    def __init__(self, max_rel_err: float, worst_input: int, finite: bool):
        self.max_rel_err = max_rel_err
        self.worst_input = worst_input
        self.finite = finite

    def ok(self, tol: float) -> bool:
        return self.finite and self.max_rel_err < tol

    def __repr__(self):
        return f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, worst_input={self.worst_input}, finite={self.finite})"


def grad_check(f, points, h: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    ``points`` is a list of float64 arrays; ``f`` receives one Tensor per
    point and must return a scalar Tensor. Relative error per element is
    |ad - fd| / max(1, |ad|, |fd|).
    """
    xs = [Tensor(np.asarray(p, dtype=np.float64), requires_grad=True) for p in points]
    with GradTape() as tape:
        y = f(*xs)
    if not np.isfinite(y.data).all():
        return GradCheckReport(np.inf, -1, finite=False)
    tape.backward(y)
    ad_grads = [grad_of(x) for x in xs]

    max_err = 0.0
    worst = 0
    for i, p in enumerate(points):
        base = np.asarray(p, dtype=np.float64)
        fd = np.zeros_like(base)
        flat = base.reshape(-1)
        fd_flat = fd.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = f(*[Tensor(q, dtype=np.float64) for q in points]).item()
            flat[j] = orig - h
            lo = f(*[Tensor(q, dtype=np.float64) for q in points]).item()
            flat[j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                return GradCheckReport(np.inf, i, finite=False)
            fd_flat[j] = (hi - lo) / (2.0 * h)
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(ad_grads[i])))
        err = float(np.max(np.abs(ad_grads[i] - fd) / denom)) if fd.size else 0.0
        if err > max_err:
            max_err = err
            worst = i
    return GradCheckReport(max_err, worst, finite=True)
