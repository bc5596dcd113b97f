"""Dense tensors with reverse-mode automatic differentiation.

A ``Tape`` records every primitive operation applied while it is active;
``backward`` replays the records in reverse, accumulating gradients into the
participating tensors. With no active tape, operations run gradient-free
(evaluation mode).

Only the primitives this project needs exist here: elementwise arithmetic
with broadcasting, 2-D matmul, the standard nonlinearities, log-softmax,
same-padding convolution (via the selected kernel backend), global average
pooling, channel concat/slice, spatial tiling, row gather/scatter, and a few
reductions. Layer-level compositions (LSTM steps, batch norm, residual
blocks) live in :mod:`tomlab.nn.layers`.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import kernels

_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("supported dtypes: float32, float64")
    _DEFAULT_DTYPE = np.dtype(dtype).type


def default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(_DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def parameter(data, rng: Optional[np.random.Generator] = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


class Tape:
    """Ordered record of primitive operations; one backward pass each."""

    _active: Optional["Tape"] = None

    def __init__(self):
        self.nodes: list = []  # (out_tensor, backward_closure)
        self._used = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False


def _record(out: Tensor, backward) -> None:
    tape = Tape._active
    if tape is not None and out.requires_grad:
        tape.nodes.append((out, backward))


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable tensor's ``grad``."""
    if Tape._active is tape:
        raise RuntimeError("close the tape (exit the context) before backward()")
    if tape._used:
        raise RuntimeError("tape already consumed by a backward pass")
    if not tape.nodes:
        raise RuntimeError("backward before forward: the tape recorded no operations")
    if loss.data.ndim != 0:
        raise ValueError("loss must be a scalar tensor")
    tape._used = True
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)
    tape.nodes.clear()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray):
        return Tensor(x)
    # plain Python scalars/lists follow the configured dtype, so float
    # constants cannot promote float32 graphs to float64
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    _record(out, back)
    return out


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    _record(out, back)
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    _record(out, back)
    return out


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data / b.data, a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    _record(out, back)
    return out


def scale(a, s: float) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data * s, a.requires_grad)

    def back(g):
        a._accum(g * s)

    _record(out, back)
    return out


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def back(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    _record(out, back)
    return out


# -- nonlinearities ---------------------------------------------------------

def relu(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.maximum(a.data, 0), a.requires_grad)

    def back(g):
        a._accum(g * (a.data > 0))

    _record(out, back)
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y, a.requires_grad)

    def back(g):
        a._accum(g * y * (1.0 - y))

    _record(out, back)
    return out


def tanh(a) -> Tensor:
    a = _lift(a)
    y = np.tanh(a.data)
    out = Tensor(y, a.requires_grad)

    def back(g):
        a._accum(g * (1.0 - y * y))

    _record(out, back)
    return out


def exp(a) -> Tensor:
    a = _lift(a)
    y = np.exp(a.data)
    out = Tensor(y, a.requires_grad)

    def back(g):
        a._accum(g * y)

    _record(out, back)
    return out


def log(a) -> Tensor:
    a = _lift(a)
    out = Tensor(np.log(a.data), a.requires_grad)

    def back(g):
        a._accum(g / a.data)

    _record(out, back)
    return out


def square(a) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data * a.data, a.requires_grad)

    def back(g):
        a._accum(g * 2.0 * a.data)

    _record(out, back)
    return out


def sqrt(a) -> Tensor:
    a = _lift(a)
    y = np.sqrt(a.data)
    out = Tensor(y, a.requires_grad)

    def back(g):
        a._accum(g * 0.5 / y)

    _record(out, back)
    return out


def softplus(a) -> Tensor:
    """log(1 + e^x), computed stably; gradient is sigmoid(x)."""
    a = _lift(a)
    y = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))
    out = Tensor(y, a.requires_grad)

    def back(g):
        a._accum(g / (1.0 + np.exp(-a.data)))

    _record(out, back)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - logsum
    out = Tensor(y, a.requires_grad)

    def back(g):
        p = np.exp(y)
        a._accum(g - p * g.sum(axis=axis, keepdims=True))

    _record(out, back)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


# -- structure --------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def back(g):
        a._accum(g.reshape(a.shape))

    _record(out, back)
    return out


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_lift(p) for p in parts]
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        any(p.requires_grad for p in parts),
    )
    sizes = [p.data.shape[axis] for p in parts]

    def back(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis if axis >= 0 else g.ndim + axis] = slice(offset, offset + size)
                p._accum(g[tuple(sl)])
            offset += size

    _record(out, back)
    return out


def slice_last(a, lo: int, hi: int) -> Tensor:
    a = _lift(a)
    out = Tensor(np.ascontiguousarray(a.data[..., lo:hi]), a.requires_grad)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., lo:hi] = g
        a._accum(full)

    _record(out, back)
    return out


def spatial_tile(v, height: int, width: int) -> Tensor:
    """(B, D) -> (B, H, W, D): each component becomes a constant plane."""
    v = _lift(v)
    b, d = v.shape
    out = Tensor(
        np.broadcast_to(v.data[:, None, None, :], (b, height, width, d)).copy(),
        v.requires_grad,
    )

    def back(g):
        v._accum(g.sum(axis=(1, 2)))

    _record(out, back)
    return out


def gather_rows(a, idx: np.ndarray) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data[idx], a.requires_grad)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        a._accum(full)

    _record(out, back)
    return out


def scatter_rows(a, idx: np.ndarray, n_rows: int) -> Tensor:
    """Rows of ``a`` placed at ``idx`` in a zero tensor of ``n_rows`` rows."""
    a = _lift(a)
    data = np.zeros((n_rows,) + a.shape[1:], dtype=a.dtype)
    data[idx] = a.data
    out = Tensor(data, a.requires_grad)

    def back(g):
        a._accum(g[idx])

    _record(out, back)
    return out


# -- reductions -------------------------------------------------------------

def sum_all(a) -> Tensor:
    a = _lift(a)
    out = Tensor(a.data.sum(), a.requires_grad)

    def back(g):
        a._accum(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    _record(out, back)
    return out


def mean_all(a) -> Tensor:
    a = _lift(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_axes(a, axes, keepdims: bool = True) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims), a.requires_grad)

    def back(g):
        gg = g
        if not keepdims:
            for ax in sorted(axes):
                gg = np.expand_dims(gg, ax)
        a._accum(np.broadcast_to(gg, a.shape).astype(a.dtype, copy=False))

    _record(out, back)
    return out


def mean_axes(a, axes, keepdims: bool = True) -> Tensor:
    a = _lift(a)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_axes(a, axes, keepdims), 1.0 / count)


def avg_pool_global(a) -> Tensor:
    """(B, H, W, C) -> (B, C): mean over the full spatial extent."""
    a = _lift(a)
    b, h, w, c = a.shape
    out = Tensor(a.data.mean(axis=(1, 2)), a.requires_grad)

    def back(g):
        a._accum(np.broadcast_to(g[:, None, None, :], a.shape) / (h * w))

    _record(out, back)
    return out


# -- convolution ------------------------------------------------------------

def conv2d(x, w) -> Tensor:
    """Same-padding stride-1 NHWC convolution; weights (kh, kw, cin, cout).

    When a tape is recording, the forward column matrix is kept for the
    backward pass (memory for speed); gradient-free forwards skip it.
    """
    x, w = _lift(x), _lift(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(
            f"conv2d expects NHWC input and (kh,kw,cin,cout) weights, "
            f"got {x.shape} and {w.shape}"
        )
    if x.shape[3] != w.shape[2]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weights {w.shape}")
    requires = x.requires_grad or w.requires_grad
    recording = Tape._active is not None and requires
    if recording:
        y, cols = kernels.conv2d_forward(x.data, w.data, return_cols=True)
    else:
        y = kernels.conv2d_forward(x.data, w.data)
        cols = None
    out = Tensor(y, requires)

    def back(g):
        gx, gw = kernels.conv2d_backward(x.data, w.data, g, cols)
        if x.requires_grad:
            x._accum(gx)
        if w.requires_grad:
            w._accum(gw)

    _record(out, back)
    return out
