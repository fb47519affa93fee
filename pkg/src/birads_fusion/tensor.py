"""Dense float64 tensors with reverse-mode automatic differentiation.

The recorder is a Wengert list ("tape"): every differentiable operation
appends one entry in execution order, which is by construction a
topological order of the data-flow graph. ``backward`` walks the tape in
reverse, pushing gradient flow from the loss to every reachable tensor
that has ``requires_grad`` set. Gradients accumulate into ``.grad``, so
calling ``backward`` twice without zeroing doubles them.

Everything is float64: the point of this library is verifiability
(finite-difference checks at 1e-4 relative tolerance), not throughput.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

Array = np.ndarray

# One tape entry: (output, parents, backward_fn). backward_fn maps the
# output gradient to a tuple of parent gradients (None for constants).
_TapeEntry = tuple["Tensor", tuple["Tensor", ...], Callable[[Array], tuple]]

_TAPE: list[_TapeEntry] = []
_GRAD_ENABLED: bool = True


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    # -- bookkeeping ----------------------------------------------------

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar --------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def exp(self):
        return texp(self)

    def log(self):
        return tlog(self)

    def sqrt(self):
        return tsqrt(self)

    def backward(self) -> None:
        backward(self)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """A trainable leaf. With ``rng`` and ``scale``, draws N(0, scale^2)."""
    if rng is not None:
        data = rng.normal(0.0, scale if scale is not None else 1.0, size=data)
    return Tensor(data, requires_grad=True)


# -- tape machinery -------------------------------------------------------


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> None:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE.append((out, parents, backward_fn))


def clear_tape() -> None:
    """Drop all recorded operations. Call between optimizer steps."""
    _TAPE.clear()


def tape_length() -> int:
    return len(_TAPE)


@contextmanager
def no_grad():
    """Disable recording inside the block (inference / finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor reachable from loss."""
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    flows: dict[Tensor, Array] = {loss: np.ones_like(loss.data)}
    for out, parents, backward_fn in reversed(_TAPE):
        g = flows.pop(out, None)
        if g is None:
            continue
        if out.requires_grad:
            out.grad = g.copy() if out.grad is None else out.grad + g
        for p, pg in zip(parents, backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            acc = flows.get(p)
            flows[p] = pg if acc is None else acc + pg
    # Whatever is left in flows is a leaf (never an entry output).
    for t, g in flows.items():
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and linear algebra ---------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data / b.data)
    _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )
    return out


def pow_const(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    e = float(exponent)
    out = Tensor(a.data**e)
    _record(out, (a,), lambda g: (g * e * a.data ** (e - 1.0),))
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (m,k)x(k,n); got {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    _record(out, (a,), lambda g: (g * mask,))
    return out


def texp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))
    _record(out, (a,), lambda g: (g * out.data,))
    return out


def tlog(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def tsqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.data))
    _record(out, (a,), lambda g: (g * 0.5 / out.data,))
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    _record(out, (a,), back)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.transpose(axes))
    inv = None if axes is None else tuple(np.argsort(axes))
    _record(out, (a,), lambda g: (g.transpose(inv),))
    return out


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[idx])

    def back(g: Array):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    _record(out, (a,), back)
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g: Array):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(ts), back)
    return out


# -- softmax family --------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Shift-stabilized softmax along ``axis``; slices sum to one."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g: Array):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    _record(out, (a,), back)
    return out


def log_sum_exp(a) -> Tensor:
    """Stable log(sum(exp(x))) of all elements; backward is the softmax."""
    a = _as_tensor(a)
    m = a.data.max()
    e = np.exp(a.data - m)
    s = e.sum()
    out = Tensor(np.asarray(m + np.log(s)))
    _record(out, (a,), lambda g: (g * e / s,))
    return out


# -- normalization ---------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance; then affine."""
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    xhat = div(centered, tsqrt(add(var, eps)))
    return add(mul(xhat, gamma), beta)


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize a (C,H,W) map within channel groups, then per-channel affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim != 3:
        raise DimensionError(f"group_norm expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if groups < 1 or c % groups != 0:
        raise ConfigurationError(f"channel count {c} not divisible by groups {groups}")
    r = reshape(x, (groups, (c // groups) * h * w))
    mu = tmean(r, axis=1, keepdims=True)
    centered = sub(r, mu)
    var = tmean(mul(centered, centered), axis=1, keepdims=True)
    xhat = reshape(div(centered, tsqrt(add(var, eps))), (c, h, w))
    return add(mul(xhat, reshape(gamma, (c, 1, 1))), reshape(beta, (c, 1, 1)))


def weight_standardize(w, eps: float = 1e-8) -> Tensor:
    """Zero-mean, unit-variance per output filter of a (Cout,Cin,kh,kw) kernel."""
    if eps <= 0:
        raise ConfigurationError("weight_standardize eps must be positive")
    w = _as_tensor(w)
    cout = w.shape[0]
    flat = reshape(w, (cout, -1))
    mu = tmean(flat, axis=1, keepdims=True)
    centered = sub(flat, mu)
    var = tmean(mul(centered, centered), axis=1, keepdims=True)
    return reshape(div(centered, tsqrt(add(var, eps))), w.shape)


# -- convolution and pooling ------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (Cin,H,W) map with a (Cout,Cin,kh,kw) kernel."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise DimensionError(f"conv2d got input {x.shape} and kernel {w.shape}")
    cin, h_in, w_in = x.shape
    cout, _, kh, kw = w.shape
    hp, wp = h_in + 2 * padding, w_in + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (Cin, H', W', kh, kw)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, h_out * w_out)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_data = (wmat @ cols).reshape(cout, h_out, w_out)

    bias = _as_tensor(b) if b is not None else None
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]
    out = Tensor(out_data)

    def back(g: Array):
        gmat = g.reshape(cout, h_out * w_out)
        gw = (gmat @ cols.T).reshape(w.shape)
        gcols = (wmat.T @ gmat).reshape(cin, kh, kw, h_out, w_out)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += gcols[:, i, j]
        gx = gxp[:, padding : padding + h_in, padding : padding + w_in]
        gb = gmat.sum(axis=1) if bias is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, bias)
    _record(out, parents, back)
    return out


def max_pool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial extents must divide by ``size``."""
    x = _as_tensor(x)
    c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"pool size {size} does not divide input {x.shape}")
    r = x.data.reshape(c, h // size, size, w // size, size)
    out_data = r.max(axis=(2, 4))
    out = Tensor(out_data)

    def back(g: Array):
        mask = r == out_data[:, :, None, :, None]
        gx = mask * g[:, :, None, :, None]
        return (gx.reshape(x.shape),)

    _record(out, (x,), back)
    return out


# -- regularization and optimization ----------------------------------------


def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity (the same object) when not training or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * mask)
    _record(out, (x,), lambda g: (g * mask,))
    return out


def sgd_momentum_step(
    params: Sequence[Tensor],
    grads: Sequence[Array],
    velocities: Sequence[Array],
    lr: float,
    momentum: float,
) -> Sequence[Tensor]:
    """Heavy-ball update in place: v <- momentum*v + g; w <- w - lr*v."""
    for w, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g
        w.data -= lr * v
    return params
