"""Dense float tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous NumPy array (float32 by default,
float64 selectable for gradient checks).  Operations build a DAG of
closures; :func:`backward` walks it in reverse topological order and
accumulates gradients into the ``grad`` buffers of leaf tensors (i.e.
:class:`Parameter` values).

Conventions enforced throughout:

* no implicit broadcasting -- mismatched shapes are errors; the only
  broadcast forms are the explicit ``bcast_*`` operations
* every operation result must be finite; NaN/Inf raises
  :class:`NonFiniteError` (can be suspended for benchmarking with
  :func:`finite_checks`)
* non-differentiable integer paths (argmin/argmax positions, level maps)
  are constants during backward
"""

from __future__ import annotations

import contextlib

import numpy as np

from tanet._backend import kernels as _K


class ShapeError(ValueError):
    """Operand dimensions violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced (or received) NaN or Inf."""


_GRAD_ENABLED = True
_FINITE_CHECKS = True

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled):
    """Toggle post-op NaN/Inf checks (benchmarks switch them off)."""
    global _FINITE_CHECKS
    prev, _FINITE_CHECKS = _FINITE_CHECKS, bool(enabled)
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _require(cond, msg):
    if not cond:
        raise ShapeError(msg)


class Tensor:
    """Immutable dense real tensor, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        _require(arr.dtype in _FLOAT_DTYPES, f"unsupported dtype {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        if _FINITE_CHECKS and not np.isfinite(self.data).all():
            raise NonFiniteError("tensor constructed with non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        _require(self.data.size == 1, "item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # -- operator sugar (Tensor op Tensor requires equal shapes) --
    def __add__(self, other):
        return add_scalar(self, other) if _is_number(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if _is_number(other):
            return add_scalar(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        _require(_is_number(other), "rsub expects a scalar")
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        return mul_scalar(self, other) if _is_number(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        _require(_is_number(other), "tensor division only by scalars")
        return mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter:
    """Learnable value with a persistent, zero-initialized gradient buffer."""

    __slots__ = ("value", "name")

    def __init__(self, data, dtype=None, name=""):
        self.value = Tensor(data, dtype=dtype, requires_grad=True)
        self.name = name

    @property
    def gradient(self):
        return self.value.grad

    @property
    def data(self):
        return self.value.data

    @data.setter
    def data(self, arr):
        arr = np.asarray(arr, dtype=self.value.data.dtype)
        _require(arr.shape == self.value.data.shape, "parameter shape is fixed")
        self.value.data = np.ascontiguousarray(arr)

    def zero_grad(self):
        self.value.zero_grad()

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.value.shape})"


def _is_number(x):
    return isinstance(x, (int, float, np.integer, np.floating))


def _node(data, parents, vjp, op):
    """Wrap an op result, attaching the tape entry when gradients are live."""
    if _FINITE_CHECKS and not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: non-finite values in result")
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def constant(data, dtype=None):
    """Tensor that never tracks gradients (weights of fixed transforms)."""
    return Tensor(data, dtype=dtype, requires_grad=False)


def backward(loss):
    """Reverse-mode sweep from a scalar; accumulates into leaf ``grad`` buffers."""
    _require(isinstance(loss, Tensor), "backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                if p._vjp is None and p.grad is not None:
                    p.grad += pg
                else:
                    acc = grads.get(id(p))
                    grads[id(p)] = pg if acc is None else acc + pg
        elif node.grad is not None:
            node.grad += g


def _same_dtype(a, b, op):
    _require(
        a.data.dtype == b.data.dtype,
        f"{op}: mixed dtypes {a.data.dtype.name} vs {b.data.dtype.name}",
    )


def _same_shape(a, b, op):
    _require(a.shape == b.shape, f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    _same_shape(a, b, "add")
    _same_dtype(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    _same_dtype(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    _same_shape(a, b, "mul")
    _same_dtype(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def add_scalar(a, s):
    s = a.data.dtype.type(s)
    return _node(a.data + s, (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a, s):
    s = a.data.dtype.type(s)
    return _node(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")


def relu(a):
    out = np.maximum(a.data, 0)
    return _node(out, (a,), lambda g: (g * (a.data > 0),), "relu")


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    out = np.sqrt(a.data)

    def vjp(g):
        # zero-gradient convention at 0: callers mask those positions anyway
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g * 0.5 / out, 0),)

    return _node(out, (a,), vjp, "sqrt")


def rsqrt(a):
    out = 1.0 / np.sqrt(a.data)
    def vjp(g):
        return (g * (-0.5) * out * out * out,)
    return _node(out, (a,), vjp, "rsqrt")


def masked_div(num, den, mask):
    """``num / den`` where ``mask`` holds, exactly 0 (with zero grad) elsewhere."""
    _same_shape(num, den, "masked_div")
    _same_dtype(num, den, "masked_div")
    mask = np.asarray(mask, dtype=bool)
    _require(mask.shape == num.shape, "masked_div: mask shape mismatch")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mask, num.data / den.data, num.data.dtype.type(0))

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gn = np.where(mask, g / den.data, 0)
            gd = np.where(mask, -g * num.data / (den.data * den.data), 0)
        return gn, gd

    return _node(out, (num, den), vjp, "masked_div")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    old = a.data.shape
    # contiguous data reshapes to a view; tensors are immutable so sharing is safe
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose2d(a):
    _require(a.ndim == 2, "transpose2d expects a matrix")
    return _node(
        np.ascontiguousarray(a.data.T), (a,),
        lambda g: (np.ascontiguousarray(g.T),), "transpose2d",
    )


def swap_last2(a):
    _require(a.ndim >= 2, "swap_last2 expects rank >= 2")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    return _node(
        out, (a,), lambda g: (np.ascontiguousarray(np.swapaxes(g, -1, -2)),),
        "swap_last2",
    )


def concat(tensors, axis):
    tensors = list(tensors)
    _require(len(tensors) >= 1, "concat of nothing")
    for t in tensors[1:]:
        _same_dtype(tensors[0], t, "concat")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp, "concat")


def flatten_samples(a):
    """``[B,K,H,W] -> [K, B*H*W]`` with pixel order (sample, row, col)."""
    _require(a.ndim == 4, "flatten_samples expects rank 4")
    b, k, h, w = a.shape
    out = np.ascontiguousarray(a.data.transpose(1, 0, 2, 3)).reshape(k, b * h * w)

    def vjp(g):
        return (np.ascontiguousarray(g.reshape(k, b, h, w).transpose(1, 0, 2, 3)),)

    return _node(out, (a,), vjp, "flatten_samples")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    _require(a.ndim == 2 and b.ndim == 2, "matmul expects matrices")
    _require(
        a.shape[1] == b.shape[0],
        f"matmul: inner extents differ ({a.shape} x {b.shape})",
    )
    _same_dtype(a, b, "matmul")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def bmm(a, b):
    """Batched matmul: ``[B,M,K] @ [B,K,N]`` or a shared ``[K,N]`` right operand."""
    _require(a.ndim == 3, "bmm expects a rank-3 left operand")
    _same_dtype(a, b, "bmm")
    if b.ndim == 2:
        _require(a.shape[2] == b.shape[0], "bmm: inner extents differ")

        def vjp(g):
            ga = np.matmul(g, b.data.T)
            gb = np.einsum("bmk,bmn->kn", a.data, g)
            return ga, gb

    else:
        _require(b.ndim == 3 and a.shape[0] == b.shape[0], "bmm: batch mismatch")
        _require(a.shape[2] == b.shape[1], "bmm: inner extents differ")

        def vjp(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return ga, gb

    return _node(np.matmul(a.data, b.data), (a, b), vjp, "bmm")


def conv1x1(x, w):
    """Pointwise channel mix: ``x[B,C,...]`` with ``w[O,C]`` -> ``[B,O,...]``."""
    _require(x.ndim in (3, 4), "conv1x1 expects [B,C,N] or [B,C,H,W]")
    _require(w.ndim == 2, "conv1x1 weight must be [out, in]")
    _require(w.shape[1] == x.shape[1], "conv1x1: channel mismatch")
    _same_dtype(x, w, "conv1x1")
    shp = x.shape
    xf = x.data.reshape(shp[0], shp[1], -1)
    out = np.matmul(w.data, xf).reshape(shp[0], w.shape[0], *shp[2:])

    def vjp(g):
        gf = g.reshape(shp[0], w.shape[0], -1)
        gx = np.matmul(w.data.T, gf).reshape(shp)
        gw = np.einsum("bon,bcn->oc", gf, xf)
        return gx, gw

    return _node(out, (x, w), vjp, "conv1x1")


def softmax_row(a):
    """Row softmax (last axis) with per-row max subtraction; rejects NaN input."""
    _require(a.ndim in (2, 3), "softmax_row expects rank 2 or 3")
    x = a.data
    if np.isnan(x).any():
        raise NonFiniteError("softmax_row: NaN in input")
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), vjp, "softmax_row")


# ---------------------------------------------------------------------------
# reductions and explicit broadcasts
# ---------------------------------------------------------------------------

def sum_all(a):
    out = np.asarray(a.data.sum(dtype=np.float64)).astype(a.data.dtype)

    def vjp(g):
        return (np.full_like(a.data, g.reshape(())),)

    return _node(out, (a,), vjp, "sum_all")


def gap(a):
    """Spatial mean per channel: ``[C,H,W] -> [C]`` or ``[B,C,H,W] -> [B,C]``.

    The reduction sorts values first so the result is bit-identical under
    any spatial permutation of the input.
    """
    _require(a.ndim in (3, 4), "gap expects [C,H,W] or [B,C,H,W]")
    x = a.data
    lead = x.shape[:-2]
    n = x.shape[-2] * x.shape[-1]
    _require(n >= 1, "gap over an empty map")
    flat = np.sort(x.reshape(*lead, n), axis=-1)
    out = (flat.sum(axis=-1, dtype=np.float64) / n).astype(x.dtype)

    def vjp(g):
        scale = x.dtype.type(1.0 / n)
        return (np.broadcast_to((g * scale)[..., None, None], x.shape),)

    return _node(out, (a,), vjp, "gap")


def mean_bhw(a):
    """Per-channel mean over batch and spatial axes: ``[B,C,H,W] -> [C]``."""
    _require(a.ndim == 4, "mean_bhw expects rank 4")
    b, c, h, w = a.shape
    n = b * h * w
    out = (a.data.sum(axis=(0, 2, 3), dtype=np.float64) / n).astype(a.data.dtype)

    def vjp(g):
        scale = a.data.dtype.type(1.0 / n)
        return (np.broadcast_to((g * scale)[None, :, None, None], a.shape),)

    return _node(out, (a,), vjp, "mean_bhw")


def channel_sum(a):
    """Sum over the channel axis: ``[B,C,H,W] -> [B,H,W]``."""
    _require(a.ndim == 4, "channel_sum expects rank 4")
    out = a.data.sum(axis=1)

    def vjp(g):
        return (np.broadcast_to(g[:, None, :, :], a.shape),)

    return _node(out, (a,), vjp, "channel_sum")


def sum_last(a):
    """Sum over the final axis: ``[B,C] -> [B]``."""
    _require(a.ndim == 2, "sum_last expects rank 2")
    out = a.data.sum(axis=-1)

    def vjp(g):
        return (np.broadcast_to(g[:, None], a.shape),)

    return _node(out, (a,), vjp, "sum_last")


def outer_rows(v, coeffs):
    """Scale a per-sample vector by fixed row coefficients:
    ``v[B,C]``, ``coeffs[L]`` -> ``out[b,l,c] = coeffs[l] * v[b,c]``."""
    _require(v.ndim == 2, "outer_rows expects [B,C]")
    coeffs = np.asarray(coeffs, dtype=v.data.dtype)
    _require(coeffs.ndim == 1, "outer_rows coefficients must be a vector")
    out = coeffs[None, :, None] * v.data[:, None, :]

    def vjp(g):
        return (np.einsum("blc,l->bc", g, coeffs),)

    return _node(out, (v,), vjp, "outer_rows")


def bcast_c(v, b, h, w):
    """Per-channel vector ``[C]`` -> ``[b,C,h,w]``."""
    _require(v.ndim == 1, "bcast_c expects [C]")
    out = np.broadcast_to(v.data[None, :, None, None], (b, v.shape[0], h, w)).copy()

    def vjp(g):
        return (g.sum(axis=(0, 2, 3)),)

    return _node(out, (v,), vjp, "bcast_c")


def bcast_bc(v, h, w):
    """Per-sample channel vector ``[B,C]`` -> ``[B,C,h,w]``."""
    _require(v.ndim == 2, "bcast_bc expects [B,C]")
    out = np.broadcast_to(v.data[:, :, None, None], (*v.shape, h, w)).copy()

    def vjp(g):
        return (g.sum(axis=(2, 3)),)

    return _node(out, (v,), vjp, "bcast_bc")


def bcast_b(v, h, w):
    """Per-sample scalar ``[B]`` -> ``[B,h,w]``."""
    _require(v.ndim == 1, "bcast_b expects [B]")
    out = np.broadcast_to(v.data[:, None, None], (v.shape[0], h, w)).copy()

    def vjp(g):
        return (g.sum(axis=(1, 2)),)

    return _node(out, (v,), vjp, "bcast_b")


def bcast_bhw(s, c):
    """Per-pixel scalar field ``[B,H,W]`` -> ``[B,c,H,W]``."""
    _require(s.ndim == 3, "bcast_bhw expects [B,H,W]")
    b, h, w = s.shape
    out = np.broadcast_to(s.data[:, None, :, :], (b, c, h, w)).copy()

    def vjp(g):
        return (g.sum(axis=1),)

    return _node(out, (s,), vjp, "bcast_bhw")


# ---------------------------------------------------------------------------
# extrema (gradient routed to the first attaining position)
# ---------------------------------------------------------------------------

def _extrema(a, kernel, op):
    _require(a.ndim == 3, f"{op} expects [B,C,N]")
    _require(a.shape[2] >= 1, f"{op} over an empty axis")
    val, arg = kernel(a.data)

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, arg[:, :, None], g[:, :, None], axis=2)
        return (gx,)

    out = _node(val, (a,), vjp, op)
    return out, arg


def channel_min(a):
    return _extrema(a, _K.channel_min_arg, "channel_min")[0]


def channel_max(a):
    return _extrema(a, _K.channel_max_arg, "channel_max")[0]


def channel_minmax(f):
    """Exact per-channel extrema of ``f[C,N]`` (or ``[B,C,N]``)."""
    _require(f.ndim in (2, 3), "channel_minmax expects [C,N] or [B,C,N]")
    squeeze = f.ndim == 2
    t = reshape(f, (1, *f.shape)) if squeeze else f
    mn, mx = channel_min(t), channel_max(t)
    if squeeze:
        mn, mx = reshape(mn, (f.shape[0],)), reshape(mx, (f.shape[0],))
    return mn, mx


# ---------------------------------------------------------------------------
# convolution / pooling / resampling
# ---------------------------------------------------------------------------

def conv2d_depthwise(x, w, dilation):
    """Per-channel 2-D correlation with dilation and zero 'same' padding.

    The anchor tap sits at index ``k // 2`` on each axis, so even kernels
    carry the extra padding on the leading (top/left) side.
    """
    _require(x.ndim in (3, 4), "conv2d_depthwise expects [C,H,W] or [B,C,H,W]")
    _require(w.ndim == 3, "kernel must be [C,kh,kw]")
    if not (isinstance(dilation, (int, np.integer)) and dilation >= 1):
        raise ShapeError(f"dilation must be a positive integer, got {dilation!r}")
    squeeze = x.ndim == 3
    xb = reshape(x, (1, *x.shape)) if squeeze else x
    _require(w.shape[0] == xb.shape[1], "conv2d_depthwise: channel mismatch")
    _same_dtype(x, w, "conv2d_depthwise")
    _, kh, kw = w.shape
    d = int(dilation)
    ph0, pw0 = (kh // 2) * d, (kw // 2) * d
    out = _K.dwconv2d(xb.data, w.data, d, ph0, pw0)

    def vjp(g):
        gx = _K.dwconv2d_grad_input(g, w.data, d, ph0, pw0)
        gw = _K.dwconv2d_grad_weight(xb.data, g, d, kh, kw, ph0, pw0)
        return gx, gw

    res = _node(out, (xb, w), vjp, "conv2d_depthwise")
    return reshape(res, x.shape) if squeeze else res


def avgpool2d(x, k):
    """Non-overlapping ``k x k`` mean pooling; spatial dims must divide by k."""
    _require(x.ndim == 4, "avgpool2d expects [B,C,H,W]")
    b, c, h, w = x.shape
    _require(h % k == 0 and w % k == 0, f"spatial dims {h}x{w} not divisible by {k}")
    blocks = x.data.reshape(b, c, h // k, k, w // k, k)
    out = blocks.mean(axis=(3, 5), dtype=np.float64).astype(x.data.dtype)

    def vjp(g):
        scale = x.data.dtype.type(1.0 / (k * k))
        gx = np.broadcast_to(
            (g * scale)[:, :, :, None, :, None], (b, c, h // k, k, w // k, k)
        )
        return (gx.reshape(b, c, h, w),)

    return _node(out, (x,), vjp, "avgpool2d")


def _upsample_matrix(n_in, factor, dtype):
    # half-pixel centers, edges clamped; rows are convex weights
    n_out = n_in * factor
    u = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        s = (o + 0.5) / factor - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        f = s - i0
        u[o, i0] += 1.0 - f
        u[o, i1] += f
    return u.astype(dtype)


def bilinear_upsample(x, factor):
    """Bilinear resize of ``[B,C,H,W]`` by an integer factor per axis."""
    _require(x.ndim == 4, "bilinear_upsample expects [B,C,H,W]")
    _require(isinstance(factor, (int, np.integer)) and factor >= 1, "factor >= 1")
    b, c, h, w = x.shape
    uy = _upsample_matrix(h, factor, x.data.dtype)
    ux = _upsample_matrix(w, factor, x.data.dtype)
    out = np.matmul(np.matmul(uy, x.data), ux.T)

    def vjp(g):
        return (np.matmul(np.matmul(uy.T, g), ux),)

    return _node(out, (x,), vjp, "bilinear_upsample")


def gather_levels(a, lev):
    """Pick attention rows per pixel: ``a[B,L,C]``, ``lev[B,C,N]`` -> ``[B,C,N]``.

    ``lev`` is an integer constant; gradients flow only into ``a``.
    """
    _require(a.ndim == 3, "gather_levels expects [B,L,C]")
    lev = np.ascontiguousarray(lev, dtype=np.int32)
    _require(lev.ndim == 3 and lev.shape[0] == a.shape[0], "level map batch mismatch")
    _require(lev.shape[1] == a.shape[2], "level map channel mismatch")
    levels = a.shape[1]
    out = _K.gather_levels(a.data, lev)

    def vjp(g):
        return (_K.scatter_levels_add(np.ascontiguousarray(g), lev, levels),)

    return _node(out, (a,), vjp, "gather_levels")
