"""Minimal layer toolkit: parameter registration plus the handful of
layers the attention blocks and the toy net are built from."""

from __future__ import annotations

import numpy as np

from tanet import tensor as T
from tanet.tam import ProjectionParams


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Module:
    """Base class with recursive parameter/buffer discovery.

    Submodules, parameters, lists of modules, and projection-parameter
    triples are found by walking instance attributes in definition order.
    Buffers (persistent non-learned arrays, e.g. normalization statistics)
    are declared via the ``_buffers`` class attribute.
    """

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, obj in vars(self).items():
            if isinstance(obj, (T.Parameter, Module, ProjectionParams)):
                yield name, obj
            elif isinstance(obj, (list, tuple)):
                for i, item in enumerate(obj):
                    if isinstance(item, (T.Parameter, Module, ProjectionParams)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, obj in self._children():
            full = f"{prefix}{name}"
            if isinstance(obj, T.Parameter):
                yield full, obj
            elif isinstance(obj, ProjectionParams):
                yield f"{full}.wq", obj.wq
                yield f"{full}.wk", obj.wk
                yield f"{full}.wv", obj.wv
            else:
                yield from obj.named_parameters(prefix=f"{full}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield f"{prefix}{name}", getattr(self, name)
        for name, obj in self._children():
            if isinstance(obj, Module):
                yield from obj.named_buffers(prefix=f"{prefix}{name}.")

    def set_buffer(self, name, arr):
        cur = getattr(self, name)
        if cur.shape != arr.shape:
            raise T.ShapeError(f"buffer {name}: shape {arr.shape} != {cur.shape}")
        setattr(self, name, np.ascontiguousarray(arr, dtype=cur.dtype))

    def train(self, mode=True):
        self.training = mode
        for _, obj in self._children():
            if isinstance(obj, Module):
                obj.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class PointwiseConv(Module):
    """1x1 convolution (pure channel mix), no bias."""

    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        super().__init__()
        self.weight = T.Parameter(
            he_normal(rng, (out_channels, in_channels), in_channels), dtype=dtype
        )

    def forward(self, x):
        return T.conv1x1(x, self.weight.value)


class DepthwiseConv2d(Module):
    """Per-channel 2-D convolution with dilation and zero 'same' padding."""

    def __init__(self, channels, kh, kw, dilation, rng, dtype=np.float32):
        super().__init__()
        self.dilation = int(dilation)
        self.weight = T.Parameter(
            he_normal(rng, (channels, kh, kw), kh * kw), dtype=dtype
        )

    def set_delta(self):
        """Reset to the identity kernel (1 at the anchor tap)."""
        w = np.zeros_like(self.weight.data)
        w[:, w.shape[1] // 2, w.shape[2] // 2] = 1
        self.weight.data = w

    def forward(self, x):
        return T.conv2d_depthwise(x, self.weight.value, self.dilation)


class Linear(Module):
    """Fully connected map ``[B, in] -> [B, out]``, no bias."""

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__()
        self.weight = T.Parameter(
            he_normal(rng, (in_features, out_features), in_features), dtype=dtype
        )

    def forward(self, x):
        return T.matmul(x, self.weight.value)


class BatchNorm2d(Module):
    """Per-channel batch normalization over (batch, height, width).

    Training mode normalizes with current-batch statistics and updates the
    running estimates with the given momentum; evaluation mode uses the
    frozen running statistics.
    """

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = T.Parameter(np.ones(channels), dtype=dtype)
        self.beta = T.Parameter(np.zeros(channels), dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x):
        T._require(x.ndim == 4, "BatchNorm2d expects [B,C,H,W]")
        b, c, h, w = x.shape
        if self.training:
            m = T.mean_bhw(x)
            xc = T.sub(x, T.bcast_c(m, b, h, w))
            var = T.mean_bhw(T.mul(xc, xc))
            mom = self.momentum
            self.running_mean = ((1 - mom) * self.running_mean + mom * m.data).astype(
                self.running_mean.dtype
            )
            self.running_var = ((1 - mom) * self.running_var + mom * var.data).astype(
                self.running_var.dtype
            )
            inv = T.rsqrt(T.add_scalar(var, self.eps))
            y = T.mul(xc, T.bcast_c(inv, b, h, w))
            return T.add(
                T.mul(y, T.bcast_c(self.gamma.value, b, h, w)),
                T.bcast_c(self.beta.value, b, h, w),
            )
        inv = T.constant(
            1.0 / np.sqrt(self.running_var.astype(np.float64) + self.eps),
            dtype=x.dtype,
        )
        scale = T.mul(self.gamma.value, inv)
        shift = T.sub(self.beta.value, T.mul(T.constant(self.running_mean), scale))
        return T.add(T.mul(x, T.bcast_c(scale, b, h, w)), T.bcast_c(shift, b, h, w))
