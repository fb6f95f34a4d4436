"""Threshold attention: attention over per-channel quantization bins.

Instead of attending over all N pixels, each channel of a feature map is
quantized into L bins.  Attention runs over the L x C matrix of bin
centers (cost independent of N), and the per-pixel result is recovered
by a gather through the integer level map -- total cost linear in N.

Gradient convention: level indices and the *positions* of the per-channel
extrema are constants during backward.  Gradients reach the projection
weights through Q/K/V and reach the input only through the bin-center
values at the fixed extremum positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tanet import tensor as T
from tanet._backend import kernels as _K


@dataclass(frozen=True)
class ThresholdSpec:
    """Number of quantization bins per channel."""

    levels: int = 150

    def __post_init__(self):
        if not (isinstance(self.levels, (int, np.integer)) and self.levels >= 1):
            raise ValueError(f"levels must be a positive integer, got {self.levels!r}")


@dataclass
class ThresholdMatrix:
    """Per-channel bin centers plus the extrema that define the bins."""

    centers: T.Tensor  # [L, C]
    channel_min: T.Tensor  # [C]
    channel_max: T.Tensor  # [C]


@dataclass
class ProjectionParams:
    """Square query/key/value projections shared by all bins."""

    wq: T.Parameter
    wk: T.Parameter
    wv: T.Parameter

    def __post_init__(self):
        c = self.wq.value.shape
        if len(c) != 2 or c[0] != c[1]:
            raise T.ShapeError("projection matrices must be square")
        for p in (self.wk, self.wv):
            if p.value.shape != c:
                raise T.ShapeError("projection matrices must share one extent")

    @property
    def channels(self):
        return self.wq.value.shape[0]

    @classmethod
    def create(cls, channels, rng, dtype=np.float32, scale=None):
        """Random projections with 1/sqrt(C) fan-in scaling."""
        if scale is None:
            scale = 1.0 / np.sqrt(channels)
        draw = lambda: rng.standard_normal((channels, channels)) * scale
        return cls(
            wq=T.Parameter(draw(), dtype=dtype, name="wq"),
            wk=T.Parameter(draw(), dtype=dtype, name="wk"),
            wv=T.Parameter(draw(), dtype=dtype, name="wv"),
        )

    def parameters(self):
        return [self.wq, self.wk, self.wv]


@dataclass
class AttentionState:
    """Intermediates of one attention pass over the threshold matrix."""

    q: T.Tensor  # [L, C]
    k: T.Tensor  # [L, C]
    v: T.Tensor  # [L, C]
    s: T.Tensor  # [L, L], rows sum to 1
    a: T.Tensor  # [L, C]


@dataclass
class LevelMap:
    """Integer bin index of every pixel feature; entries in [0, L)."""

    levels: np.ndarray  # int32 [C, N]
    num_levels: int


def _center_coeffs(levels, dtype):
    # bin midpoints of [0, 1] split into `levels` equal intervals
    l = np.arange(levels, dtype=np.float64)
    return np.asarray((2.0 * l + 1.0) / (2.0 * levels), dtype=dtype)


def _centers_batched(mn, mx, levels):
    # centers[b,l,c] = coeff[l] * (mx - mn)[b,c] + mn[b,c]
    coeffs = _center_coeffs(levels, mn.dtype)
    spread = T.outer_rows(T.sub(mx, mn), coeffs)
    base = T.outer_rows(mn, np.ones(levels, dtype=mn.dtype))
    return T.add(spread, base)


def threshold_centers(f, spec):
    """Bin-center matrix of ``f[C,N]``: L values per channel spanning its range.

    ``centers[l][c] = (max_c - min_c) * (2l + 1) / (2L) + min_c``
    """
    T._require(f.ndim == 2, "threshold_centers expects [C, N]")
    T._require(f.shape[1] >= 1, "threshold_centers needs at least one pixel")
    c = f.shape[0]
    fb = T.reshape(f, (1, c, f.shape[1]))
    mn, mx = T.channel_min(fb), T.channel_max(fb)
    centers = _centers_batched(mn, mx, spec.levels)
    return ThresholdMatrix(
        centers=T.reshape(centers, (spec.levels, c)),
        channel_min=T.reshape(mn, (c,)),
        channel_max=T.reshape(mx, (c,)),
    )


def discretize(f, spec):
    """Integer bin index of every entry of ``f[C,N]``.

    ``levels[c][n] = clamp(floor((f - min_c) / (max_c - min_c) * L), 0, L-1)``;
    constant channels map to 0.  Inverts the binning of
    :func:`threshold_centers`: entry (c, n) falls in the bin whose center is
    ``centers[levels[c][n]][c]``.
    """
    T._require(f.ndim == 2, "discretize expects [C, N]")
    x = f.data[None]
    mn, _ = _K.channel_min_arg(x)
    mx, _ = _K.channel_max_arg(x)
    lev = _K.discretize_levels(x, mn, mx, spec.levels)
    return LevelMap(levels=lev[0], num_levels=spec.levels)


def attention_over_thresholds(tm, proj):
    """Project the threshold matrix to Q/K/V and attend: ``A = softmax(QK^T) V``.

    No scale factor on the logits; stability comes from the row-max
    subtraction inside the softmax.
    """
    centers = tm.centers
    T._require(centers.ndim == 2, "attention_over_thresholds expects [L, C] centers")
    if centers.shape[1] != proj.channels:
        raise T.ShapeError(
            f"channel mismatch: centers have {centers.shape[1]}, "
            f"projections have {proj.channels}"
        )
    q = T.matmul(centers, proj.wq.value)
    k = T.matmul(centers, proj.wk.value)
    v = T.matmul(centers, proj.wv.value)
    s = T.softmax_row(T.matmul(q, T.transpose2d(k)))
    a = T.matmul(s, v)
    return AttentionState(q=q, k=k, v=v, s=s, a=a)


def _attention_batched(centers, proj):
    q = T.bmm(centers, proj.wq.value)
    k = T.bmm(centers, proj.wk.value)
    v = T.bmm(centers, proj.wv.value)
    s = T.softmax_row(T.bmm(q, T.swap_last2(k)))
    return T.bmm(s, v)


def tam_forward(f, spec, proj):
    """Threshold attention over a feature map; output has the input's shape.

    Accepts ``[C,H,W]`` or ``[B,C,H,W]``; batched input is handled
    independently per sample (per-sample channel extrema).
    """
    T._require(f.ndim in (3, 4), "tam_forward expects [C,H,W] or [B,C,H,W]")
    if not np.isfinite(f.data).all():
        raise T.NonFiniteError("tam_forward: non-finite input")
    squeeze = f.ndim == 3
    fb = T.reshape(f, (1, *f.shape)) if squeeze else f
    b, c, h, w = fb.shape
    n = h * w
    T._require(n >= 1, "tam_forward needs at least one pixel")
    if c != proj.channels:
        raise T.ShapeError(
            f"channel mismatch: input has {c}, projections have {proj.channels}"
        )
    flat = T.reshape(fb, (b, c, n))
    mn, mx = T.channel_min(flat), T.channel_max(flat)
    centers = _centers_batched(mn, mx, spec.levels)  # [B, L, C]
    a = _attention_batched(centers, proj)  # [B, L, C]
    lev = _K.discretize_levels(flat.data, mn.data, mx.data, spec.levels)
    out = T.reshape(T.gather_levels(a, lev), fb.shape)
    return T.reshape(out, f.shape) if squeeze else out


def tam_flop_breakdown(c, n, levels):
    """Per-stage flop counts of one threshold-attention pass.

    Conventions (documented, shared with the dense baseline): multiply-add
    counts 2, softmax 5 per entry, comparisons/gathers 1 per element.

    * projections, three ``[L,C] @ [C,C]`` products: ``6 L C^2``
    * ``Q K^T`` and ``S V``:                          ``4 L^2 C``
    * row softmax over ``L^2`` entries:               ``5 L^2``
    * per-pixel work (minmax, discretize, gather):    ``4 C N``
    """
    if min(c, n, levels) < 1:
        raise ValueError("flop counts expect positive arguments")
    return {
        "projections": 6 * levels * c * c,
        "attention": 4 * levels * levels * c,
        "softmax": 5 * levels * levels,
        "pixel_ops": 4 * c * n,
    }


def tam_flops(c, n, levels):
    """Total flop count: ``6LC^2 + 4L^2C + 5L^2 + 4CN``."""
    return sum(tam_flop_breakdown(c, n, levels).values())
