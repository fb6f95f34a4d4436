"""Composite attention blocks and the toy segmentation network.

* AFEM: residual block -- channel attention gates a cosine-prefiltered
  threshold-attention branch, added back onto the input.
* TAPP: pyramid block -- three separable dilated branches (K = 4, 6, 8,
  K doubling as the dilation rate), a global-average-pooling branch, and
  a threshold-attention branch, fused by a 1x1 conv + norm + ReLU.
* ToyNet: small 3-stage backbone (stride 4), AFEM on shallow features,
  TAPP on deep features, fused and upsampled to per-pixel class logits,
  plus an auxiliary head on the last backbone stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tanet import tensor as T
from tanet.nn import BatchNorm2d, DepthwiseConv2d, Module, PointwiseConv, he_normal
from tanet.tam import ProjectionParams, ThresholdSpec, tam_forward

_NORM_FLOOR = 1e-12
_DILATED_KERNELS = (4, 6, 8)


@dataclass(frozen=True)
class AfemConfig:
    channels: int
    levels: int = 150
    reduction: int = 4

    def __post_init__(self):
        if self.channels % self.reduction != 0:
            raise ValueError(
                f"channels ({self.channels}) must divide by reduction "
                f"({self.reduction})"
            )


@dataclass(frozen=True)
class TappConfig:
    in_channels: int
    mid_channels: int = 64
    out_channels: int = 64
    kernel_sizes: tuple = _DILATED_KERNELS
    levels: int = 200

    def __post_init__(self):
        bad = [k for k in self.kernel_sizes if k not in _DILATED_KERNELS]
        if bad:
            raise ValueError(f"kernel sizes {bad} outside the supported {_DILATED_KERNELS}")

    @property
    def branch_count(self):
        return len(self.kernel_sizes) + 2  # dilated branches + GAP + TAM

    @property
    def fusion_in_channels(self):
        return self.branch_count * self.mid_channels


def cos_prefilter(f):
    """Reweight each pixel by its cosine similarity to the spatial-mean vector.

    ``s[n] = <f_n, g> / (|f_n| |g|)`` with ``g = gap(f)``; pixels where either
    norm falls below 1e-12 get ``s = 0``.  Output is ``f`` scaled per pixel.
    """
    T._require(f.ndim in (3, 4), "cos_prefilter expects [C,H,W] or [B,C,H,W]")
    squeeze = f.ndim == 3
    fb = T.reshape(f, (1, *f.shape)) if squeeze else f
    _, c, h, w = fb.shape
    g = T.gap(fb)  # [B, C]
    dots = T.channel_sum(T.mul(fb, T.bcast_bc(g, h, w)))  # [B, H, W]
    fnorm = T.sqrt(T.channel_sum(T.mul(fb, fb)))
    gnorm = T.sqrt(T.sum_last(T.mul(g, g)))  # [B]
    denom = T.mul(fnorm, T.bcast_b(gnorm, h, w))
    mask = (fnorm.data >= _NORM_FLOOR) & (gnorm.data[:, None, None] >= _NORM_FLOOR)
    sim = T.masked_div(dots, denom, mask)
    out = T.mul(fb, T.bcast_bhw(sim, c))
    return T.reshape(out, f.shape) if squeeze else out


def channel_attention(f, w1, w2):
    """Squeeze-and-excite gate: ``sigmoid(relu(gap(f) @ w1) @ w2)`` in (0, 1).

    ``f`` is ``[C,H,W]`` (returns ``[C]``) or ``[B,C,H,W]`` (returns ``[B,C]``);
    ``w1`` is ``[C, C/r]`` and ``w2`` is ``[C/r, C]``.
    """
    T._require(f.ndim in (3, 4), "channel_attention expects [C,H,W] or [B,C,H,W]")
    c = f.shape[-3]
    if w1.shape[0] != c or w2.shape[1] != c or w1.shape[1] != w2.shape[0]:
        raise T.ShapeError(
            f"channel_attention: weights {w1.shape} x {w2.shape} do not reduce "
            f"and restore {c} channels"
        )
    squeeze = f.ndim == 3
    fb = T.reshape(f, (1, *f.shape)) if squeeze else f
    g = T.gap(fb)
    w = T.sigmoid(T.matmul(T.relu(T.matmul(g, w1)), w2))
    return T.reshape(w, (c,)) if squeeze else w


class Afem(Module):
    """Attentional feature enhancement: ``f + gate (x) tam(cos_prefilter(f))``."""

    def __init__(self, cfg: AfemConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        c, r = cfg.channels, cfg.reduction
        self.spec = ThresholdSpec(cfg.levels)
        self.proj = ProjectionParams.create(c, rng, dtype=dtype)
        self.gate_w1 = T.Parameter(he_normal(rng, (c, c // r), c), dtype=dtype)
        self.gate_w2 = T.Parameter(he_normal(rng, (c // r, c), c // r), dtype=dtype)

    def forward(self, f):
        T._require(f.ndim in (3, 4), "Afem expects [C,H,W] or [B,C,H,W]")
        if f.shape[-3] != self.cfg.channels:
            raise T.ShapeError(
                f"Afem built for {self.cfg.channels} channels, got {f.shape[-3]}"
            )
        squeeze = f.ndim == 3
        fb = T.reshape(f, (1, *f.shape)) if squeeze else f
        _, _, h, w = fb.shape
        gate = channel_attention(fb, self.gate_w1.value, self.gate_w2.value)
        enhanced = tam_forward(cos_prefilter(fb), self.spec, self.proj)
        out = T.add(fb, T.mul(enhanced, T.bcast_bc(gate, h, w)))
        return T.reshape(out, f.shape) if squeeze else out


class SepDilatedBranch(Module):
    """Depthwise 1xK then Kx1 dilated convs, pointwise mix, norm + ReLU.

    K doubles as the dilation rate, so the pair covers a
    ``((K-1)K + 1)``-wide receptive field per axis.  ``with_norm=False``
    drops the norm + ReLU tail (raw pointwise output).
    """

    def __init__(self, in_channels, mid_channels, k, rng, with_norm=True,
                 dtype=np.float32):
        super().__init__()
        if k not in _DILATED_KERNELS:
            raise ValueError(f"kernel size {k} outside the supported {_DILATED_KERNELS}")
        self.dw_row = DepthwiseConv2d(in_channels, 1, k, dilation=k, rng=rng, dtype=dtype)
        self.dw_col = DepthwiseConv2d(in_channels, k, 1, dilation=k, rng=rng, dtype=dtype)
        self.pw = PointwiseConv(in_channels, mid_channels, rng, dtype=dtype)
        self.norm = BatchNorm2d(mid_channels, dtype=dtype) if with_norm else None

    def forward(self, f):
        x = self.pw(self.dw_col(self.dw_row(f)))
        if self.norm is None:
            return x
        return T.relu(self.norm(x))


class Tapp(Module):
    """Threshold attention pyramid pooling over deep features."""

    def __init__(self, cfg: TappConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        cin, mid = cfg.in_channels, cfg.mid_channels
        self.spec = ThresholdSpec(cfg.levels)
        self.dilated = [
            SepDilatedBranch(cin, mid, k, rng, dtype=dtype) for k in cfg.kernel_sizes
        ]
        self.gap_pw = PointwiseConv(cin, mid, rng, dtype=dtype)
        self.gap_norm = BatchNorm2d(mid, dtype=dtype)
        self.proj = ProjectionParams.create(cin, rng, dtype=dtype)
        self.tam_pw = PointwiseConv(cin, mid, rng, dtype=dtype)
        self.tam_norm = BatchNorm2d(mid, dtype=dtype)
        self.fuse_pw = PointwiseConv(cfg.fusion_in_channels, cfg.out_channels, rng,
                                     dtype=dtype)
        self.fuse_norm = BatchNorm2d(cfg.out_channels, dtype=dtype)

    def forward(self, f):
        T._require(f.ndim == 4, "Tapp expects [B,C,H,W]")
        b, c, h, w = f.shape
        if c != self.cfg.in_channels:
            raise T.ShapeError(
                f"Tapp built for {self.cfg.in_channels} channels, got {c}"
            )
        parts = [branch(f) for branch in self.dilated]
        pooled = T.reshape(T.gap(f), (b, c, 1, 1))
        pooled = T.relu(self.gap_norm(self.gap_pw(pooled)))
        parts.append(T.bcast_bc(T.reshape(pooled, (b, self.cfg.mid_channels)), h, w))
        attended = tam_forward(cos_prefilter(f), self.spec, self.proj)
        parts.append(T.relu(self.tam_norm(self.tam_pw(attended))))
        fused = T.concat(parts, axis=1)
        return T.relu(self.fuse_norm(self.fuse_pw(fused)))


@dataclass(frozen=True)
class ToyNetConfig:
    """Topology of the toy segmentation net (backbone stride 4)."""

    num_classes: int
    image_channels: int = 3
    stage_widths: tuple = (32, 64, 128)
    aux_stage: int = 3
    head_width: int = 64
    afem: AfemConfig = field(default=None)
    tapp: TappConfig = field(default=None)

    def __post_init__(self):
        if len(self.stage_widths) != 3:
            raise ValueError("backbone has exactly three stages")
        if not (1 <= self.aux_stage <= len(self.stage_widths)):
            raise ValueError(f"aux stage {self.aux_stage} not in the backbone")
        shallow = self.stage_widths[0] + self.stage_widths[1]
        if self.afem is None:
            object.__setattr__(self, "afem", AfemConfig(channels=shallow))
        if self.tapp is None:
            object.__setattr__(self, "tapp", TappConfig(in_channels=self.stage_widths[2]))
        if self.afem.channels != shallow:
            raise ValueError(
                f"AFEM channels {self.afem.channels} != shallow concat {shallow}"
            )
        if self.tapp.in_channels != self.stage_widths[2]:
            raise ValueError(
                f"TAPP input {self.tapp.in_channels} != deep width "
                f"{self.stage_widths[2]}"
            )

    @classmethod
    def standard(cls, num_classes, afem_levels=150, tapp_levels=200):
        widths = (32, 64, 128)
        return cls(
            num_classes=num_classes,
            stage_widths=widths,
            afem=AfemConfig(channels=widths[0] + widths[1], levels=afem_levels),
            tapp=TappConfig(in_channels=widths[2], levels=tapp_levels),
        )


class _Stage(Module):
    def __init__(self, in_channels, out_channels, rng, dtype):
        super().__init__()
        self.dw = DepthwiseConv2d(in_channels, 3, 3, dilation=1, rng=rng, dtype=dtype)
        self.pw = PointwiseConv(in_channels, out_channels, rng, dtype=dtype)
        self.norm = BatchNorm2d(out_channels, dtype=dtype)

    def forward(self, x):
        return T.relu(self.norm(self.pw(self.dw(x))))


class ToyNet(Module):
    """Fig-style toy topology: backbone -> AFEM (shallow) + TAPP (deep) ->
    fuse -> x4 bilinear logits; auxiliary 1x1 head on the last stage.

    ``ablated=True`` swaps AFEM and TAPP for channel-matched 1x1 convs,
    keeping every other piece identical.
    """

    STRIDE = 4

    def __init__(self, cfg: ToyNetConfig, rng, dtype=np.float32, ablated=False):
        super().__init__()
        self.cfg = cfg
        self.ablated = ablated
        w0, w1, w2 = cfg.stage_widths
        self.stage1 = _Stage(cfg.image_channels, w0, rng, dtype)
        self.stage2 = _Stage(w0, w1, rng, dtype)
        self.stage3 = _Stage(w1, w2, rng, dtype)
        shallow = w0 + w1
        if ablated:
            self.afem = PointwiseConv(shallow, shallow, rng, dtype=dtype)
            self.tapp = PointwiseConv(w2, cfg.tapp.out_channels, rng, dtype=dtype)
        else:
            self.afem = Afem(cfg.afem, rng, dtype=dtype)
            self.tapp = Tapp(cfg.tapp, rng, dtype=dtype)
        self.fuse_pw = PointwiseConv(shallow + cfg.tapp.out_channels, cfg.head_width,
                                     rng, dtype=dtype)
        self.fuse_norm = BatchNorm2d(cfg.head_width, dtype=dtype)
        self.head = PointwiseConv(cfg.head_width, cfg.num_classes, rng, dtype=dtype)
        self.aux_head = PointwiseConv(
            cfg.stage_widths[cfg.aux_stage - 1], cfg.num_classes, rng, dtype=dtype
        )

    def forward(self, image, return_features=False):
        T._require(image.ndim == 4, "ToyNet expects [B,3,H,W]")
        _, c, h, w = image.shape
        if c != self.cfg.image_channels:
            raise T.ShapeError(f"expected {self.cfg.image_channels}-channel input")
        if h % self.STRIDE or w % self.STRIDE:
            raise T.ShapeError(
                f"spatial dims {h}x{w} must divide by the backbone stride "
                f"{self.STRIDE}"
            )
        s1 = T.avgpool2d(self.stage1(image), 2)  # [B, w0, H/2, W/2]
        s2 = T.avgpool2d(self.stage2(s1), 2)  # [B, w1, H/4, W/4]
        s3 = self.stage3(s2)  # [B, w2, H/4, W/4]
        shallow = T.concat([T.avgpool2d(s1, 2), s2], axis=1)
        enhanced = self.afem(shallow)
        context = self.tapp(s3)
        fused = T.relu(self.fuse_norm(self.fuse_pw(T.concat([enhanced, context], axis=1))))
        logits = T.bilinear_upsample(self.head(fused), self.STRIDE)
        aux_src, aux_factor = ((s1, 2), (s2, 4), (s3, 4))[self.cfg.aux_stage - 1]
        aux_logits = T.bilinear_upsample(self.aux_head(aux_src), aux_factor)
        if return_features:
            features = {
                "afem_in": shallow,
                "afem_out": enhanced,
                "tapp_in": s3,
                "tapp_out": context,
            }
            return logits, aux_logits, features
        return logits, aux_logits
