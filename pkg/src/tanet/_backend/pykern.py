"""NumPy implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable
(or when ``TANET_KERNELS=python`` is set).  Both backends expose the same
functions with the same shapes and conventions:

* feature maps are ``(B, C, H, W)``, flattened maps ``(B, C, N)``
* level maps are int32 in ``[0, L)``
* depthwise convolution uses zero padding with the anchor tap at index
  ``k // 2`` on each axis; callers pass the leading pad explicitly.
"""

import numpy as np

NAME = "python"


def channel_min_arg(x):
    """Per-(sample, channel) minimum of ``x[B,C,N]`` and its first position."""
    arg = np.argmin(x, axis=2)
    val = np.take_along_axis(x, arg[:, :, None], axis=2)[:, :, 0]
    return np.ascontiguousarray(val), arg.astype(np.int64)


def channel_max_arg(x):
    """Per-(sample, channel) maximum of ``x[B,C,N]`` and its first position."""
    arg = np.argmax(x, axis=2)
    val = np.take_along_axis(x, arg[:, :, None], axis=2)[:, :, 0]
    return np.ascontiguousarray(val), arg.astype(np.int64)


def discretize_levels(x, mn, mx, levels):
    """Quantize ``x[B,C,N]`` into ``levels`` bins per (sample, channel).

    Index is ``clamp(floor((x - mn)/(mx - mn) * levels), 0, levels - 1)``;
    constant channels (``mx == mn``) map to level 0.
    """
    rng = (mx - mn)[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (x - mn[:, :, None]) / rng
    idx = np.floor(t * levels)
    idx = np.where(rng > 0, idx, 0.0)
    np.clip(idx, 0, levels - 1, out=idx)
    return idx.astype(np.int32)


def gather_levels(a, lev):
    """Pick ``a[b, lev[b,c,n], c]`` for every pixel: ``(B,L,C) -> (B,C,N)``."""
    at = np.ascontiguousarray(np.swapaxes(a, 1, 2))  # (B, C, L)
    return np.take_along_axis(at, lev.astype(np.int64), axis=2)


def scatter_levels_add(g, lev, levels):
    """Adjoint of :func:`gather_levels`: sum ``g[B,C,N]`` into ``(B,L,C)``."""
    b, c, _ = g.shape
    out = np.zeros((b, c, levels), dtype=g.dtype)
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, :, None]
    np.add.at(out, (bi, ci, lev.astype(np.int64)), g)
    return np.ascontiguousarray(np.swapaxes(out, 1, 2))


def _shift_accumulate(x, w, dilation, ph0, pw0, h_out, w_out):
    # out[y, x] = sum_ij w[i,j] * x_padded[y + i*d, x + j*d]
    b, c, h, wd = x.shape
    _, kh, kw = w.shape
    d = dilation
    ph1 = (kh - 1) * d - ph0
    pw1 = (kw - 1) * d - pw0
    xp = np.zeros((b, c, h + ph0 + ph1, wd + pw0 + pw1), dtype=x.dtype)
    xp[:, :, ph0 : ph0 + h, pw0 : pw0 + wd] = x
    out = np.zeros((b, c, h_out, w_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += w[None, :, i, j, None, None] * xp[
                :, :, i * d : i * d + h_out, j * d : j * d + w_out
            ]
    return out


def dwconv2d(x, w, dilation, ph0, pw0):
    """Depthwise 2-D correlation of ``x[B,C,H,W]`` with ``w[C,kh,kw]``.

    Zero 'same' padding with ``ph0``/``pw0`` zeros on the leading side.
    """
    return _shift_accumulate(x, w, dilation, ph0, pw0, x.shape[2], x.shape[3])


def dwconv2d_grad_input(gy, w, dilation, ph0, pw0):
    """Gradient of :func:`dwconv2d` w.r.t. its input."""
    _, kh, kw = w.shape
    d = dilation
    # input offsets negate: flipped kernel, mirrored leading pad
    wf = np.ascontiguousarray(w[:, ::-1, ::-1])
    return _shift_accumulate(
        gy, wf, d, (kh - 1) * d - ph0, (kw - 1) * d - pw0, gy.shape[2], gy.shape[3]
    )


def dwconv2d_grad_weight(x, gy, dilation, kh, kw, ph0, pw0):
    """Gradient of :func:`dwconv2d` w.r.t. the kernel."""
    b, c, h, wd = x.shape
    d = dilation
    ph1 = (kh - 1) * d - ph0
    pw1 = (kw - 1) * d - pw0
    xp = np.zeros((b, c, h + ph0 + ph1, wd + pw0 + pw1), dtype=np.float64)
    xp[:, :, ph0 : ph0 + h, pw0 : pw0 + wd] = x
    gw = np.empty((c, kh, kw), dtype=np.float64)
    gy64 = gy.astype(np.float64, copy=False)
    for i in range(kh):
        for j in range(kw):
            gw[:, i, j] = np.sum(
                xp[:, :, i * d : i * d + h, j * d : j * d + wd] * gy64,
                axis=(0, 2, 3),
            )
    return gw.astype(x.dtype)
