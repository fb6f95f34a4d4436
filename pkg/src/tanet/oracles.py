"""Independent references the optimized paths are validated against.

``tam_naive`` restates the threshold-attention pipeline with scalar loops
and the explicit one-hot position matrix; ``dense_sa`` is the quadratic
all-pairs attention baseline; the flop formulas quantify both; and
``grad_check`` compares analytic gradients with central finite differences.

None of these share kernel code with the optimized modules -- only the
tensor container.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tanet import tensor as T
from tanet.tam import tam_flop_breakdown

NAIVE_MAX_CHANNELS = 16
NAIVE_MAX_PIXELS = 1024
NAIVE_MAX_LEVELS = 32

DENSE_SA_MAX_PIXELS = 8192


def tam_naive(f, spec, proj):
    """Scalar-loop threshold attention with the explicit one-hot recovery.

    Capped to small inputs (C <= 16, N <= 1024, L <= 32); intended purely
    as a reference for agreement tests.
    """
    T._require(f.ndim == 3, "tam_naive expects [C,H,W]")
    c, h, w = f.shape
    n = h * w
    levels = spec.levels
    if c > NAIVE_MAX_CHANNELS or n > NAIVE_MAX_PIXELS or levels > NAIVE_MAX_LEVELS:
        raise ValueError(
            f"tam_naive capped at C<={NAIVE_MAX_CHANNELS}, N<={NAIVE_MAX_PIXELS}, "
            f"L<={NAIVE_MAX_LEVELS}; got C={c}, N={n}, L={levels}"
        )
    if c != proj.channels:
        raise T.ShapeError("projection/channel mismatch")

    x = [[float(v) for v in f.data[ci].reshape(-1)] for ci in range(c)]
    wq = [[float(v) for v in row] for row in proj.wq.value.data]
    wk = [[float(v) for v in row] for row in proj.wk.value.data]
    wv = [[float(v) for v in row] for row in proj.wv.value.data]

    mins = [min(row) for row in x]
    maxs = [max(row) for row in x]

    # bin centers, one-based level index as stated: (max-min)/(2L)*(2l-1)+min
    centers = [
        [(maxs[ci] - mins[ci]) / (2.0 * levels) * (2.0 * l - 1.0) + mins[ci]
         for ci in range(c)]
        for l in range(1, levels + 1)
    ]

    def project(weights):
        return [
            [sum(centers[l][k] * weights[k][cc] for k in range(c)) for cc in range(c)]
            for l in range(levels)
        ]

    q, k, v = project(wq), project(wk), project(wv)

    logits = [
        [sum(q[i][cc] * k[j][cc] for cc in range(c)) for j in range(levels)]
        for i in range(levels)
    ]
    s = []
    for row in logits:
        m = max(row)
        e = [math.exp(val - m) for val in row]
        z = sum(e)
        s.append([val / z for val in e])
    a = [
        [sum(s[i][m] * v[m][cc] for m in range(levels)) for cc in range(c)]
        for i in range(levels)
    ]

    # integer level of every pixel, then the explicit one-hot product
    lev = []
    for ci in range(c):
        rng = maxs[ci] - mins[ci]
        row = []
        for ni in range(n):
            if rng > 0:
                idx = int(math.floor((x[ci][ni] - mins[ci]) / rng * levels))
                idx = min(max(idx, 0), levels - 1)
            else:
                idx = 0
            row.append(idx)
        lev.append(row)

    a_t = [[a[l][ci] for l in range(levels)] for ci in range(c)]  # [C][L]
    out = np.empty((c, n), dtype=np.float64)
    for ci in range(c):
        onehot = [[0.0] * n for _ in range(levels)]
        for ni in range(n):
            onehot[lev[ci][ni]][ni] = 1.0
        for ni in range(n):
            out[ci, ni] = sum(a_t[ci][l] * onehot[l][ni] for l in range(levels))
    return T.Tensor(out.reshape(c, h, w), dtype=f.dtype)


def dense_sa(f, proj, max_pixels=DENSE_SA_MAX_PIXELS):
    """All-pairs self-attention baseline over pixels (quadratic in N).

    ``Q = F^T Wq`` etc. per pixel, ``out = softmax_rows(Q K^T) V`` reshaped
    back; no residual.  Refuses to allocate an N x N matrix past the cap.
    """
    T._require(f.ndim == 3, "dense_sa expects [C,H,W]")
    c, h, w = f.shape
    n = h * w
    if n > max_pixels:
        raise ValueError(f"dense_sa capped at N<={max_pixels}, got N={n}")
    if c != proj.channels:
        raise T.ShapeError("projection/channel mismatch")
    x = np.ascontiguousarray(f.data.reshape(c, n).T)
    q = x @ proj.wq.value.data
    k = x @ proj.wk.value.data
    v = x @ proj.wv.value.data
    logits = q @ k.T
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    out = (logits @ v).T.reshape(c, h, w)
    return T.Tensor(out, dtype=f.dtype)


def sa_flop_breakdown(c, n):
    """Stage flop counts of dense self-attention (same conventions as the
    threshold-attention count): projections 6NC^2, QK^T and SV 4N^2C,
    softmax 5N^2."""
    if min(c, n) < 1:
        raise ValueError("flop counts expect positive arguments")
    return {
        "projections": 6 * n * c * c,
        "attention": 4 * n * n * c,
        "softmax": 5 * n * n,
    }


def sa_flops(c, n):
    """Total flop count: ``6NC^2 + 4N^2C + 5N^2``."""
    return sum(sa_flop_breakdown(c, n).values())


@dataclass
class FlopReport:
    """Closed-form flop accounting for one attention mechanism."""

    mechanism: str
    c: int
    n: int
    breakdown: dict
    l: int = None
    total: int = field(init=False)

    def __post_init__(self):
        self.total = sum(self.breakdown.values())

    def to_json(self):
        return {
            "mechanism": self.mechanism,
            "c": self.c,
            "n": self.n,
            "l": self.l,
            "total": self.total,
            "breakdown": dict(self.breakdown),
        }


def tam_flop_report(c, n, levels):
    return FlopReport(
        mechanism="tam", c=c, n=n, l=levels,
        breakdown=tam_flop_breakdown(c, n, levels),
    )


def sa_flop_report(c, n):
    return FlopReport(mechanism="dense_sa", c=c, n=n, breakdown=sa_flop_breakdown(c, n))


def oracle_agreement(seed=7, cases=200, tolerance=1e-5):
    """Random-case agreement of the optimized and naive threshold attention.

    Draws ``cases`` inputs with C <= 8, H/W <= 16, L <= 8 (float64, the
    oracle's precision) and compares outputs.  Returns
    ``(passed, total, worst_abs_diff)``.
    """
    from tanet.tam import ProjectionParams, ThresholdSpec, tam_forward

    rng = np.random.default_rng(seed)
    passed = 0
    worst = 0.0
    for _ in range(cases):
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        levels = int(rng.integers(1, 9))
        f = T.Tensor(rng.standard_normal((c, h, w)), dtype=np.float64)
        proj = ProjectionParams.create(c, rng, dtype=np.float64)
        spec = ThresholdSpec(levels)
        fast = tam_forward(f, spec, proj)
        naive = tam_naive(f, spec, proj)
        diff = float(np.abs(fast.data - naive.data).max())
        worst = max(worst, diff)
        if diff <= tolerance:
            passed += 1
    return passed, cases, worst


def standard_grad_checks(seed=0, step=1e-5):
    """Finite-difference checks of every differentiable surface (float64).

    Returns {target name: max relative error} for the threshold-attention
    projections, the AFEM and TAPP blocks, and the mined total loss with
    a frozen pixel mask.
    """
    from tanet.blocks import Afem, AfemConfig, Tapp, TappConfig
    from tanet.losses import LossConfig, ohem_select, total_loss
    from tanet.tam import ProjectionParams, ThresholdSpec, tam_forward

    rng = np.random.default_rng(seed)
    errors = {}

    f = T.Tensor(rng.standard_normal((4, 4, 4)), dtype=np.float64)
    proj = ProjectionParams.create(4, rng, dtype=np.float64)
    spec = ThresholdSpec(5)
    errors["tam_projections"] = grad_check(
        lambda x: T.sum_all(tam_forward(x, spec, proj)),
        proj.parameters(), f, step=step,
    )

    afem = Afem(AfemConfig(channels=8, levels=5, reduction=4), rng, dtype=np.float64)
    xa = T.Tensor(rng.standard_normal((2, 8, 4, 4)), dtype=np.float64)
    errors["afem"] = grad_check(
        lambda x: T.sum_all(afem(x)), afem.parameters(), xa, step=step
    )

    tapp = Tapp(
        TappConfig(in_channels=4, mid_channels=4, out_channels=4, levels=4),
        rng, dtype=np.float64,
    )
    xt = T.Tensor(rng.standard_normal((2, 4, 6, 6)), dtype=np.float64)
    errors["tapp"] = grad_check(
        lambda x: T.sum_all(tapp(x)), tapp.parameters(), xt, step=step
    )

    k, n = 3, 12
    main = T.Parameter(rng.standard_normal((k, n)), dtype=np.float64, name="main")
    aux = T.Parameter(rng.standard_normal((k, n)), dtype=np.float64, name="aux")
    labels = rng.integers(0, k, n)
    cfg = LossConfig(aux_weight=0.5, theta=0.65, min_kept=4)
    frozen = ohem_select(main.value, labels, cfg)
    errors["total_loss"] = grad_check(
        lambda: total_loss(main.value, aux.value, labels, cfg, ohem_mask=frozen),
        [main, aux], step=step,
    )
    return errors


def grad_check(function, params, x=None, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``function`` maps the (optional) input tensor to a scalar loss built
    from the given parameters.  Everything must be float64; the relative
    error denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    params = list(params)
    for p in params:
        if p.value.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
    if x is not None and x.dtype != np.float64:
        raise ValueError("grad_check requires a float64 input")

    def evaluate():
        out = function(x) if x is not None else function()
        if not isinstance(out, T.Tensor) or out.data.size != 1:
            raise T.ShapeError("grad_check objective must be scalar")
        return out

    for p in params:
        p.zero_grad()
    T.backward(evaluate())
    analytic = [p.gradient.copy() for p in params]

    worst = 0.0
    with T.no_grad():
        for p, ga in zip(params, analytic):
            flat = p.value.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                hi = evaluate().item()
                flat[i] = keep - step
                lo = evaluate().item()
                flat[i] = keep
                numeric = (hi - lo) / (2.0 * step)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
