"""Wall-clock scaling harness and kernel-backend comparison.

Timing discipline: monotonic clock, median over >= 5 repetitions after
>= 2 warmup runs, BLAS pools pinned to one thread inside timed regions,
finite checks suspended.  Reported numbers are always single-threaded.
"""

from __future__ import annotations

import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from tanet import oracles
from tanet import tensor as T
from tanet._backend import load_backend
from tanet.tam import ProjectionParams, ThresholdSpec, tam_flops, tam_forward

CSV_HEADER = "mechanism,n,c,l,median_ns,reps,flops"
BACKEND_CSV_HEADER = "kernel,backend,n,c,median_ns,reps"
DENSE_SA_PIXEL_CAP = oracles.DENSE_SA_MAX_PIXELS

MECHANISMS = ("tam", "dense_sa")


@dataclass
class BenchRecord:
    mechanism: str
    n: int
    c: int
    l: int
    median_ns: int
    reps: int
    flops: int

    def csv_row(self):
        l = "" if self.l is None else str(self.l)
        return f"{self.mechanism},{self.n},{self.c},{l},{self.median_ns},{self.reps},{self.flops}"


def median_ns(fn, reps=5, warmup=2):
    """Median wall time of ``fn()`` in nanoseconds."""
    if reps < 5:
        raise ValueError("need at least 5 repetitions")
    if warmup < 2:
        raise ValueError("need at least 2 warmup runs")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        start = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - start)
    return int(statistics.median(times))


def _near_square(n):
    h = int(np.sqrt(n))
    while n % h:
        h -= 1
    return h, n // h


def bench_scaling(mechanism, n_grid, c, levels=None, reps=5, seed=0):
    """Time one mechanism over a pixel-count grid; returns BenchRecords.

    The dense baseline skips (with a warning on stderr) any N past its
    N x N allocation cap.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; expected {MECHANISMS}")
    n_grid = [int(n) for n in n_grid]
    if n_grid != sorted(n_grid):
        raise ValueError("pixel grid must be sorted ascending")
    if mechanism == "tam" and not levels:
        raise ValueError("the threshold mechanism needs a level count")
    rng = np.random.default_rng(seed)
    proj = ProjectionParams.create(c, rng, dtype=np.float32)
    spec = ThresholdSpec(levels) if mechanism == "tam" else None
    records = []
    with threadpool_limits(limits=1), T.no_grad(), T.finite_checks(False):
        for n in n_grid:
            if mechanism == "dense_sa" and n > DENSE_SA_PIXEL_CAP:
                print(
                    f"warning: dense_sa skipped at n={n} "
                    f"(cap {DENSE_SA_PIXEL_CAP})",
                    file=sys.stderr,
                )
                continue
            h, w = _near_square(n)
            f = T.Tensor(rng.standard_normal((c, h, w)), dtype=np.float32)
            if mechanism == "tam":
                fn = lambda: tam_forward(f, spec, proj)
                flops = tam_flops(c, n, levels)
                l = levels
            else:
                fn = lambda: oracles.dense_sa(f, proj)
                flops = oracles.sa_flops(c, n)
                l = None
            records.append(
                BenchRecord(
                    mechanism=mechanism, n=n, c=c, l=l,
                    median_ns=median_ns(fn, reps=reps), reps=reps, flops=flops,
                )
            )
    return records


def records_to_csv(records):
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in records]) + "\n"


def fit_slope(records):
    """Least-squares slope of log(median_ns) against log(N)."""
    records = list(records)
    if len(records) < 4:
        raise ValueError(f"need at least 4 points to fit a slope, got {len(records)}")
    xs = np.log([r.n for r in records])
    ys = np.log([r.median_ns for r in records])
    return float(np.polyfit(xs, ys, 1)[0])


def bench_backends(n_grid=(4096, 16384, 65536), c=64, levels=64, reps=5, seed=0):
    """Compare the compiled and NumPy kernels on the hot loops.

    Rows: depthwise dilated conv (1x4, dilation 4) and the per-pixel
    threshold remap (minmax + discretize + gather).  Returns (rows, csv).
    """
    from tanet._backend import available_backends

    rng = np.random.default_rng(seed)
    rows = []
    with threadpool_limits(limits=1):
        for name in available_backends():
            impl = load_backend(name)
            for n in n_grid:
                h, w = _near_square(n)
                x4 = np.ascontiguousarray(
                    rng.standard_normal((1, c, h, w)).astype(np.float32)
                )
                kern = rng.standard_normal((c, 1, 4)).astype(np.float32)
                t = median_ns(lambda: impl.dwconv2d(x4, kern, 4, 0, 8), reps=reps)
                rows.append(("dwconv2d", name, n, c, t, reps))

                flat = np.ascontiguousarray(x4.reshape(1, c, n))
                a = rng.standard_normal((1, levels, c)).astype(np.float32)

                def remap():
                    mn, _ = impl.channel_min_arg(flat)
                    mx, _ = impl.channel_max_arg(flat)
                    lev = impl.discretize_levels(flat, mn, mx, levels)
                    impl.gather_levels(a, lev)

                t = median_ns(remap, reps=reps)
                rows.append(("tam_remap", name, n, c, t, reps))
    csv = "\n".join(
        [BACKEND_CSV_HEADER] + [",".join(str(v) for v in row) for row in rows]
    ) + "\n"
    return rows, csv
