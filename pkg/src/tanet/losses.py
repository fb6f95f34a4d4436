"""Cross-entropy with online hard-example mining, the auxiliary-head
combination, the cumulative confusion matrix, and the derived metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tanet import tensor as T


@dataclass(frozen=True)
class LossConfig:
    """Hard-example mining and auxiliary-loss weights.

    ``min_kept`` is the minimum number of pixels the mining keeps (clamped
    to the pixel count); pixels whose true-class probability falls below
    ``theta`` are always kept.
    """

    aux_weight: float = 0.5
    theta: float = 0.65
    min_kept: int = 10000

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.aux_weight < 0:
            raise ValueError(f"aux weight must be >= 0, got {self.aux_weight}")
        if self.min_kept < 0:
            raise ValueError(f"min kept count must be >= 0, got {self.min_kept}")


def _check_labels(labels, k, n, mask=None):
    labels = np.ascontiguousarray(labels)
    T._require(labels.shape == (n,), f"labels must be [{n}], got {labels.shape}")
    T._require(np.issubdtype(labels.dtype, np.integer), "labels must be integers")
    scored = labels if mask is None else labels[mask]
    if scored.size and (scored.min() < 0 or scored.max() >= k):
        raise ValueError(
            f"labels outside [0, {k}) under the mask "
            f"(range {scored.min()}..{scored.max()})"
        )
    return labels


def _log_softmax_cols(x):
    mx = x.max(axis=0, keepdims=True)
    z = x - mx
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    return z - lse


def ce_loss(logits, labels, mask=None):
    """Mean ``-log softmax(logits)[label]`` over masked pixels.

    ``logits`` is ``[K, N]``; ``labels`` int ``[N]``; ``mask`` bool ``[N]``
    (``None`` scores every pixel).  An empty mask yields exactly 0.
    """
    T._require(logits.ndim == 2, f"ce_loss expects [K, N], got {logits.shape}")
    k, n = logits.shape
    if mask is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.ascontiguousarray(mask, dtype=bool)
        T._require(mask.shape == (n,), f"mask must be [{n}], got {mask.shape}")
    labels = _check_labels(labels, k, n, mask)
    m = int(mask.sum())
    if m == 0:
        return T.constant(np.zeros((), dtype=logits.dtype))
    logp = _log_softmax_cols(logits.data.astype(np.float64))
    picked = logp[labels[mask], np.nonzero(mask)[0]]
    out = np.asarray(-picked.mean()).astype(logits.dtype)

    def vjp(g):
        p = np.exp(logp)
        grad = np.zeros(logits.shape, dtype=np.float64)
        cols = np.nonzero(mask)[0]
        grad[:, cols] = p[:, cols]
        grad[labels[cols], cols] -= 1.0
        grad *= float(g.reshape(())) / m
        return (grad.astype(logits.dtype),)

    return T._node(out, (logits,), vjp, "ce_loss")


def true_class_probs(logits, labels):
    """Softmax probability of the true class per pixel (plain array)."""
    data = logits.data if isinstance(logits, T.Tensor) else np.asarray(logits)
    T._require(data.ndim == 2, "expected [K, N] logits")
    k, n = data.shape
    labels = _check_labels(labels, k, n)
    logp = _log_softmax_cols(data.astype(np.float64))
    return np.exp(logp[labels, np.arange(n)])


def ohem_select(logits, labels, cfg):
    """Pixels kept by hard-example mining (a boolean mask over N).

    Keeps every pixel with true-class probability below ``cfg.theta``,
    topped up with the lowest-probability pixels (ties to the lower index)
    until ``min(cfg.min_kept, N)`` are selected.
    """
    p = true_class_probs(logits, labels)
    n = p.shape[0]
    keep = max(int((p < cfg.theta).sum()), min(cfg.min_kept, n))
    mask = np.zeros(n, dtype=bool)
    if keep:
        order = np.argsort(p, kind="stable")
        mask[order[:keep]] = True
    return mask


def total_loss(main_logits, aux_logits, labels, cfg, ohem_mask=None):
    """Mined main loss plus weighted full-mask auxiliary loss.

    ``ohem_mask`` can be supplied to freeze the mined pixel set (gradient
    checks do this); by default it is recomputed from the main logits.
    """
    T._require(main_logits.shape == aux_logits.shape,
               "main and auxiliary logits must agree in shape")
    if ohem_mask is None:
        ohem_mask = ohem_select(main_logits, labels, cfg)
    main = ce_loss(main_logits, labels, ohem_mask)
    aux = ce_loss(aux_logits, labels, None)
    return T.add(main, T.mul_scalar(aux, cfg.aux_weight))


def poly_lr(iteration, max_iter, base=5e-4):
    """Polynomial decay: ``base * (1 - iteration/max_iter)^0.9``."""
    if not 0 <= iteration <= max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** 0.9


class ConfusionMatrix:
    """Cumulative K x K counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes):
        if num_classes < 1:
            raise ValueError("need at least one class")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred, truth):
        pred = np.ascontiguousarray(pred).reshape(-1)
        truth = np.ascontiguousarray(truth).reshape(-1)
        T._require(pred.shape == truth.shape, "pred/truth length mismatch")
        k = self.num_classes
        for name, arr in (("pred", pred), ("truth", truth)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise ValueError(f"{name} contains classes outside [0, {k})")
        np.add.at(self.counts, (truth, pred), 1)
        return self

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    """Overall accuracy, mean IoU, per-class precision/recall/F1/IoU, mean F1."""

    oa: float
    miou: float
    per_class: list
    mean_f1: float

    def to_json(self):
        return {
            "oa": self.oa,
            "miou": self.miou,
            "per_class": self.per_class,
            "mean_f1": self.mean_f1,
        }


def compute_metrics(cm):
    """Metrics from a cumulative confusion matrix.

    Overall accuracy is trace/total.  Classes absent from both ground truth
    and prediction are excluded from the mIoU and mean-F1 averages; 0/0
    ratios inside a class report as 0.
    """
    if cm.total < 1:
        raise ValueError("empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    fp = cols - tp
    fn = rows - tp
    present = (rows + cols) > 0

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    iou = ratio(tp, tp + fp + fn)
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2 * precision * recall, precision + recall)
    per_class = [
        {
            "class": k,
            "precision": float(precision[k]),
            "recall": float(recall[k]),
            "f1": float(f1[k]),
            "iou": float(iou[k]),
        }
        for k in range(cm.num_classes)
    ]
    return MetricsReport(
        oa=float(tp.sum() / counts.sum()),
        miou=float(iou[present].mean()),
        per_class=per_class,
        mean_f1=float(f1[present].mean()),
    )
