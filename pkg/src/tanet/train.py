"""Toy training and evaluation for the segmentation net.

Decoupled-weight-decay Adam with the polynomial learning-rate schedule,
mined main loss plus weighted auxiliary loss, per-epoch validation mIoU,
and a TSR-based checkpoint format.  Runs are deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from tanet import tensor as T
from tanet.blocks import AfemConfig, TappConfig, ToyNet, ToyNetConfig
from tanet.fileio import tsr_read, tsr_write
from tanet.losses import ConfusionMatrix, LossConfig, compute_metrics, poly_lr, total_loss
from tanet.synth import load_manifest, load_split


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    base_lr: float = 5e-4
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/step diagnostic."""


class AdamW:
    """Adam with decoupled weight decay (decay applied directly to weights)."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.gradient
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * (update + self.weight_decay * p.data)


def _batches(count, batch_size, order):
    # fixed-size batches; a trailing remainder is dropped unless it is all we have
    if count <= batch_size:
        yield order
        return
    for start in range(0, count - batch_size + 1, batch_size):
        yield order[start : start + batch_size]


def _evaluate_net(net, images, labels, batch_size=8):
    net.eval()
    cm = ConfusionMatrix(net.cfg.num_classes)
    with T.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start : start + batch_size]
            truth = labels[start : start + batch_size]
            logits, _ = net(T.Tensor(chunk))
            pred = np.argmax(logits.data, axis=1)
            cm.update(pred.reshape(-1), truth.reshape(-1))
    return compute_metrics(cm)


def train_toy(data_root, net_cfg, train_cfg, out_dir, ablated=False):
    """Train on the dataset's train split; returns (checkpoint dir, history).

    Writes ``checkpoint/`` (config + weights) and ``training_log.json``
    under ``out_dir``.  History carries per-epoch mean train loss and
    validation mIoU.
    """
    manifest = load_manifest(data_root)
    classes = manifest["config"]["classes"]
    if classes != net_cfg.num_classes:
        raise ValueError(
            f"dataset has {classes} classes, net is built for {net_cfg.num_classes}"
        )
    images, labels = load_split(data_root, "train")
    val_images, val_labels = load_split(data_root, "val")
    rng = np.random.default_rng(train_cfg.seed)
    net = ToyNet(net_cfg, rng, ablated=ablated)
    opt = AdamW(
        net.parameters(),
        lr=train_cfg.base_lr,
        betas=train_cfg.betas,
        eps=train_cfg.eps,
        weight_decay=train_cfg.weight_decay,
    )
    count = images.shape[0]
    steps_per_epoch = max(1, count // train_cfg.batch_size) if count >= train_cfg.batch_size else 1
    max_iter = train_cfg.epochs * steps_per_epoch
    history = []
    iteration = 0
    for epoch in range(train_cfg.epochs):
        net.train()
        order = rng.permutation(count)
        epoch_losses = []
        for batch in _batches(count, train_cfg.batch_size, order):
            x = T.Tensor(images[batch])
            flat_labels = labels[batch].reshape(-1)
            try:
                logits, aux = net(x)
                loss = total_loss(
                    T.flatten_samples(logits),
                    T.flatten_samples(aux),
                    flat_labels,
                    train_cfg.loss,
                )
                value = loss.item()
                if not np.isfinite(value):
                    raise T.NonFiniteError("loss is not finite")
                net.zero_grad()
                T.backward(loss)
            except T.NonFiniteError as err:
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, iteration {iteration}: {err}"
                ) from err
            opt.step(poly_lr(iteration, max_iter, train_cfg.base_lr))
            iteration += 1
            epoch_losses.append(value)
        report = _evaluate_net(net, val_images, val_labels, train_cfg.batch_size)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_miou": report.miou,
                "val_oa": report.oa,
            }
        )
    out_dir = Path(out_dir)
    ckpt = save_checkpoint(net, out_dir / "checkpoint", ablated=ablated)
    log = {
        "train_config": asdict(train_cfg),
        "net_config": _net_cfg_dict(net_cfg),
        "ablated": ablated,
        "history": history,
    }
    (out_dir / "training_log.json").write_text(json.dumps(log, indent=2) + "\n")
    return ckpt, history


def _net_cfg_dict(cfg):
    return {
        "num_classes": cfg.num_classes,
        "image_channels": cfg.image_channels,
        "stage_widths": list(cfg.stage_widths),
        "aux_stage": cfg.aux_stage,
        "head_width": cfg.head_width,
        "afem": asdict(cfg.afem),
        "tapp": asdict(cfg.tapp),
    }


def _net_cfg_from_dict(d):
    afem = AfemConfig(**d["afem"])
    tapp = dict(d["tapp"])
    tapp["kernel_sizes"] = tuple(tapp["kernel_sizes"])
    return ToyNetConfig(
        num_classes=d["num_classes"],
        image_channels=d["image_channels"],
        stage_widths=tuple(d["stage_widths"]),
        aux_stage=d["aux_stage"],
        head_width=d["head_width"],
        afem=afem,
        tapp=TappConfig(**tapp),
    )


def save_checkpoint(net, ckpt_dir, ablated=False):
    ckpt_dir = Path(ckpt_dir)
    weights = ckpt_dir / "weights"
    weights.mkdir(parents=True, exist_ok=True)
    names = []
    for name, param in net.named_parameters():
        tsr_write(weights / f"{name}.tsr", param.data)
        names.append(name)
    buffers = []
    for name, arr in net.named_buffers():
        tsr_write(weights / f"{name}.tsr", arr)
        buffers.append(name)
    meta = {
        "net_config": _net_cfg_dict(net.cfg),
        "ablated": ablated,
        "parameters": names,
        "buffers": buffers,
    }
    (ckpt_dir / "config.json").write_text(json.dumps(meta, indent=2) + "\n")
    return ckpt_dir


def load_checkpoint(ckpt_dir):
    """Rebuild the net (eval mode) from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta = json.loads((ckpt_dir / "config.json").read_text())
    cfg = _net_cfg_from_dict(meta["net_config"])
    net = ToyNet(cfg, np.random.default_rng(0), ablated=meta["ablated"])
    weights = ckpt_dir / "weights"
    params = dict(net.named_parameters())
    if set(params) != set(meta["parameters"]):
        raise ValueError("checkpoint parameter names do not match the architecture")
    for name, param in params.items():
        param.data = tsr_read(weights / f"{name}.tsr")
    buffer_map = dict(net.named_buffers())
    if set(buffer_map) != set(meta["buffers"]):
        raise ValueError("checkpoint buffer names do not match the architecture")
    for name in meta["buffers"]:
        _assign_buffer(net, name, tsr_read(weights / f"{name}.tsr"))
    return net.eval()


def _assign_buffer(net, dotted, arr):
    obj = net
    *path, leaf = dotted.split(".")
    for part in path:
        obj = getattr(obj, part) if not part.isdigit() else _indexed(obj, int(part))
    obj.set_buffer(leaf, arr)


def _indexed(seq, i):
    return seq[i]


def evaluate_model(ckpt_dir, data_root, split="val", batch_size=8):
    """Metrics of a checkpointed net over one dataset split."""
    net = load_checkpoint(ckpt_dir)
    manifest = load_manifest(data_root)
    classes = manifest["config"]["classes"]
    if classes != net.cfg.num_classes:
        raise ValueError(
            f"dataset has {classes} classes, checkpoint was trained for "
            f"{net.cfg.num_classes}"
        )
    images, labels = load_split(data_root, split)
    return _evaluate_net(net, images, labels, batch_size)
