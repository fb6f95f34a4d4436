"""Seedable synthetic segmentation data.

Images are Voronoi partitions of the plane: every cell is a block of
pixels sharing a class color (plus Gaussian noise), which is exactly the
regime threshold attention targets -- segments are pixels with similar
values.  Generation is bit-deterministic per seed; each sample draws from
its own (seed, index) stream, so order of generation cannot matter.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from tanet.fileio import tsr_read, tsr_write

# visually separated anchor colors, all components inside [0, 1]
_PALETTE = (
    (0.90, 0.15, 0.15),
    (0.15, 0.85, 0.20),
    (0.20, 0.30, 0.90),
    (0.90, 0.80, 0.15),
    (0.80, 0.20, 0.85),
    (0.15, 0.85, 0.85),
    (0.55, 0.35, 0.10),
    (0.95, 0.55, 0.20),
)


def default_color_means(classes):
    if classes > len(_PALETTE):
        raise ValueError(
            f"built-in palette covers {len(_PALETTE)} classes; "
            f"pass explicit color means for {classes}"
        )
    return tuple(_PALETTE[:classes])


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    classes: int = 4
    sites: int = 12
    color_means: tuple = None
    noise_sigma: float = 0.05
    train_count: int = 200
    val_count: int = 50

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.sites < self.classes:
            raise ValueError(
                f"sites ({self.sites}) must cover all classes ({self.classes})"
            )
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.height < 1 or self.width < 1:
            raise ValueError("image dims must be positive")
        if self.train_count < 1 or self.val_count < 0:
            raise ValueError("sample counts must be positive")
        if self.color_means is None:
            object.__setattr__(self, "color_means", default_color_means(self.classes))
        colors = tuple(tuple(float(v) for v in c) for c in self.color_means)
        object.__setattr__(self, "color_means", colors)
        if len(colors) != self.classes:
            raise ValueError(f"expected {self.classes} color means, got {len(colors)}")
        if any(len(c) != 3 or min(c) < 0 or max(c) > 1 for c in colors):
            raise ValueError("color means must be RGB triples in [0, 1]")
        if len(set(colors)) != len(colors):
            raise ValueError("color means must be pairwise distinct")


def _render_sample(cfg, index):
    rng = np.random.default_rng([cfg.seed, index])
    h, w, r, k = cfg.height, cfg.width, cfg.sites, cfg.classes
    sy = rng.uniform(0.0, h, r)
    sx = rng.uniform(0.0, w, r)
    # first K sites carry distinct classes so every class appears
    site_class = np.concatenate(
        [np.arange(k, dtype=np.int64), rng.integers(0, k, r - k, dtype=np.int64)]
    )
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    d2 = (yy[None] - sy[:, None, None]) ** 2 + (xx[None] - sx[:, None, None]) ** 2
    nearest = np.argmin(d2, axis=0)  # ties resolve to the lower site index
    label = site_class[nearest]
    colors = np.asarray(cfg.color_means, dtype=np.float64)
    image = colors[label].transpose(2, 0, 1)
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return image.astype(np.float32), label.astype(np.int64)


def sample_ids(cfg):
    train = list(range(cfg.train_count))
    val = list(range(cfg.train_count, cfg.train_count + cfg.val_count))
    return {"train": train, "val": val}


def gen_dataset(cfg, root):
    """Write images, labels, and the manifest under ``root``; returns the path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    splits = sample_ids(cfg)
    for idx in splits["train"] + splits["val"]:
        image, label = _render_sample(cfg, idx)
        tsr_write(root / "images" / f"{idx:04d}.tsr", image)
        tsr_write(root / "labels" / f"{idx:04d}.tsr", label)
    manifest = {"seed": cfg.seed, "config": asdict(cfg), "splits": splits}
    (root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return root


def load_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_sample(root, idx):
    root = Path(root)
    image = tsr_read(root / "images" / f"{idx:04d}.tsr")
    label = tsr_read(root / "labels" / f"{idx:04d}.tsr")
    return image, label


def load_split(root, split):
    """All (image, label) pairs of a split as two stacked arrays."""
    manifest = load_manifest(root)
    if split not in manifest["splits"]:
        raise ValueError(f"unknown split {split!r}")
    ids = manifest["splits"][split]
    images, labels = [], []
    for idx in ids:
        image, label = load_sample(root, idx)
        images.append(image)
        labels.append(label)
    return np.stack(images), np.stack(labels)
