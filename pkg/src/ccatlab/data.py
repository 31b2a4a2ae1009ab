"""Datasets: IDX image/label files and synthetic toy problems."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d), entries in [0, 1]
    labels: np.ndarray  # (n,), class indices
    name: str = ""
    image_shape: tuple[int, ...] | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be (n, d)")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels length must match inputs")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise ValueError(f"truncated IDX file: expected {count} bytes of {what}, got {len(data)}")
    return data


def _read_be32(f, what: str) -> int:
    return struct.unpack(">i", _read_exact(f, 4, what))[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse big-endian IDX image/label files; pixels are scaled by 1/255."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IMAGE_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {images_path}")
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "row count")
        cols = _read_be32(f, "column count")
        raw = _read_exact(f, count * rows * cols, "pixels")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != LABEL_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {labels_path}")
        label_count = _read_be32(f, "label count")
        labels = np.frombuffer(_read_exact(f, label_count, "labels"), dtype=np.uint8)
    if label_count != count:
        raise ValueError(f"image count {count} does not match label count {label_count}")
    return Dataset(
        images.astype(np.float64) / 255.0,
        labels.astype(int),
        name="idx",
        image_shape=(rows, cols, 1),
    )


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str):
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (n, rows, cols)")
    if labels.shape != (images.shape[0],):
        raise ValueError("labels length must match images")
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, n))
        f.write(labels.tobytes())


def make_two_gaussians(n: int, separation: float, rng: np.random.Generator) -> Dataset:
    """Two unit-variance Gaussian blobs, min-max mapped into the unit box.

    Class means sit `separation` standard deviations apart along the
    diagonal before scaling, so large separations stay linearly separable.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    n0 = n // 2
    half = separation / 2.0
    pts = np.concatenate(
        [
            rng.standard_normal((n0, 2)) - half,
            rng.standard_normal((n - n0, 2)) + half,
        ]
    )
    labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)])
    perm = rng.permutation(n)
    pts, labels = pts[perm], labels[perm]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pts = (pts - lo) / np.where(hi > lo, hi - lo, 1.0)
    return Dataset(pts, labels, name="two_gaussians")


def make_two_point(p0: float, epsilon: float, n: int = 10) -> Dataset:
    """The two-atom problem: x=0 carries label 1 and x=epsilon label 0.

    Class weights (p0, 1-p0) are realized as multiplicities round(p0 * n),
    clamped so both atoms appear at least once.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must be in (0, 1] to stay inside the box")
    n0 = int(np.floor(p0 * n + 0.5))
    n0 = min(max(n0, 1), n - 1)
    inputs = np.concatenate([np.zeros((n0, 1)), np.full((n - n0, 1), epsilon)])
    labels = np.concatenate([np.ones(n0, dtype=int), np.zeros(n - n0, dtype=int)])
    return Dataset(inputs, labels, name="two_point")


def ordered_split(ds: Dataset, sizes: dict[str, int]) -> dict[str, Dataset]:
    """Disjoint splits taken in order; raises if the sizes overrun."""
    total = sum(sizes.values())
    if total > len(ds):
        raise ValueError(f"splits need {total} examples, dataset has {len(ds)}")
    out = {}
    start = 0
    for name, size in sizes.items():
        out[name] = Dataset(
            ds.inputs[start : start + size],
            ds.labels[start : start + size],
            name=f"{ds.name}/{name}",
            image_shape=ds.image_shape,
        )
        start += size
    return out
