"""Per-class confidence profiles along rays and interpolations.

These emit the rows behind confidence-versus-perturbation plots: how the
predicted distribution evolves when walking from a clean input toward an
adversarial one, or when blending two inputs.
"""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np

from .net import Network, forward, softmax


def direction_profile(
    net: Network, x: np.ndarray, delta_star: np.ndarray, ts: Sequence[float]
) -> np.ndarray:
    """Confidences at x + t * delta/||delta||_inf for each t.

    Returns rows (t, conf_1, ..., conf_K); each confidence row sums to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    delta_star = np.asarray(delta_star, dtype=np.float64)
    norm = np.abs(delta_star).max()
    if norm == 0.0:
        raise ValueError("direction perturbation must be nonzero")
    unit = delta_star / norm
    ts = np.asarray(list(ts), dtype=np.float64)
    points = x[None, :] + ts[:, None] * unit[None, :]
    probs = softmax(forward(net, points).logits)
    return np.concatenate([ts[:, None], probs], axis=1)


def interpolation_profile(
    net: Network, x1: np.ndarray, x2: np.ndarray, kappas: Sequence[float]
) -> np.ndarray:
    """Confidences at (1 - k) * x1 + k * x2 for each blend factor k."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValueError("endpoints must have the same shape")
    kappas = np.asarray(list(kappas), dtype=np.float64)
    points = (1.0 - kappas)[:, None] * x1[None, :] + kappas[:, None] * x2[None, :]
    probs = softmax(forward(net, points).logits)
    return np.concatenate([kappas[:, None], probs], axis=1)


def write_profile_csv(rows: np.ndarray, path: str, var_name: str = "t"):
    num_classes = rows.shape[1] - 1
    header = [var_name] + [f"conf_{k}" for k in range(num_classes)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") for v in row])
