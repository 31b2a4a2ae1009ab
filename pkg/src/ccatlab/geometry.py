"""Lp threat-model geometry: norms, ball and box projections, gradient
normalizations, and perturbation initialization for p in {inf, 2, 1, 0}.

All operations work on the last axis, so a (B, d) array is treated as B
independent vectors.  Everything here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SUPPORTED_P = (np.inf, 2.0, 1.0, 0.0)

# Fraction of coordinates kept when normalizing a gradient for L1 steps.
L1_TOPK_FRACTION = 0.01

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ThreatModel:
    p: float
    epsilon: float
    box_low: float = 0.0
    box_high: float = 1.0

    def __post_init__(self):
        if self.p not in SUPPORTED_P:
            raise ValueError(f"p must be one of inf, 2, 1, 0; got {self.p}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.p == 0 and self.epsilon != int(self.epsilon):
            raise ValueError("L0 budget must be an integer pixel count")
        if self.box_low >= self.box_high:
            raise ValueError("box_low must be below box_high")


def lp_norm(v: np.ndarray, p: float) -> float | np.ndarray:
    """Norm along the last axis; p=0 counts exactly-nonzero entries."""
    v = np.asarray(v, dtype=np.float64)
    if p == np.inf:
        out = np.abs(v).max(axis=-1)
    elif p == 2:
        out = np.sqrt((v * v).sum(axis=-1))
    elif p == 1:
        out = np.abs(v).sum(axis=-1)
    elif p == 0:
        out = np.count_nonzero(v, axis=-1).astype(np.float64)
    else:
        raise ValueError(f"unsupported p {p}")
    return float(out) if out.ndim == 0 else out


def _project_l1(delta: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the L1 ball via sort-based thresholding."""
    mags = np.abs(delta)
    over = mags.sum(axis=-1) > radius
    if not np.any(over):
        return delta.copy()
    out = delta.copy()
    rows = np.atleast_2d(out.reshape(-1, delta.shape[-1]))
    over_flat = np.atleast_1d(over).ravel()
    d = delta.shape[-1]
    for i in np.flatnonzero(over_flat):
        u = np.sort(np.abs(rows[i]))[::-1]
        css = np.cumsum(u)
        j = np.arange(1, d + 1)
        rho = np.flatnonzero(u > (css - radius) / j)[-1]
        theta = (css[rho] - radius) / (rho + 1)
        rows[i] = np.sign(rows[i]) * np.maximum(np.abs(rows[i]) - theta, 0.0)
    return rows.reshape(delta.shape)


def _project_l0(delta: np.ndarray, budget: int) -> np.ndarray:
    """Keep the `budget` largest-magnitude entries; ties go to lower index."""
    out = np.zeros_like(delta)
    rows_in = delta.reshape(-1, delta.shape[-1])
    rows_out = out.reshape(-1, delta.shape[-1])
    for i in range(rows_in.shape[0]):
        row = rows_in[i]
        if np.count_nonzero(row) <= budget:
            rows_out[i] = row
            continue
        keep = np.argsort(-np.abs(row), kind="stable")[:budget]
        rows_out[i, keep] = row[keep]
    return out


def project_ball(delta: np.ndarray, tm: ThreatModel) -> np.ndarray:
    """Project onto the Lp ball of radius tm.epsilon.

    Euclidean projection for p in {inf, 2, 1}; for p=0 the epsilon
    largest-magnitude entries are kept.  Feasible inputs pass through
    unchanged, so the operation is idempotent.
    """
    delta = np.asarray(delta, dtype=np.float64)
    eps = tm.epsilon
    if tm.p == np.inf:
        return np.clip(delta, -eps, eps)
    if tm.p == 2:
        norms = np.sqrt((delta * delta).sum(axis=-1, keepdims=True))
        scale = np.where(norms > eps, eps / np.maximum(norms, 1e-300), 1.0)
        return delta * scale
    if tm.p == 1:
        return _project_l1(delta, eps)
    return _project_l0(delta, int(eps))


def project_box(
    x: np.ndarray, delta: np.ndarray, low: float = 0.0, high: float = 1.0
) -> np.ndarray:
    """Smallest per-coordinate change to delta putting x + delta in the box.

    Coordinates that are already feasible pass through bit-exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    total = x + delta
    clipped = np.clip(total, low, high)
    return np.where(total == clipped, delta, clipped - x)


def project_feasible(
    x: np.ndarray,
    delta: np.ndarray,
    tm: ThreatModel,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Ball projection followed by box projection, the order the attack uses.

    With a mask, the ball constraint is dropped: masked coordinates are
    box-constrained only and unmasked ones are forced to zero.
    """
    if mask is not None:
        delta = np.where(mask, delta, 0.0)
        return project_box(x, delta, tm.box_low, tm.box_high)
    delta = project_ball(delta, tm)
    return project_box(x, delta, tm.box_low, tm.box_high)


class GradientDirection(NamedTuple):
    vector: np.ndarray
    stalled: bool | np.ndarray  # per row for batched input


def normalize_gradient(g: np.ndarray, p: float) -> GradientDirection:
    """Step direction for gradient ascent under an Lp budget.

    p=inf: elementwise sign.  p=2: divide by the L2 norm.  p=1: keep the
    top max(1, ceil(0.01*d)) entries by magnitude (ties to lower index),
    then divide by the resulting L1 norm.  p=0: divide by the L1 norm.
    All-zero rows come back as zeros with the stall flag set.
    """
    g = np.asarray(g, dtype=np.float64)
    squeeze = g.ndim == 1
    rows = np.atleast_2d(g)
    stalled = ~np.any(rows != 0.0, axis=-1)
    if p == np.inf:
        out = np.sign(rows)
    elif p == 2:
        norms = np.sqrt((rows * rows).sum(axis=-1, keepdims=True))
        out = rows / np.where(norms > 0, norms, 1.0)
    elif p == 1:
        d = rows.shape[-1]
        k = max(1, math.ceil(L1_TOPK_FRACTION * d))
        out = np.zeros_like(rows)
        for i in range(rows.shape[0]):
            if stalled[i]:
                continue
            keep = np.argsort(-np.abs(rows[i]), kind="stable")[:k]
            out[i, keep] = rows[i, keep]
            out[i] /= np.abs(out[i]).sum()
    elif p == 0:
        norms = np.abs(rows).sum(axis=-1, keepdims=True)
        out = rows / np.where(norms > 0, norms, 1.0)
    else:
        raise ValueError(f"unsupported p {p}")
    if squeeze:
        return GradientDirection(out[0], bool(stalled[0]))
    return GradientDirection(out, stalled)


def init_perturbation(
    tm: ThreatModel,
    x: np.ndarray,
    mode: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Starting perturbation for one example.

    mode="zero" gives all zeros.  mode="random" draws u * eps * d / ||d||_p
    with d standard normal and u uniform on [0, 1], so the norm is uniform
    over [0, eps].  For p=0, pixels are replaced independently with
    probability (2/3 * eps) / d by uniform values in [0, 1].  The result is
    projected feasible for x.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if mode == "zero":
        return np.zeros_like(x)
    if mode != "random":
        raise ValueError(f"unknown init mode {mode!r}")
    if tm.p == 0:
        replace = rng.random(d) < (2.0 / 3.0 * tm.epsilon) / d
        values = rng.uniform(tm.box_low, tm.box_high, size=d)
        delta = np.where(replace, values - x, 0.0)
    else:
        direction = rng.standard_normal(d)
        norm = lp_norm(direction, tm.p)
        if norm == 0.0:
            return np.zeros_like(x)
        u = rng.uniform()
        delta = u * tm.epsilon * direction / norm
    return project_feasible(x, delta, tm)


def is_feasible(
    x: np.ndarray,
    delta: np.ndarray,
    tm: ThreatModel,
    mask: np.ndarray | None = None,
    tol: float = FEASIBILITY_TOL,
) -> bool:
    """Check ball, box, and mask constraints for x + delta."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    total = x + delta
    if total.min() < tm.box_low - tol or total.max() > tm.box_high + tol:
        return False
    if mask is not None:
        return bool(np.all(np.asarray(delta)[..., ~mask] == 0.0))
    return bool(np.all(lp_norm(delta, tm.p) <= tm.epsilon + tol))


def matched_volume_l2_radius(eps_inf: float, dim: int) -> float:
    """L2 radius whose ball has the same volume as the L-inf ball eps_inf."""
    return 2.0 * eps_inf * math.exp(math.lgamma(dim / 2.0 + 1.0) / dim) / math.sqrt(math.pi)
