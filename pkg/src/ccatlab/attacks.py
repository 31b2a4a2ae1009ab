"""White-box PGD with momentum and backtracking, black-box random sampling,
distal inputs, border-mask attacks, and per-example worst-case merging.

The PGD loop runs for exactly T update attempts plus a final evaluation,
keeps the best objective seen, blends normalized gradients with momentum,
and only applies a trial step when it improves the objective; otherwise
the per-example learning rate is divided by the backtracking factor.
Attacks on distinct examples use independent random streams derived from
(seed, example id, restart index), so results do not depend on batching.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from . import rng as rngmod
from .geometry import (
    ThreatModel,
    init_perturbation,
    normalize_gradient,
    project_feasible,
)
from .net import Network, backward_from_logit_grad, forward, softmax

LR_FLOOR = 1e-10
# Momentum pushes below this are treated as a full stall.
STALL_TOL = 1e-15

Objective = Literal["ce", "conf", "max"]


@dataclass
class AttackConfig:
    objective: Objective
    tm: ThreatModel
    iterations: int
    lr: float
    momentum: float = 0.9
    lr_factor: float = 1.1
    init: Literal["zero", "random"] = "random"
    restarts: int = 1
    mask: np.ndarray | None = None
    seed: int = 0
    # The momentum buffer normally persists across rejected steps; this
    # switch zeroes it on rejection instead.
    momentum_reset_on_reject: bool = False
    # Accept every trial step (disables backtracking); verification aid.
    always_accept: bool = False
    record_trace: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.lr_factor <= 1.0:
            raise ValueError("lr_factor must be > 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.objective not in ("ce", "conf", "max"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class AttackOutcome:
    delta: np.ndarray
    objective_value: float
    adv_confidence: float
    adv_label: int
    success: bool
    iterations_used: int
    restarts_used: int
    stalled: bool = False
    rejected_steps: int = 0
    objective_trace: np.ndarray | None = None
    # Synthetic starting input for attacks that invent one (distal).
    base_input: np.ndarray | None = None


def _batch_objective(net: Network, points: np.ndarray, ys: np.ndarray | None, kind: Objective):
    """Objective values plus the logit-space gradient for each example."""
    trace = forward(net, points)
    probs = softmax(trace.logits)
    n, k = probs.shape
    rows = np.arange(n)
    if kind == "ce":
        p_true = probs[rows, ys]
        values = -np.log(np.maximum(p_true, 1e-300))
        dlogits = probs.copy()
        dlogits[rows, ys] -= 1.0
    else:
        scores = probs.copy()
        if kind == "conf":
            scores[rows, ys] = -np.inf
        best = scores.argmax(axis=1)  # ties resolve to the smallest index
        values = probs[rows, best]
        dlogits = -probs * values[:, None]
        dlogits[rows, best] += values
    return values, dlogits, probs, trace


def objective_ce(net: Network, x: np.ndarray, delta: np.ndarray, y: int) -> float:
    """Cross-entropy of the prediction at x + delta against one-hot y."""
    values, _, _, _ = _batch_objective(
        net, np.atleast_2d(np.asarray(x) + np.asarray(delta)), np.array([y]), "ce"
    )
    return float(values[0])


def objective_conf(net: Network, x: np.ndarray, delta: np.ndarray, y: int) -> float:
    """Highest predicted probability among classes other than y at x + delta."""
    values, _, _, _ = _batch_objective(
        net, np.atleast_2d(np.asarray(x) + np.asarray(delta)), np.array([y]), "conf"
    )
    return float(values[0])


def _pgd_core(net, X, ys, cfg: AttackConfig, deltas0):
    """One restart of the backtracking PGD loop over a batch.

    Returns per-example best deltas, best objectives, iterations used,
    stall flags, rejection counts, and (optionally) best-value traces.
    """
    n, d = X.shape
    tm, mask = cfg.tm, cfg.mask
    beta = cfg.momentum

    delta = project_feasible(X, np.asarray(deltas0, dtype=np.float64), tm, mask)
    best_v = np.zeros(n)
    best_delta = delta.copy()
    buf = np.zeros_like(delta)
    lr = np.full(n, float(cfg.lr))
    frozen = np.zeros(n, dtype=bool)
    iters_used = np.full(n, cfg.iterations, dtype=int)
    rejected = np.zeros(n, dtype=int)
    trace = np.zeros((n, cfg.iterations + 1)) if cfg.record_trace else None

    for t in range(cfg.iterations + 1):
        delta = project_feasible(X, delta, tm, mask)
        v_t, dlogits, _, ftrace = _batch_objective(net, X + delta, ys, cfg.objective)
        improved = v_t > best_v
        best_v = np.where(improved, v_t, best_v)
        best_delta[improved] = delta[improved]
        if trace is not None:
            trace[:, t] = best_v
        if t == cfg.iterations:
            break  # final pass only checks whether the last update improved

        grad = backward_from_logit_grad(net, ftrace, dlogits, wrt="input").input_grad
        if mask is not None:
            grad = np.where(mask, grad, 0.0)
        direction, stall = normalize_gradient(grad, tm.p)
        buf = beta * buf + (1.0 - beta) * direction

        newly_frozen = stall & (np.abs(buf).max(axis=-1) < STALL_TOL) & ~frozen
        iters_used[newly_frozen] = t
        frozen |= newly_frozen
        if frozen.all():
            if trace is not None:
                trace = trace[:, : t + 1]
            break

        trial = project_feasible(X, delta + lr[:, None] * buf, tm, mask)
        v_hat, _, _, _ = _batch_objective(net, X + trial, ys, cfg.objective)
        accept = (v_hat >= v_t) | cfg.always_accept
        delta[accept] = trial[accept]
        reject = ~accept & ~frozen
        lr[reject] = np.maximum(lr[reject] / cfg.lr_factor, LR_FLOOR)
        rejected[reject] += 1
        if cfg.momentum_reset_on_reject:
            buf[reject] = 0.0

    return best_delta, best_v, iters_used, frozen, rejected, trace


def _outcome_fields(net, X, deltas):
    """Adversarial labels and confidences at the attacked points."""
    probs = softmax(forward(net, X + deltas).logits)
    labels = probs.argmax(axis=1)
    confs = probs[np.arange(probs.shape[0]), labels]
    return labels, confs


def pgd_attack_batch(
    net: Network,
    X: np.ndarray,
    ys: np.ndarray | None,
    cfg: AttackConfig,
    example_ids: Sequence[int] | None = None,
) -> list[AttackOutcome]:
    """Run PGD on a batch of examples, merging restarts per example.

    Restarts are independent runs; the one with the highest adversarial
    confidence wins (ties keep the earliest restart).  With init="zero"
    a single restart is run since the start point is deterministic.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    ys = np.zeros(n, dtype=int) if ys is None else np.asarray(ys, dtype=int)
    if example_ids is None:
        example_ids = range(n)
    example_ids = list(example_ids)
    restarts = 1 if cfg.init == "zero" else cfg.restarts

    best: list[AttackOutcome | None] = [None] * n
    for r in range(restarts):
        deltas0 = np.stack([_restart_init(cfg, X[i], example_ids[i], r) for i in range(n)])
        deltas, values, iters, frozen, rejected, trace = _pgd_core(net, X, ys, cfg, deltas0)
        labels, confs = _outcome_fields(net, X, deltas)
        for i in range(n):
            if best[i] is not None and confs[i] <= best[i].adv_confidence:
                continue  # strictly higher confidence wins; ties keep earlier restart
            best[i] = AttackOutcome(
                delta=deltas[i].copy(),
                objective_value=float(values[i]),
                adv_confidence=float(confs[i]),
                adv_label=int(labels[i]),
                success=int(labels[i]) != int(ys[i]),
                iterations_used=int(iters[i]),
                restarts_used=restarts,
                stalled=bool(frozen[i]),
                rejected_steps=int(rejected[i]),
                objective_trace=None if trace is None else trace[i].copy(),
            )
    return best


def _restart_init(cfg: AttackConfig, x: np.ndarray, example_id: int, restart: int) -> np.ndarray:
    if cfg.init == "zero":
        return np.zeros_like(x)
    gen = rngmod.stream(cfg.seed, "pgd-init", example_id, restart)
    if cfg.mask is not None:
        # Border attacks start from uniform values on the masked pixels.
        rand = gen.uniform(cfg.tm.box_low, cfg.tm.box_high, size=x.shape[0])
        return np.where(cfg.mask, rand - x, 0.0)
    return init_perturbation(cfg.tm, x, "random", gen)


def pgd_attack(
    net: Network, x: np.ndarray, y: int, cfg: AttackConfig, example_id: int = 0
) -> AttackOutcome:
    """Single-example PGD; randomness comes from cfg.seed and example_id."""
    return pgd_attack_batch(net, np.atleast_2d(x), np.array([y]), cfg, [example_id])[0]


def random_sampling_attack(
    net: Network,
    x: np.ndarray,
    y: int,
    tm: ThreatModel,
    samples: int,
    seed: int = 0,
    example_id: int = 0,
) -> AttackOutcome:
    """Best of N uniform draws from the threat model under the confidence
    objective.  Draws come from one per-example stream, so the first n
    samples of a longer run are exactly the samples of a shorter run."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    gen = rngmod.stream(seed, "random-attack", example_id)
    deltas = np.stack([init_perturbation(tm, x, "random", gen) for _ in range(samples)])
    values, _, _, _ = _batch_objective(net, x[None, :] + deltas, np.full(samples, y), "conf")
    pick = int(values.argmax())
    labels, confs = _outcome_fields(net, x[None, :], deltas[pick][None, :])
    return AttackOutcome(
        delta=deltas[pick],
        objective_value=float(values[pick]),
        adv_confidence=float(confs[0]),
        adv_label=int(labels[0]),
        success=int(labels[0]) != int(y),
        iterations_used=0,
        restarts_used=samples,
    )


def distal_attack(
    net: Network,
    dim: int,
    tm: ThreatModel,
    cfg: AttackConfig,
    confidence_threshold: float | None = None,
    instance_id: int = 0,
) -> AttackOutcome:
    """Maximize the top confidence around a uniform random synthetic input.

    There is no true label; the objective is the maximum over all classes,
    and success means reaching the caller's confidence threshold.
    """
    x0 = rngmod.stream(cfg.seed, "distal-x0", instance_id).uniform(
        tm.box_low, tm.box_high, size=dim
    )
    run_cfg = replace(cfg, objective="max")
    outcome = pgd_attack_batch(net, x0[None, :], None, run_cfg, [instance_id])[0]
    outcome.base_input = x0
    outcome.success = (
        confidence_threshold is not None and outcome.adv_confidence >= confidence_threshold
    )
    return outcome


def frame_mask(shape: tuple[int, ...], border: int) -> np.ndarray:
    """Flat boolean mask selecting a border of the given pixel width.

    shape is (H, W) or (H, W, C); all channels of a border pixel are
    selected.  Requires 2 * border < min(H, W).
    """
    if border < 1:
        raise ValueError("border must be >= 1")
    if len(shape) == 2:
        h, w = shape
        c = 1
    elif len(shape) == 3:
        h, w, c = shape
    else:
        raise ValueError(f"expected (H, W) or (H, W, C), got {shape}")
    if 2 * border >= min(h, w):
        raise ValueError(f"border {border} too large for {h}x{w} image")
    mask2d = np.ones((h, w), dtype=bool)
    mask2d[border : h - border, border : w - border] = False
    return np.repeat(mask2d[:, :, None], c, axis=2).ravel()


def worst_case_merge(outcomes: Sequence[AttackOutcome]) -> AttackOutcome:
    """Outcome with the highest adversarial confidence; ties keep the first."""
    if not outcomes:
        raise ValueError("cannot merge an empty outcome list")
    confs = np.array([o.adv_confidence for o in outcomes])
    return outcomes[int(confs.argmax())]
