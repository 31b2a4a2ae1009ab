"""Training loops: normal, adversarial (full or half batch), and
confidence-calibrated adversarial training.

Confidence-calibrated training attacks half of every batch with the
maximum-confidence objective and trains those examples toward a convex
combination of the one-hot and uniform distributions.  The one-hot weight
decays with the attack's L-inf perturbation size and hits zero at the
training radius, so the model is pushed toward uniform predictions on and
beyond the ball boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .attacks import AttackConfig, pgd_attack_batch
from .geometry import ThreatModel
from .net import Network, backward, cross_entropy_soft, forward, sgd_step, softmax


@dataclass
class TargetDistribution:
    probs: np.ndarray
    lam: float  # weight of the one-hot component


@dataclass
class CcatConfig:
    epsilon: float
    rho: float = 10.0
    attack: AttackConfig | None = None
    epochs: int = 20
    batch_size: int = 100
    lr: float = 0.1
    lr_decay: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.attack is None:
            self.attack = default_conf_train_attack(self.epsilon)
        if self.attack.tm.p != np.inf:
            raise ValueError("training threat model must be L-inf")


def default_conf_train_attack(epsilon: float) -> AttackConfig:
    """Maximum-confidence training attack: 40 backtracking iterations."""
    return AttackConfig(
        objective="conf",
        tm=ThreatModel(np.inf, epsilon),
        iterations=40,
        lr=0.005,
        momentum=0.9,
        lr_factor=1.5,
        init="random",
        restarts=1,
    )


def default_ce_train_attack(epsilon: float, lr: float = 0.05) -> AttackConfig:
    """Cross-entropy training attack used by standard adversarial training."""
    return AttackConfig(
        objective="ce",
        tm=ThreatModel(np.inf, epsilon),
        iterations=40,
        lr=lr,
        momentum=0.9,
        lr_factor=1.5,
        init="random",
        restarts=1,
    )


def onehot_weight(delta_norm, epsilon: float, rho: float):
    """Weight of the one-hot component given the perturbation's L-inf size.

    (1 - min(1, norm / epsilon)) ** rho: equals 1 at zero perturbation,
    decays monotonically, and is exactly 0 once the norm reaches epsilon.
    Accepts scalars or arrays.
    """
    if epsilon <= 0 or rho <= 0:
        raise ValueError("epsilon and rho must be positive")
    norm = np.asarray(delta_norm, dtype=np.float64)
    lam = (1.0 - np.minimum(1.0, norm / epsilon)) ** rho
    return float(lam) if lam.ndim == 0 else lam


def make_target(y: int, lam: float, num_classes: int) -> TargetDistribution:
    """lam * one_hot(y) + (1 - lam) / K."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    if num_classes < 2:
        raise ValueError("need at least two classes")
    probs = np.full(num_classes, (1.0 - lam) / num_classes)
    probs[y] += lam
    return TargetDistribution(probs, lam)


def make_targets(ys: np.ndarray, lams: np.ndarray, num_classes: int) -> np.ndarray:
    """Batch version of make_target; rows are valid probability vectors."""
    ys = np.asarray(ys, dtype=int)
    lams = np.asarray(lams, dtype=np.float64)
    out = np.repeat(((1.0 - lams) / num_classes)[:, None], num_classes, axis=1)
    out[np.arange(len(ys)), ys] += lams
    return out


def one_hot(ys: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(ys), num_classes))
    out[np.arange(len(ys)), np.asarray(ys, dtype=int)] = 1.0
    return out


@dataclass
class EpochStats:
    epoch: int
    lr: float
    mean_loss: float
    mean_clean_loss: float
    mean_adv_loss: float
    mean_lambda: float
    train_accuracy: float
    # One entry per adversarial example, in batch order; lambda_values is
    # recomputable from delta_norms, which the acceptance checks rely on.
    delta_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _train_epoch(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    *,
    fraction_adv: float,
    attack_cfg: AttackConfig | None,
    ccat: CcatConfig | None,
    lr: float,
    batch_size: int,
    seed: int,
    epoch: int,
) -> EpochStats:
    n = inputs.shape[0]
    k = net.num_classes
    perm = rngmod.stream(seed, "shuffle", epoch).permutation(n)
    attack_seed = rngmod.derive_seed(seed, "attack", epoch)

    clean_losses, adv_losses, batch_sizes = [], [], []
    all_norms, all_lams = [], []
    correct = 0

    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        bx, by = inputs[idx], labels[idx]
        b = len(idx)
        n_adv = int(np.floor(fraction_adv * b))

        batch_inputs = bx.copy()
        targets = one_hot(by, k)
        if n_adv > 0:
            adv_ids = [int(i) for i in idx[:n_adv]]
            cfg = replace(attack_cfg, seed=attack_seed)
            if ccat is not None:
                coins = rngmod.stream(seed, "init-mode", epoch, start).random(n_adv) < 0.5
                outcomes = [None] * n_adv
                for zero_init, sel in ((True, coins), (False, ~coins)):
                    if not sel.any():
                        continue
                    sub_cfg = replace(cfg, init="zero" if zero_init else "random")
                    sub = pgd_attack_batch(
                        net,
                        bx[:n_adv][sel],
                        by[:n_adv][sel],
                        sub_cfg,
                        [adv_ids[j] for j in np.flatnonzero(sel)],
                    )
                    for j, o in zip(np.flatnonzero(sel), sub):
                        outcomes[j] = o
            else:
                outcomes = pgd_attack_batch(net, bx[:n_adv], by[:n_adv], cfg, adv_ids)
            deltas = np.stack([o.delta for o in outcomes])
            batch_inputs[:n_adv] = bx[:n_adv] + deltas
            if ccat is not None:
                norms = np.abs(deltas).max(axis=1)
                lams = onehot_weight(norms, ccat.epsilon, ccat.rho)
                targets[:n_adv] = make_targets(by[:n_adv], lams, k)
                all_norms.append(norms)
                all_lams.append(lams)

        trace = forward(net, batch_inputs)
        losses = cross_entropy_soft(softmax(trace.logits), targets).value
        if lr > 0:
            grads = backward(net, trace, targets, wrt="params")
            sgd_step(net, grads, lr)

        adv_losses.append(losses[:n_adv])
        clean_losses.append(losses[n_adv:])
        batch_sizes.append(b)
        clean_pred = softmax(forward(net, bx).logits).argmax(axis=1)
        correct += int((clean_pred == by).sum())

    clean_all = np.concatenate(clean_losses) if clean_losses else np.zeros(0)
    adv_all = np.concatenate(adv_losses) if adv_losses else np.zeros(0)
    every = np.concatenate([clean_all, adv_all])
    lams_all = np.concatenate(all_lams) if all_lams else np.zeros(0)
    norms_all = np.concatenate(all_norms) if all_norms else np.zeros(0)
    return EpochStats(
        epoch=epoch,
        lr=lr,
        mean_loss=float(every.mean()) if every.size else 0.0,
        mean_clean_loss=float(clean_all.mean()) if clean_all.size else 0.0,
        mean_adv_loss=float(adv_all.mean()) if adv_all.size else 0.0,
        mean_lambda=float(lams_all.mean()) if lams_all.size else 1.0,
        train_accuracy=correct / n,
        delta_norms=norms_all,
        lambda_values=lams_all,
    )


def train_epoch_normal(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    lr: float,
    *,
    batch_size: int = 100,
    seed: int = 0,
    epoch: int = 0,
) -> EpochStats:
    """One pass of shuffled minibatch SGD on clean one-hot cross-entropy."""
    return _train_epoch(
        net,
        inputs,
        labels,
        fraction_adv=0.0,
        attack_cfg=None,
        ccat=None,
        lr=lr,
        batch_size=batch_size,
        seed=seed,
        epoch=epoch,
    )


def train_epoch_at(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    fraction_adv: float,
    attack_cfg: AttackConfig,
    lr: float,
    *,
    batch_size: int = 100,
    seed: int = 0,
    epoch: int = 0,
) -> EpochStats:
    """Adversarial training: the first floor(fraction * B) examples of each
    shuffled batch are replaced by cross-entropy PGD attacks with one-hot
    targets; the rest train clean.  One SGD step per batch."""
    if not 0.0 <= fraction_adv <= 1.0:
        raise ValueError("fraction_adv must be in [0, 1]")
    return _train_epoch(
        net,
        inputs,
        labels,
        fraction_adv=fraction_adv,
        attack_cfg=attack_cfg,
        ccat=None,
        lr=lr,
        batch_size=batch_size,
        seed=seed,
        epoch=epoch,
    )


def train_epoch_ccat(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: CcatConfig,
    lr: float,
    *,
    epoch: int = 0,
) -> EpochStats:
    """Confidence-calibrated epoch: half of each batch is attacked with the
    maximum-confidence objective (randomly zero- or random-initialized per
    example) and trained toward the convex one-hot/uniform target computed
    from the attack's L-inf perturbation size."""
    return _train_epoch(
        net,
        inputs,
        labels,
        fraction_adv=0.5,
        attack_cfg=cfg.attack,
        ccat=cfg,
        lr=lr,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        epoch=epoch,
    )


LOG_FIELDS = ["epoch", "mean_clean_loss", "mean_adv_loss", "mean_lambda", "train_accuracy", "lr"]


def write_train_log(stats: list[EpochStats], path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_FIELDS)
        for s in stats:
            writer.writerow(
                [
                    s.epoch,
                    format(s.mean_clean_loss, ".17g"),
                    format(s.mean_adv_loss, ".17g"),
                    format(s.mean_lambda, ".17g"),
                    format(s.train_accuracy, ".17g"),
                    format(s.lr, ".17g"),
                ]
            )


def fit(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    regime: str,
    *,
    epochs: int,
    batch_size: int = 100,
    lr: float = 0.1,
    lr_decay: float = 0.95,
    seed: int = 0,
    epsilon: float = 0.1,
    rho: float = 10.0,
    attack_cfg: AttackConfig | None = None,
    log_path: str | None = None,
) -> list[EpochStats]:
    """Multi-epoch driver; the learning rate is multiplied by lr_decay
    after each epoch.  regime is one of normal, at50, at100, ccat."""
    if regime not in ("normal", "at50", "at100", "ccat"):
        raise ValueError(f"unknown training regime {regime!r}")
    ccat_cfg = None
    if regime == "ccat":
        ccat_cfg = CcatConfig(
            epsilon=epsilon,
            rho=rho,
            attack=attack_cfg,
            epochs=epochs,
            batch_size=batch_size,
            lr=lr,
            lr_decay=lr_decay,
            seed=seed,
        )
    elif regime in ("at50", "at100") and attack_cfg is None:
        attack_cfg = default_ce_train_attack(epsilon)

    stats = []
    current_lr = lr
    for epoch in range(epochs):
        if regime == "normal":
            s = train_epoch_normal(
                net, inputs, labels, current_lr, batch_size=batch_size, seed=seed, epoch=epoch
            )
        elif regime == "ccat":
            s = train_epoch_ccat(net, inputs, labels, ccat_cfg, current_lr, epoch=epoch)
        else:
            fraction = 0.5 if regime == "at50" else 1.0
            s = train_epoch_at(
                net,
                inputs,
                labels,
                fraction,
                attack_cfg,
                current_lr,
                batch_size=batch_size,
                seed=seed,
                epoch=epoch,
            )
        stats.append(s)
        current_lr *= lr_decay
    if log_path is not None:
        write_train_log(stats, log_path)
    return stats
