"""Closed-form analysis of the two-point problem on the real line.

Two atoms, x=0 with class 2 and x=epsilon with class 1, where epsilon is
also the attack radius, so each training point can be pushed exactly onto
the other.  A two-logit classifier is fully described by the logit gaps
a = g1(0) - g2(0) and b = g1(eps) - g2(eps).  Standard adversarial
training drives a = b and misclassifies one atom; calibrated adversarial
training keeps a < 0 < b and classifies both correctly whenever its
uniform mixing is strong enough.  A subgradient minimizer of the exact
expected losses serves as an independent check on the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REGIMES = ("at100", "at50", "ccat")

GRAD_TOL = 1e-8
MAX_STEPS = 100_000


@dataclass(frozen=True)
class ToyProblem:
    p0: float  # probability of the x=0 atom
    epsilon: float
    lam_eps: float  # one-hot weight at the ball boundary

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.lam_eps <= 1.0:
            raise ValueError("lam_eps must be in [0, 1]")


@dataclass(frozen=True)
class ToyParams:
    a: float
    b: float


class NonConvergence(RuntimeError):
    def __init__(self, message: str, last: ToyParams):
        super().__init__(message)
        self.last = last


def _softplus(t: float) -> float:
    if t > 30.0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def at_optimal_params(p0: float) -> ToyParams:
    """Minimizer of both the full and half adversarial training losses."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    a = math.log((1.0 - p0) / p0)
    return ToyParams(a, a)


def ccat_optimal_params(p0: float, lam: float) -> ToyParams:
    """Minimizer of the calibrated loss; a* < b* strictly for lam < 1."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    if not 0.0 <= lam < 1.0:
        raise ValueError("lam must be in [0, 1); lam=1 degenerates to plain AT")
    hi, lo = (1.0 + lam) / 2.0, (1.0 - lam) / 2.0
    a = math.log(hi * (1.0 - p0) / (p0 + lo * (1.0 - p0)))
    b = math.log((lo * p0 + (1.0 - p0)) / (hi * p0))
    return ToyParams(a, b)


def toy_error(params: ToyParams, p0: float) -> float:
    """Classification error of the gap parameters on the two atoms.

    Argmax ties go to class 1 (the lower index, as everywhere else in the
    package): a tie at x=0 counts as an error, a tie at x=epsilon does not.
    """
    err = 0.0
    if params.a >= 0.0:
        err += p0
    if params.b < 0.0:
        err += 1.0 - p0
    return err


def ccat_zero_error_condition(p0: float, lam: float) -> bool:
    """Whether the calibrated minimizer classifies both atoms correctly."""
    return lam < min(p0 / (1.0 - p0), (1.0 - p0) / p0)


def expected_loss(a: float, b: float, p0: float, lam: float, regime: str) -> float:
    """Exact population loss of the given regime at gap parameters (a, b)."""
    sp = _softplus
    if regime == "at100":
        return p0 * max(sp(a), sp(b)) + (1.0 - p0) * max(sp(-a), sp(-b))
    if regime == "at50":
        return (
            p0 * max(sp(a), sp(b))
            + (1.0 - p0) * max(sp(-a), sp(-b))
            + p0 * sp(a)
            + (1.0 - p0) * sp(-b)
        )
    if regime == "ccat":
        hi, lo = (1.0 + lam) / 2.0, (1.0 - lam) / 2.0
        if a >= b:
            adv = p0 * sp(a) + (1.0 - p0) * sp(-b)
        else:
            adv = p0 * (hi * sp(b) + lo * sp(-b)) + (1.0 - p0) * (hi * sp(-a) + lo * sp(a))
        return adv + p0 * sp(a) + (1.0 - p0) * sp(-b)
    raise ValueError(f"unknown regime {regime!r}")


def _loss_grad(a: float, b: float, p0: float, lam: float, regime: str):
    """Subgradient of expected_loss; the two branch gradients are averaged
    exactly on the kink (a == b for the max terms and the regime switch)."""
    sig = _sigmoid
    q = 1.0 - p0

    def at100_branch(upper_is_a: bool):
        # upper: which of a/b realizes max(sp(a), sp(b)); the other one
        # realizes max(sp(-a), sp(-b)).
        if upper_is_a:
            return p0 * sig(a), -q * sig(-b)
        return -q * sig(-a), p0 * sig(b)

    if regime in ("at100", "at50"):
        if a > b:
            ga, gb = at100_branch(True)
        elif a < b:
            ga, gb = at100_branch(False)
        else:
            g1, g2 = at100_branch(True), at100_branch(False)
            ga, gb = (g1[0] + g2[0]) / 2.0, (g1[1] + g2[1]) / 2.0
        if regime == "at50":
            ga += p0 * sig(a)
            gb += -q * sig(-b)
        return ga, gb

    if regime == "ccat":
        hi, lo = (1.0 + lam) / 2.0, (1.0 - lam) / 2.0

        def branch(a_ge_b: bool):
            if a_ge_b:
                return p0 * sig(a), -q * sig(-b)
            return (
                q * (-hi * sig(-a) + lo * sig(a)),
                p0 * (hi * sig(b) - lo * sig(-b)),
            )

        if a > b:
            ga, gb = branch(True)
        elif a < b:
            ga, gb = branch(False)
        else:
            g1, g2 = branch(True), branch(False)
            ga, gb = (g1[0] + g2[0]) / 2.0, (g1[1] + g2[1]) / 2.0
        ga += p0 * sig(a)
        gb += -q * sig(-b)
        return ga, gb

    raise ValueError(f"unknown regime {regime!r}")


def numeric_minimize_expected_loss(
    problem: ToyProblem,
    regime: str,
    max_steps: int = MAX_STEPS,
    grad_tol: float = GRAD_TOL,
) -> ToyParams:
    """Gradient descent on the exact expected loss, starting from (0, 0).

    The adversarial losses have a kink along a == b where their minimizer
    can sit, so the step size adapts: a trial step is kept only when it
    lowers the loss (then the step grows), otherwise the step is halved.
    That brakes geometrically onto the kink while still converging fast in
    the smooth regions.  Stops when the (sub)gradient norm falls below
    grad_tol or the accepted movement per step becomes negligible;
    anything else raises NonConvergence with the last iterate attached.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    p0, lam = problem.p0, problem.lam_eps
    a = b = 0.0
    loss = expected_loss(a, b, p0, lam, regime)
    gamma = 0.5
    converged = False

    for _ in range(max_steps):
        ga, gb = _loss_grad(a, b, p0, lam, regime)
        gnorm = math.hypot(ga, gb)
        if gnorm < grad_tol or gamma * gnorm < 1e-13:
            converged = True
            break
        na, nb = a - gamma * ga, b - gamma * gb
        new_loss = expected_loss(na, nb, p0, lam, regime)
        if new_loss < loss:
            a, b, loss = na, nb, new_loss
            gamma *= 1.1
        else:
            gamma /= 2.0

    if not converged:
        raise NonConvergence(
            f"minimizer did not settle within {max_steps} steps", ToyParams(a, b)
        )
    return ToyParams(a, b)


def trained_gap_params(net, epsilon: float) -> ToyParams:
    """Gap parameters (a, b) of a trained two-logit net on the two atoms."""
    from .net import forward

    logits = forward(net, np.array([[0.0], [epsilon]])).logits
    return ToyParams(float(logits[0, 0] - logits[0, 1]), float(logits[1, 0] - logits[1, 1]))


def train_toy_model(
    p0: float,
    epsilon: float,
    regime: str,
    *,
    seed: int = 0,
    n: int = 10,
    epochs: int | None = None,
    lr: float | None = None,
    lr_decay: float | None = None,
    rho: float = 10.0,
    attack_iterations: int = 12,
):
    """Train the actual two-logit network on the two-atom dataset.

    Full-batch SGD; the inner attack walks the 1-D interval, so a
    handful of iterations reaches the boundary exactly.  The calibrated
    optimum sits further out than the plain adversarial one, so that
    regime gets a larger step budget; plain adversarial training keeps a
    gentler schedule whose frozen iterate preserves the sign of the
    common gap component, which decides the p0 = 1/2 case.
    """
    from . import rng as rngmod
    from .attacks import AttackConfig
    from .data import make_two_point
    from .geometry import ThreatModel
    from .net import make_mlp
    from .training import fit

    if regime == "ccat":
        epochs = 400 if epochs is None else epochs
        lr = 6.0 if lr is None else lr
        lr_decay = 0.988 if lr_decay is None else lr_decay
    else:
        epochs = 400 if epochs is None else epochs
        lr = 1.0 if lr is None else lr
        lr_decay = 0.97 if lr_decay is None else lr_decay

    ds = make_two_point(p0, epsilon, n)
    net = make_mlp([1, 2], rngmod.stream(seed, "toy-init"))
    attack = AttackConfig(
        objective="conf" if regime == "ccat" else "ce",
        tm=ThreatModel(np.inf, epsilon),
        iterations=attack_iterations,
        lr=epsilon,
        momentum=0.9,
        lr_factor=1.5,
        init="zero",
    )
    fit(
        net,
        ds.inputs,
        ds.labels,
        regime,
        epochs=epochs,
        batch_size=n,
        lr=lr,
        lr_decay=lr_decay,
        seed=seed,
        epsilon=epsilon,
        rho=rho,
        attack_cfg=attack,
    )
    return net


def trained_toy_error(p0: float, epsilon: float, regime: str, seed: int = 0, **kwargs) -> float:
    """Population error of the end-to-end trained two-logit model."""
    net = train_toy_model(p0, epsilon, regime, seed=seed, **kwargs)
    return toy_error(trained_gap_params(net, epsilon), p0)


def toy_sweep(
    p0_values,
    lam_values,
    epsilon: float = 0.3,
    seed: int = 0,
    include_trained: bool = True,
) -> list[dict]:
    """Rows comparing closed-form, numeric, and trained errors per (p0, lam).

    The trained columns use the power transition, whose one-hot weight is
    exactly zero at the ball boundary, so the trained calibrated model
    corresponds to lam = 0 regardless of the lam column.
    """
    rows = []
    for p0 in p0_values:
        at_closed = toy_error(at_optimal_params(p0), p0)
        at_trained = (
            trained_toy_error(p0, epsilon, "at100", seed=seed) if include_trained else None
        )
        ccat_trained = (
            trained_toy_error(p0, epsilon, "ccat", seed=seed) if include_trained else None
        )
        for lam in lam_values:
            problem = ToyProblem(p0, epsilon, lam)
            at_numeric = toy_error(numeric_minimize_expected_loss(problem, "at100"), p0)
            ccat_numeric = toy_error(numeric_minimize_expected_loss(problem, "ccat"), p0)
            rows.append(
                {
                    "p0": p0,
                    "lam": lam,
                    "condition": ccat_zero_error_condition(p0, lam),
                    "at_error_closed": at_closed,
                    "ccat_error_closed": toy_error(ccat_optimal_params(p0, lam), p0),
                    "at_error_numeric": at_numeric,
                    "ccat_error_numeric": ccat_numeric,
                    "at_error_trained": at_trained,
                    "ccat_error_trained": ccat_trained,
                }
            )
    return rows
