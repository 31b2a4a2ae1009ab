import math

import numpy as np
import pytest

from ccatlab import rng as rngmod
from ccatlab.attacks import (
    AttackConfig,
    AttackOutcome,
    distal_attack,
    frame_mask,
    objective_ce,
    objective_conf,
    pgd_attack,
    pgd_attack_batch,
    random_sampling_attack,
    worst_case_merge,
)
from ccatlab.geometry import (
    ThreatModel,
    init_perturbation,
    is_feasible,
    normalize_gradient,
    project_feasible,
)
from ccatlab.net import DenseLayer, Network, cross_entropy_soft, forward, make_mlp, softmax
from oracles import grid_best_objective

INF = np.inf


def linear_net(rng, in_dim=2, classes=2):
    W = rng.normal(size=(classes, in_dim))
    return Network([DenseLayer(W, np.zeros(classes), "identity")])


def peak_net(center=0.5):
    """1-D net whose class-0 confidence peaks at x = center."""
    hidden = DenseLayer(np.array([[1.0], [-1.0]]), np.array([-center, center]), "relu")
    logits = DenseLayer(np.array([[-4.0, -4.0], [0.0, 0.0]]), np.zeros(2), "identity")
    return Network([hidden, logits])


class TestObjectives:
    def test_half_confidence_gives_log_two(self):
        net = Network([DenseLayer(np.zeros((2, 2)), np.zeros(2), "identity")])
        x = np.array([0.2, 0.8])
        assert math.isclose(objective_ce(net, x, np.zeros(2), 0), math.log(2), abs_tol=1e-12)

    def test_zero_delta_equals_training_loss(self, rng):
        net = make_mlp([3, 4, 3], rng)
        x = rng.uniform(size=3)
        probs = softmax(forward(net, x[None, :]).logits)[0]
        assert math.isclose(objective_ce(net, x, np.zeros(3), 1), -math.log(probs[1]), abs_tol=1e-12)

    def test_ce_matches_cross_entropy_composition(self, rng):
        net = make_mlp([4, 5, 3], rng)
        x = rng.uniform(size=4)
        delta = rng.normal(size=4) * 0.05
        probs = softmax(forward(net, (x + delta)[None, :]).logits)[0]
        onehot = np.array([0.0, 0.0, 1.0])
        want = cross_entropy_soft(probs, onehot).value
        assert abs(objective_ce(net, x, delta, 2) - want) <= 1e-12

    def test_conf_two_class_complement(self, rng):
        net = linear_net(rng)
        x = rng.uniform(size=2)
        probs = softmax(forward(net, x[None, :]).logits)[0]
        assert math.isclose(objective_conf(net, x, np.zeros(2), 0), 1.0 - probs[0], abs_tol=1e-12)

    def test_conf_uniform_prediction(self):
        net = Network([DenseLayer(np.zeros((10, 4)), np.zeros(10), "identity")])
        assert math.isclose(objective_conf(net, np.full(4, 0.5), np.zeros(4), 3), 0.1, abs_tol=1e-12)

    def test_conf_enumeration(self):
        logits = np.log(np.array([0.5, 0.2, 0.3]))
        net = Network([DenseLayer(np.zeros((3, 1)), logits, "identity")])
        assert math.isclose(objective_conf(net, np.array([0.5]), np.zeros(1), 0), 0.3, abs_tol=1e-12)


def base_cfg(**kw):
    defaults = dict(
        objective="conf",
        tm=ThreatModel(INF, 0.2),
        iterations=50,
        lr=0.02,
        momentum=0.9,
        lr_factor=1.1,
        init="zero",
        restarts=1,
        record_trace=True,
    )
    defaults.update(kw)
    return AttackConfig(**defaults)


class TestPgd:
    def test_zero_lr_returns_init(self, rng):
        net = make_mlp([2, 4, 2], rng)
        x = rng.uniform(0.3, 0.7, size=2)
        out = pgd_attack(net, x, 0, base_cfg(iterations=1, lr=0.0))
        assert np.array_equal(out.delta, np.zeros(2))
        assert math.isclose(out.objective_value, objective_conf(net, x, np.zeros(2), 0), abs_tol=1e-12)

    def test_linear_model_reaches_closed_form(self, rng):
        # objective is monotone in (w_other - w_true) . delta, so the optimum
        # sits at the signed corner of the box-interior L-inf ball
        for _ in range(5):
            net = linear_net(rng)
            x = rng.uniform(0.4, 0.6, size=2)
            eps = 0.1
            W = net.layers[0].weights
            delta_star = eps * np.sign(W[1] - W[0])
            want = objective_conf(net, x, delta_star, 0)
            out = pgd_attack(net, x, 0, base_cfg(tm=ThreatModel(INF, eps), iterations=50, lr=eps / 5))
            assert out.objective_value >= want - 1e-6

    def test_grid_oracle_small(self, rng):
        for seed in range(3):
            net = make_mlp([2, 6, 3], np.random.default_rng(seed))
            x = rng.uniform(0.25, 0.75, size=2)
            y = 0
            eps = 0.15
            cfg = base_cfg(
                tm=ThreatModel(INF, eps),
                iterations=200,
                lr=eps / 10,
                init="random",
                restarts=5,
                seed=seed,
            )
            out = pgd_attack(net, x, y, cfg)
            best_grid = grid_best_objective(net, x, y, eps, points=201, kind="conf")
            assert out.objective_value >= best_grid - 1e-3

    def test_trace_non_decreasing(self, rng):
        net = make_mlp([3, 5, 2], rng)
        x = rng.uniform(0.2, 0.8, size=3)
        out = pgd_attack(net, x, 1, base_cfg(init="random", restarts=3, iterations=40, seed=4))
        assert out.objective_trace is not None
        assert np.all(np.diff(out.objective_trace) >= 0)

    def test_feasible_outcomes_all_threat_models(self, rng):
        net = make_mlp([6, 8, 3], rng)
        X = rng.uniform(size=(4, 6))
        ys = rng.integers(0, 3, size=4)
        for tm in (ThreatModel(INF, 0.15), ThreatModel(2.0, 0.4), ThreatModel(1.0, 0.8), ThreatModel(0.0, 2)):
            cfg = base_cfg(tm=tm, iterations=30, lr=0.05, init="random", restarts=2)
            for i, out in enumerate(pgd_attack_batch(net, X, ys, cfg)):
                assert is_feasible(X[i], out.delta, tm)

    def test_batch_matches_single_example_runs(self, rng):
        net = make_mlp([3, 6, 2], rng)
        X = rng.uniform(0.2, 0.8, size=(3, 3))
        ys = np.array([0, 1, 0])
        cfg = base_cfg(init="random", restarts=2, iterations=30, seed=9)
        batch = pgd_attack_batch(net, X, ys, cfg, example_ids=[10, 11, 12])
        for i in range(3):
            single = pgd_attack(net, X[i], int(ys[i]), cfg, example_id=10 + i)
            assert np.allclose(single.delta, batch[i].delta, atol=1e-12)
            assert math.isclose(single.objective_value, batch[i].objective_value, abs_tol=1e-12)

    def test_accept_all_without_momentum_is_plain_signed_ascent(self, rng):
        # with no momentum and every trial accepted, PGD degenerates to
        # delta <- project(delta + lr * sign(grad))
        from ccatlab.attacks import _batch_objective
        from ccatlab.net import backward_from_logit_grad

        for seed in range(10):
            gen = np.random.default_rng(seed)
            net = make_mlp([2, 5, 2], gen)
            x = gen.uniform(0.3, 0.7, size=2)
            tm = ThreatModel(INF, 0.1)
            cfg = base_cfg(tm=tm, momentum=0.0, always_accept=True, iterations=20, lr=0.02)
            out = pgd_attack(net, x, 0, cfg)

            delta = np.zeros(2)
            best_v, best_delta = 0.0, delta.copy()
            for t in range(cfg.iterations + 1):
                delta = project_feasible(x, delta, tm)
                v, dl, _, tr = _batch_objective(net, x[None, :] + delta[None, :], np.array([0]), "conf")
                if v[0] > best_v:
                    best_v, best_delta = v[0], delta.copy()
                if t == cfg.iterations:
                    break
                grad = backward_from_logit_grad(net, tr, dl, wrt="input").input_grad[0]
                step, _ = normalize_gradient(grad, INF)
                delta = project_feasible(x, delta + cfg.lr * step, tm)
            assert np.array_equal(out.delta, best_delta)
            assert out.objective_value == best_v

    def test_rejected_steps_shrink_lr_but_keep_delta(self):
        # class-0 confidence peaks inside the ball: big steps overshoot and
        # must be rejected while the iterate still converges to the peak
        net = peak_net(0.5)
        x = np.array([0.2])
        cfg = base_cfg(
            tm=ThreatModel(INF, 0.6),
            iterations=60,
            lr=0.45,
            momentum=0.0,
            lr_factor=2.0,
            init="zero",
        )
        out = pgd_attack(net, x, 1, cfg)
        assert out.rejected_steps >= 1
        assert abs((x + out.delta)[0] - 0.5) <= 0.01
        assert np.all(np.diff(out.objective_trace) >= 0)

    def test_stall_at_flat_point(self):
        net = peak_net(0.5)
        out = pgd_attack(net, np.array([0.5]), 1, base_cfg(tm=ThreatModel(INF, 0.3)))
        assert out.stalled
        assert out.iterations_used == 0
        assert np.array_equal(out.delta, np.zeros(1))

    def test_zero_init_forces_single_restart(self, rng):
        net = make_mlp([2, 4, 2], rng)
        out = pgd_attack(net, rng.uniform(size=2), 0, base_cfg(restarts=7))
        assert out.restarts_used == 1


class TestRandomSampling:
    def test_single_sample_equals_init_eval(self, rng):
        net = make_mlp([3, 4, 2], rng)
        x = rng.uniform(size=3)
        tm = ThreatModel(INF, 0.2)
        out = random_sampling_attack(net, x, 0, tm, samples=1, seed=3, example_id=7)
        replay = init_perturbation(tm, x, "random", rngmod.stream(3, "random-attack", 7))
        assert np.array_equal(out.delta, replay)
        assert math.isclose(out.objective_value, objective_conf(net, x, replay, 0), abs_tol=1e-12)

    def test_monotone_in_samples(self, rng):
        net = make_mlp([3, 4, 3], rng)
        x = rng.uniform(size=3)
        tm = ThreatModel(2.0, 0.5)
        values = [
            random_sampling_attack(net, x, 1, tm, samples=k, seed=5).objective_value
            for k in range(1, 25)
        ]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_replay_oracle(self, rng):
        net = make_mlp([4, 5, 3], rng)
        x = rng.uniform(size=4)
        tm = ThreatModel(INF, 0.3)
        out = random_sampling_attack(net, x, 2, tm, samples=200, seed=11, example_id=0)
        gen = rngmod.stream(11, "random-attack", 0)
        best = -np.inf
        for _ in range(200):
            delta = init_perturbation(tm, x, "random", gen)
            best = max(best, objective_conf(net, x, delta, 2))
        assert math.isclose(out.objective_value, best, abs_tol=1e-12)


class TestDistal:
    def test_uniform_net_confidence(self):
        net = Network([DenseLayer(np.zeros((4, 6)), np.zeros(4), "identity")])
        cfg = base_cfg(tm=ThreatModel(INF, 0.3), iterations=10)
        out = distal_attack(net, 6, ThreatModel(INF, 0.3), cfg)
        assert math.isclose(out.adv_confidence, 0.25, abs_tol=1e-12)
        assert out.stalled  # flat predictions leave no gradient signal

    def test_objective_is_max_softmax_at_returned_point(self, rng):
        net = make_mlp([5, 6, 3], rng)
        cfg = base_cfg(tm=ThreatModel(INF, 0.2), iterations=30, lr=0.03, seed=2)
        out = distal_attack(net, 5, cfg.tm, cfg, confidence_threshold=0.5)
        probs = softmax(forward(net, (out.base_input + out.delta)[None, :]).logits)[0]
        assert math.isclose(out.objective_value, probs.max(), abs_tol=1e-12)
        assert out.success == (out.adv_confidence >= 0.5)

    def test_matches_grid_on_tiny_net(self, rng):
        net = make_mlp([2, 5, 2], np.random.default_rng(1))
        tm = ThreatModel(INF, 0.15)
        cfg = base_cfg(tm=tm, iterations=200, lr=0.015, init="random", restarts=5, seed=6)
        out = distal_attack(net, 2, tm, cfg)
        best = grid_best_objective(net, out.base_input, 0, 0.15, points=201, kind="max")
        assert out.objective_value >= best - 1e-3


class TestFrames:
    def test_border_counts(self):
        assert frame_mask((4, 4, 1), 1).sum() == 12
        assert frame_mask((28, 28, 1), 2).sum() == 28 * 28 - 24 * 24

    def test_border_too_large(self):
        with pytest.raises(ValueError):
            frame_mask((4, 4, 1), 2)

    def test_masked_attack_keeps_interior_zero(self, rng):
        mask = frame_mask((3, 3, 1), 1)
        net = make_mlp([9, 8, 2], rng)
        # exaggerate interior weight so any leak would show up
        net.layers[0].weights[:, 4] *= 100.0
        x = rng.uniform(0.2, 0.8, size=9)
        cfg = base_cfg(tm=ThreatModel(INF, 1.0), iterations=40, lr=0.1, mask=mask, init="random")
        out = pgd_attack(net, x, 0, cfg)
        assert np.array_equal(out.delta[~mask], np.zeros(1))
        assert is_feasible(x, out.delta, cfg.tm, mask=mask)


class TestWorstCaseMerge:
    def outcome(self, conf):
        return AttackOutcome(
            delta=np.zeros(1),
            objective_value=conf,
            adv_confidence=conf,
            adv_label=0,
            success=True,
            iterations_used=0,
            restarts_used=1,
        )

    def test_single(self):
        o = self.outcome(0.4)
        assert worst_case_merge([o]) is o

    def test_picks_highest(self):
        outs = [self.outcome(c) for c in (0.3, 0.9, 0.7)]
        assert worst_case_merge(outs) is outs[1]

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            worst_case_merge([])

    def test_order_insensitive(self, rng):
        confs = rng.uniform(size=20)
        outs = [self.outcome(c) for c in confs]
        best = worst_case_merge(outs)
        for _ in range(10):
            perm = rng.permutation(20)
            shuffled = [outs[i] for i in perm]
            assert worst_case_merge(shuffled).adv_confidence == best.adv_confidence

    def test_merge_equals_max(self):
        outs = [self.outcome(c) for c in (0.2, 0.8, 0.5)]
        assert worst_case_merge(outs).adv_confidence == max(o.adv_confidence for o in outs)
