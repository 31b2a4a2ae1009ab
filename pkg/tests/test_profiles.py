import numpy as np
import pytest

from ccatlab.net import forward, make_mlp, softmax
from ccatlab.profiles import direction_profile, interpolation_profile, write_profile_csv


class TestDirectionProfile:
    def test_origin_row_is_clean_prediction(self, rng):
        net = make_mlp([3, 5, 4], rng)
        x = rng.uniform(size=3)
        rows = direction_profile(net, x, rng.normal(size=3), [0.0, 0.1, 0.2])
        clean = softmax(forward(net, x[None, :]).logits)[0]
        assert np.allclose(rows[0, 1:], clean, atol=1e-15)
        assert rows[0, 0] == 0.0

    def test_rows_sum_to_one(self, rng):
        net = make_mlp([4, 6, 3], rng)
        rows = direction_profile(net, rng.uniform(size=4), rng.normal(size=4), np.linspace(0, 0.6, 13))
        assert np.max(np.abs(rows[:, 1:].sum(axis=1) - 1.0)) <= 1e-12

    def test_matches_independent_forward_calls(self, rng):
        net = make_mlp([3, 5, 2], rng)
        x = rng.uniform(size=3)
        delta = rng.normal(size=3)
        ts = [0.0, 0.15, 0.3]
        rows = direction_profile(net, x, delta, ts)
        unit = delta / np.abs(delta).max()
        for row, t in zip(rows, ts):
            probs = softmax(forward(net, (x + t * unit)[None, :]).logits)[0]
            assert np.array_equal(row[1:], probs)

    def test_zero_direction_rejected(self, rng):
        net = make_mlp([3, 5, 2], rng)
        with pytest.raises(ValueError):
            direction_profile(net, rng.uniform(size=3), np.zeros(3), [0.0])


class TestInterpolationProfile:
    def test_endpoints(self, rng):
        net = make_mlp([4, 5, 3], rng)
        x1, x2 = rng.uniform(size=4), rng.uniform(size=4)
        rows = interpolation_profile(net, x1, x2, [0.0, 0.5, 1.0])
        for kappa, x in ((0, x1), (1.0, x2)):
            probs = softmax(forward(net, x[None, :]).logits)[0]
            row = rows[0] if kappa == 0 else rows[2]
            assert np.allclose(row[1:], probs, atol=1e-15)

    def test_midpoint_is_mean_image(self, rng):
        net = make_mlp([4, 5, 3], rng)
        x1, x2 = rng.uniform(size=4), rng.uniform(size=4)
        rows = interpolation_profile(net, x1, x2, [0.5])
        probs = softmax(forward(net, ((x1 + x2) / 2.0)[None, :]).logits)[0]
        assert np.allclose(rows[0, 1:], probs, atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        net = make_mlp([4, 5, 6], rng)
        rows = interpolation_profile(net, rng.uniform(size=4), rng.uniform(size=4), np.linspace(0, 1, 11))
        assert np.max(np.abs(rows[:, 1:].sum(axis=1) - 1.0)) <= 1e-12


def test_csv_round_trip(rng, tmp_path):
    net = make_mlp([3, 4, 2], rng)
    rows = direction_profile(net, rng.uniform(size=3), rng.normal(size=3), [0.0, 0.2])
    path = tmp_path / "profile.csv"
    write_profile_csv(rows, str(path), "t")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,conf_0,conf_1"
    back = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    assert np.array_equal(back, rows)
