import logging
import math

import numpy as np
import pytest

from glrt_cascade.core_math import expected_reward
from glrt_cascade.environment import (
    EnvironmentSpec,
    SegmentSpec,
    check_assumption2,
    hard_instance_gap,
    load_segments_csv,
    make_hard_instance,
    make_synthetic,
    simulate_click,
    write_segments_csv,
)
from glrt_cascade.errors import ValidationError


def two_segment(L=4, K=2):
    a = np.linspace(0.2, 0.8, L)
    return EnvironmentSpec.from_blocks(K, [10, 15], [a, a[::-1].copy()])


class TestSpec:
    def test_lookup(self):
        spec = two_segment()
        assert spec.T == 25 and spec.N == 2
        assert spec.change_points == [10]
        assert spec.segment_index(10) == 0 and spec.segment_index(11) == 1
        assert spec.attraction_at(11)[0] == pytest.approx(0.8)
        assert spec.optimal_list(1).tolist() == [3, 2]
        assert spec.optimal_list(25).tolist() == [0, 1]

    def test_slot_bounds(self):
        spec = two_segment()
        for t in (0, 26):
            with pytest.raises(ValidationError):
                spec.segment_index(t)

    def test_step_regret(self):
        spec = two_segment()
        w = spec.attraction_at(1)
        assert spec.step_regret(1, [3, 2]) == 0.0
        assert spec.step_regret(1, [0, 1]) == pytest.approx(
            expected_reward([3, 2], w) - expected_reward([0, 1], w)
        )
        with pytest.raises(ValidationError):
            spec.step_regret(1, [0, 1, 2])

    def test_gap_rejected(self):
        w = np.full(3, 0.5)
        with pytest.raises(ValidationError, match="gap or overlap"):
            EnvironmentSpec(3, 1, 20, (SegmentSpec(1, 9, w), SegmentSpec(11, 20, w + 0.1)))

    def test_overlap_rejected(self):
        w = np.full(3, 0.5)
        with pytest.raises(ValidationError, match="gap or overlap"):
            EnvironmentSpec(3, 1, 20, (SegmentSpec(1, 10, w), SegmentSpec(10, 20, w + 0.1)))

    def test_horizon_mismatch(self):
        with pytest.raises(ValidationError):
            EnvironmentSpec(3, 1, 30, (SegmentSpec(1, 20, np.full(3, 0.5)),))

    def test_identical_neighbours_rejected(self):
        w = np.full(3, 0.5)
        with pytest.raises(ValidationError, match="identical"):
            EnvironmentSpec.from_blocks(1, [5, 5], [w, w.copy()])

    @pytest.mark.parametrize("K,L", [(0, 3), (4, 3)])
    def test_k_range(self, K, L):
        with pytest.raises(ValidationError):
            EnvironmentSpec.from_blocks(K, [5], [np.full(L, 0.5)])

    def test_attraction_range(self):
        with pytest.raises(ValidationError):
            SegmentSpec(1, 5, np.array([0.5, 1.2]))

    def test_vectors_read_only(self):
        spec = two_segment()
        with pytest.raises(ValueError):
            spec.segments[0].w[0] = 0.0


class TestClicks:
    def test_certain_and_impossible(self):
        rng = np.random.default_rng(0)
        fb, r, ex = simulate_click(np.array([0.0, 1.0, 0.0]), [0, 1, 2], rng)
        assert fb.clicked_position == 2 and r == 1 and ex == 2
        fb, r, ex = simulate_click(np.zeros(3), [2, 0], rng)
        assert fb.clicked_position is None and r == 0 and ex == 2

    def test_click_distribution(self):
        w = np.array([0.3, 0.6, 0.2, 0.5])
        items = [1, 3, 0]
        rng = np.random.default_rng(42)
        n = 100_000
        counts = np.zeros(4, dtype=int)
        for _ in range(n):
            fb, _, _ = simulate_click(w, items, rng)
            counts[fb.clicked_position or 0] += 1
        expected = np.array([0.4 * 0.5 * 0.7, 0.6, 0.4 * 0.5, 0.4 * 0.5 * 0.3])
        se = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(counts / n - expected) < 5 * se)
        assert 1 - counts[0] / n == pytest.approx(expected_reward(items, w), abs=5 * se[0])

    def test_invalid_list(self):
        with pytest.raises(ValidationError):
            simulate_click(np.full(3, 0.5), [0, 0], np.random.default_rng(0))


class TestSynthetic:
    def test_structure(self):
        spec = make_synthetic(0)
        assert (spec.L, spec.K, spec.T, spec.N) == (10, 3, 25000, 10)
        assert spec.change_points == [2500 * i for i in range(1, 10)]
        W = spec.attractions
        base = W[0]
        for i in range(10):
            if i % 2 == 0:
                assert np.array_equal(W[i], base)
            else:
                changed = np.flatnonzero(W[i] != base)
                assert changed.size == 3 and np.all(changed >= 3)
                assert np.all(W[i][changed] == 0.9)
        assert np.all(base[:3] > base[3:].max())

    def test_seeded(self):
        assert np.array_equal(make_synthetic(7).attractions, make_synthetic(7).attractions)
        assert not np.array_equal(make_synthetic(7).attractions, make_synthetic(8).attractions)


class TestHardInstance:
    def test_gap_value(self):
        assert hard_instance_gap(10, 25000) == pytest.approx(0.00839, abs=5e-6)

    def test_structure(self):
        spec = make_hard_instance(10, 3, 5, 25000, seed=3)
        eps = hard_instance_gap(10, 25000)
        assert spec.N == 5 and [s.length for s in spec.segments] == [5000] * 5
        bests = []
        for w in spec.attractions:
            top = np.flatnonzero(w > 0.5)
            assert top.size == 1 and w[top[0]] == pytest.approx(0.5 + eps)
            assert np.count_nonzero(w == 0.5) == 9
            bests.append(int(top[0]))
        assert all(a != b for a, b in zip(bests, bests[1:]))

    def test_uneven_horizon(self):
        spec = make_hard_instance(5, 2, 3, 100, seed=0)
        assert [s.length for s in spec.segments] == [34, 34, 32]

    def test_too_many_blocks(self):
        with pytest.raises(ValidationError):
            make_hard_instance(5, 2, 6, 10, seed=0)


class TestCSV:
    def write(self, tmp_path, text):
        path = tmp_path / "env.csv"
        path.write_text(text)
        return path

    def test_round_trip(self, tmp_path):
        spec = make_synthetic(1)
        path = write_segments_csv(spec, tmp_path / "s.csv")
        back = load_segments_csv(path, K=3)
        assert back.T == spec.T and back.change_points == spec.change_points
        assert np.array_equal(back.attractions, spec.attractions)

    def test_scale_and_clip(self, tmp_path, caplog):
        path = self.write(tmp_path, "start,end,w1,w2\n1,5,0.02,0.3\n6,9,0.04,0.1\n")
        with caplog.at_level(logging.WARNING):
            spec = load_segments_csv(path, K=1, scale=5.0)
        assert spec.attractions.tolist() == [[0.1, 1.0], [0.2, 0.5]]
        assert "clipped" in caplog.text

    @pytest.mark.parametrize(
        "text,match",
        [
            ("", "empty"),
            ("start,end,a,b\n1,5,0.1,0.2\n", "row 1"),
            ("start,end,w1,w2\n", "no segment rows"),
            ("start,end,w1,w2\n1,5,0.1\n", "row 2"),
            ("start,end,w1,w2\n1,5,0.1,0.2\n6,9,0.1,x\n", "row 3"),
            ("start,end,w1,w2\n1,5,0.1,-0.2\n", "row 2"),
            ("start,end,w1,w2\n1,5,0.1,0.2\n7,9,0.3,0.2\n", "gap or overlap"),
        ],
    )
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(ValidationError, match=match):
            load_segments_csv(self.write(tmp_path, text), K=1)


class TestAssumption:
    def test_window_formula(self):
        spec = make_synthetic(0)
        p, delta = 0.05, 1 / 25000
        rep = check_assumption2(spec, p, delta)
        d = rep.change_magnitudes[1]
        assert rep.windows[1] == math.ceil(4 * 10 * rep.beta / (p * d * d) + 10 / p)
        assert len(rep.windows) == 10 and len(rep.required) == 10
        assert rep.required[0] == 2 * max(rep.windows[0], rep.windows[1])
        assert rep.required[-1] == 2 * rep.windows[-1]

    def test_long_segments_pass(self):
        a, b = np.array([0.9, 0.1, 0.1]), np.array([0.1, 0.9, 0.1])
        spec = EnvironmentSpec.from_blocks(1, [10**7, 10**7], [a, b])
        assert check_assumption2(spec, 0.5, 0.01).ok

    def test_synthetic_violates_with_default_rate(self):
        rep = check_assumption2(make_synthetic(0), 0.00636, 1 / 25000)
        assert not rep.ok
        assert rep.lines()[-1] == "overall: violated"

    def test_single_segment(self):
        spec = EnvironmentSpec.from_blocks(1, [100], [np.full(3, 0.4)])
        assert check_assumption2(spec, 0.1, 0.1).ok

    def test_bad_rate(self):
        with pytest.raises(ValidationError):
            check_assumption2(two_segment(), 0.0, 0.1)
