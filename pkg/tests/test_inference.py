import itertools

import numpy as np
import pytest

from src import rle_mask
from src.errors import InvalidInputError, SolverLimitError
from src.inference import (
    CrfProblem,
    InferenceParams,
    PairwiseCache,
    minimize_exhaustive,
    minimize_greedy,
    minimize_multibranch,
    pairwise,
    select,
    semantic_term,
    solve_exhaustive,
    solve_multibranch,
    track_label,
    unary,
)

from tests.conftest import H, W


def _random_problem(rng, m):
    u = rng.uniform(-2.0, 1.0, m)
    p = np.triu(rng.uniform(0.0, 3.0, (m, m)), 1)
    return CrfProblem(u, p + p.T)


def _literal_optimum(problem):
    # every assignment, ties to fewer selected then the lexicographically smallest b
    assignments = [np.array(bits) for bits in itertools.product((0, 1), repeat=problem.size)]
    energies = [problem.energy(b) for b in assignments]
    low = min(energies)
    tied = [(int(b.sum()), tuple(b.tolist())) for b, e in zip(assignments, energies) if e <= low + 1e-12]
    bits = np.array(min(tied)[1], dtype=bool)
    return bits, low


class TestUnary:
    def test_zero_weights_leave_w_min(self, make_hypothesis, box):
        params = InferenceParams(w_min=0.7, w_sim=0.0, w_seg=0.0, w_sem=0.0)
        h = make_hypothesis(0, [box(0, 0, 5, 5)] * 3, class_scores={"car": 0.9})
        assert unary(h, 2, params) == pytest.approx(0.7)

    def test_single_frame(self, make_hypothesis, box):
        params = InferenceParams(w_min=0.0, w_sim=1.0, w_seg=1.0, w_sem=0.0)
        h = make_hypothesis(0, [box(0, 0, 5, 5)], score=1.0, sim=1.0)
        assert unary(h, 0, params) == pytest.approx(-2.0)

    def test_decay_over_three_frames(self, make_hypothesis, box):
        params = InferenceParams(lam=2.0, w_min=0.0, w_sim=1.0, w_seg=0.0, w_sem=0.0)
        h = make_hypothesis(0, [box(0, 0, 5, 5)] * 3, sim=1.0)
        expected = -(1.0 + np.exp(-0.5) + np.exp(-1.0))
        assert unary(h, 2, params) == pytest.approx(expected, abs=1e-12)

    def test_frames_after_t_e_are_ignored(self, make_hypothesis, box):
        params = InferenceParams(lam=2.0, w_min=0.0, w_sim=1.0, w_seg=0.0, w_sem=0.0)
        h = make_hypothesis(0, [box(0, 0, 5, 5)] * 5, sim=1.0)
        assert unary(h, 0, params) == pytest.approx(-1.0)

    def test_memoized_sums_match_fresh_evaluation(self, make_hypothesis, box, rng):
        params = InferenceParams(lam=3.0)
        h = make_hypothesis(0, [box(0, 0, 5, 5)] * 12, class_scores={"car": 0.8, "person": 0.6})
        for frame in h.frames:
            frame.sim = float(rng.random())
            frame.score = float(rng.random())
        for t_e in range(12):
            incremental = unary(h, t_e, params)
            h.evidence_cache.clear()
            assert incremental == pytest.approx(unary(h, t_e, params), abs=1e-12)

    def test_semantic_weight_is_monotone(self, make_hypothesis, box):
        h = make_hypothesis(0, [box(0, 0, 5, 5)] * 4, class_scores={"car": 0.9})
        strengths = [-unary(h, 3, InferenceParams(w_sem=w)) for w in (0.0, 0.5, 1.0, 2.0)]
        assert strengths == sorted(strengths)
        assert strengths[0] < strengths[-1]


class TestSemantics:
    def test_truncation(self):
        assert semantic_term(0.9, 0.5) == pytest.approx(0.9)
        assert semantic_term(0.3, 0.5) == 0.0
        assert semantic_term(0.5, 0.5) == 0.0
        assert semantic_term(None, 0.5) == 0.0

    def test_track_label(self, make_hypothesis, box):
        params = InferenceParams(c_min=0.5)
        labeled = make_hypothesis(0, [box(0, 0, 5, 5)] * 3, class_scores={"car": 0.9, "person": 0.6})
        weak = make_hypothesis(1, [box(0, 0, 5, 5)] * 3, class_scores={"car": 0.4})
        plain = make_hypothesis(2, [box(0, 0, 5, 5)] * 3)
        assert track_label(labeled, 2, params) == "car"
        assert track_label(weak, 2, params) is None
        assert track_label(plain, 2, params) is None

    def test_params_validation(self):
        with pytest.raises(InvalidInputError):
            InferenceParams(lam=0.0)
        with pytest.raises(InvalidInputError):
            InferenceParams(c_min=1.5)


class TestPairwise:
    def test_disjoint_masks(self, make_hypothesis, box):
        a = make_hypothesis(0, [box(0, 0, 5, 5)] * 3)
        b = make_hypothesis(1, [box(30, 30, 5, 5)] * 3)
        assert pairwise(a, b, 2, InferenceParams()) == 0.0

    def test_disjoint_lifespans(self, make_hypothesis, box):
        a = make_hypothesis(0, [box(0, 0, 5, 5)] * 3)
        b = make_hypothesis(1, [box(0, 0, 5, 5)] * 3, start=3)
        assert pairwise(a, b, 5, InferenceParams()) == 0.0

    def test_nested_at_t_e(self, make_hypothesis, box):
        small = make_hypothesis(0, [box(2, 2, 3, 3)], start=4)
        large = make_hypothesis(1, [box(0, 0, 10, 10)], start=4)
        params = InferenceParams()
        assert pairwise(small, large, 4, params) == pytest.approx(1.0)
        assert pairwise(large, small, 4, params) == pytest.approx(1.0)

    def test_cache_matches_direct_recomputation(self, make_hypothesis, rng, random_mask):
        params = InferenceParams(lam=2.5)
        masks_a = [rle_mask.encode(random_mask(rng, H, W, 0.3)) for _ in range(10)]
        masks_b = [rle_mask.encode(random_mask(rng, H, W, 0.3)) for _ in range(8)]
        a = make_hypothesis(0, masks_a)
        b = make_hypothesis(1, masks_b, start=2)
        cache = PairwiseCache()
        for t_e in range(2, 10):
            assert cache.get(a, b, t_e, params) == pytest.approx(pairwise(b, a, t_e, params), abs=1e-12)

    def test_cache_retain_drops_dead_pairs(self, make_hypothesis, box):
        a = make_hypothesis(0, [box(0, 0, 5, 5)])
        b = make_hypothesis(1, [box(0, 0, 5, 5)])
        cache = PairwiseCache()
        cache.get(a, b, 0, InferenceParams())
        cache.retain([0])
        assert cache._entries == {}


class TestSolvers:
    def test_single_hypothesis(self):
        assert minimize_exhaustive(CrfProblem([-0.1], [[0.0]])).selected() == [0]
        assert minimize_exhaustive(CrfProblem([0.1], [[0.0]])).selected() == []
        assert minimize_exhaustive(CrfProblem([0.0], [[0.0]])).selected() == []

    def test_conflicting_pair_selects_one(self):
        problem = CrfProblem([-1.0, -1.0], [[0.0, 3.0], [3.0, 0.0]])
        result = minimize_exhaustive(problem)
        assert result.selected() == [1]
        assert result.energy == pytest.approx(-1.0)

    def test_ties_prefer_smallest_indicator_vector(self):
        problem = CrfProblem([-1.0, -1.0, -1.0], [[0.0, 3.0, 3.0], [3.0, 0.0, 3.0], [3.0, 3.0, 0.0]])
        assert minimize_exhaustive(problem).selected() == [2]
        assert minimize_multibranch(problem, 8).selected() == [2]
        assert minimize_greedy(problem).selected() == [2]
        # a single pick beats two picks of equal energy
        pair = CrfProblem([-1.0, -0.5, -0.5], [[0.0, 3.0, 3.0], [3.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        assert minimize_exhaustive(pair).selected() == [0]

    def test_empty_problem(self):
        problem = CrfProblem(np.zeros(0), np.zeros((0, 0)))
        assert minimize_exhaustive(problem).selected() == []
        assert minimize_multibranch(problem, 8).selected() == []

    def test_all_positive_unaries(self, rng):
        problem = CrfProblem(rng.uniform(0.1, 1.0, 6), np.zeros((6, 6)))
        assert minimize_multibranch(problem, 8).selected() == []
        assert minimize_greedy(problem).energy == 0.0

    def test_exhaustive_matches_literal_enumeration(self, rng):
        for _ in range(100):
            problem = _random_problem(rng, int(rng.integers(1, 9)))
            result = minimize_exhaustive(problem)
            bits, low = _literal_optimum(problem)
            np.testing.assert_array_equal(result.bits, bits)
            assert result.energy == pytest.approx(low, abs=1e-9)

    def test_multibranch_quality(self, rng):
        matched = 0
        for _ in range(500):
            problem = _random_problem(rng, int(rng.integers(1, 13)))
            optimum = minimize_exhaustive(problem).energy
            beam = minimize_multibranch(problem, 8)
            greedy = minimize_greedy(problem)
            assert beam.energy <= greedy.energy + 1e-9
            assert beam.energy >= optimum - 1e-9
            assert beam.energy == pytest.approx(problem.energy(beam.bits), abs=1e-9)
            matched += abs(beam.energy - optimum) <= 1e-9
        assert matched >= 450

    def test_exhaustive_energy_is_recomputable(self, rng):
        for _ in range(20):
            problem = _random_problem(rng, 10)
            result = minimize_exhaustive(problem)
            assert result.energy == pytest.approx(problem.energy(result.bits), abs=1e-9)

    def test_scaling_keeps_argmin(self, rng):
        for _ in range(20):
            problem = _random_problem(rng, 8)
            scaled = CrfProblem(problem.unary * 3.5, problem.pairwise * 3.5)
            np.testing.assert_array_equal(minimize_exhaustive(problem).bits, minimize_exhaustive(scaled).bits)


class TestSelect:
    def _hypotheses(self, make_hypothesis, box, count):
        return [make_hypothesis(k, [box(4 * k % W, 0, 3, 3)] * 3) for k in range(count)]

    def test_no_hypotheses(self):
        result = select([], 0, InferenceParams())
        assert result.selected() == []
        assert result.energy == 0.0

    def test_dispatch_boundary(self, make_hypothesis, box):
        params = InferenceParams(exhaustive_limit=4)
        assert select(self._hypotheses(make_hypothesis, box, 4), 2, params).solver == "exhaustive"
        assert select(self._hypotheses(make_hypothesis, box, 5), 2, params).solver == "multibranch"

    def test_exhaustive_refuses_large_sets(self, make_hypothesis, box):
        with pytest.raises(SolverLimitError):
            solve_exhaustive(self._hypotheses(make_hypothesis, box, 5), 2, InferenceParams(exhaustive_limit=4))

    def test_duplicates_are_not_co_selected(self, make_hypothesis, box):
        # per-frame gain below the per-frame overlap penalty
        params = InferenceParams(w_sim=0.5, w_seg=0.3, w_sem=0.2)
        hypotheses = [make_hypothesis(k, [box(10, 10, 8, 8)] * 5) for k in range(3)]
        assert select(hypotheses, 4, params).selected() == [2]
        assert solve_multibranch(hypotheses, 4, params).selected() == [2]

    def test_disjoint_objects_are_all_selected(self, make_hypothesis, box):
        hypotheses = self._hypotheses(make_hypothesis, box, 3)
        assert select(hypotheses, 2, InferenceParams()).selected() == [0, 1, 2]
