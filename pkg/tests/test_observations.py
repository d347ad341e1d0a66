import numpy as np
import pytest

from src import rle_mask
from src.errors import InvalidInputError, ObservationRejected
from src.observations import (
    FrameReport,
    ObservationParams,
    Proposal,
    build_observation_set,
    extract_pos_vel,
    geometric_filter,
    nms_proposals,
)

from tests.conftest import H, W


def _brute_nms(proposals, threshold):
    kept = []
    for prop in sorted(proposals, key=lambda p: -p.score):
        if all(rle_mask.iou(prop.mask, k.mask) <= threshold for k in kept):
            kept.append(prop)
    return kept


class TestNms:
    def test_duplicate_suppressed(self, box):
        a = Proposal(box(10, 10, 10, 10), 0.9, index=0)
        b = Proposal(box(10, 10, 10, 10), 0.8, index=1)
        assert nms_proposals([b, a], 0.7) == [a]

    def test_threshold_is_exclusive(self, box):
        # 10x10 and 10x7 nested boxes: IoU 0.7 exactly
        a = Proposal(box(10, 10, 10, 10), 0.9, index=0)
        b = Proposal(box(10, 10, 10, 7), 0.8, index=1)
        assert nms_proposals([a, b], 0.7) == [a, b]
        assert nms_proposals([a, b], 0.69) == [a]

    def test_equal_scores_keep_input_order(self, box):
        a = Proposal(box(0, 0, 5, 5), 0.5, index=0)
        b = Proposal(box(0, 0, 5, 5), 0.5, index=1)
        assert nms_proposals([a, b], 0.5) == [a]

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            proposals = []
            for k in range(25):
                x, y = int(rng.integers(0, W - 10)), int(rng.integers(0, H - 10))
                w, h = int(rng.integers(3, 20)), int(rng.integers(3, 20))
                proposals.append(Proposal(rle_mask.from_box(H, W, (x, y, w, h)), float(rng.random()), index=k))
            assert nms_proposals(proposals, 0.5) == _brute_nms(proposals, 0.5)


class TestGeometricFilter:
    def test_height_band(self, make_ctx, make_observation, box):
        ctx = make_ctx()
        inside = make_observation(box(0, 0, 4, 4), pos=(0.0, -0.85, 10.0), index=0)
        too_low = make_observation(box(0, 0, 4, 4), pos=(0.0, -1.55, 10.0), index=1)
        too_high = make_observation(box(0, 0, 4, 4), pos=(0.0, 2.0, 10.0), index=2)
        report = FrameReport(0)
        kept = geometric_filter([inside, too_low, too_high], ctx, 0.2, 3.0, report)
        assert kept == [inside]
        assert [r["index"] for r in report.rejected] == [1, 2]

    def test_missing_plane_skips_filter(self, make_ctx, make_observation, box):
        ctx = make_ctx(plane=None)
        obs = make_observation(box(0, 0, 4, 4), pos=(0.0, 20.0, 10.0))
        report = FrameReport(0)
        assert geometric_filter([obs], ctx, 0.2, 3.0, report) == [obs]
        assert report.ground_plane_missing


class TestExtractPosVel:
    def test_median_position_and_flow(self, make_ctx, box):
        flow = np.zeros((H, W, 2))
        flow[..., 1] = 0.5
        ctx = make_ctx(depth=10.0, flow=flow)
        pos, vel = extract_pos_vel(box(35, 25, 11, 11), ctx)
        np.testing.assert_allclose(pos, [0.0, 0.0, 10.0], atol=1e-9)
        np.testing.assert_allclose(vel, [0.0, 0.5], atol=1e-9)

    def test_without_flow_velocity_is_zero(self, make_ctx, box):
        _, vel = extract_pos_vel(box(35, 25, 11, 11), make_ctx(depth=10.0))
        np.testing.assert_array_equal(vel, [0.0, 0.0])

    def test_rejections(self, make_ctx, box):
        with pytest.raises(ObservationRejected):
            extract_pos_vel(box(0, 0, 5, 5), make_ctx(depth=None))
        with pytest.raises(ObservationRejected):
            extract_pos_vel(box(0, 0, 3, 3), make_ctx(depth=10.0), min_pixels=10)


class TestBuildObservationSet:
    def test_top_k_of_disjoint_bypass_proposals(self, make_ctx, rng):
        cells = [(x, y) for y in range(0, H, 4) for x in range(0, W, 4)]
        scores = rng.permutation(150) / 150.0
        proposals = [
            Proposal(rle_mask.from_box(H, W, (x, y, 4, 4)), float(s), pos=np.array([0.0, -0.85, 10.0]), index=k)
            for k, ((x, y), s) in enumerate(zip(cells[:150], scores))
        ]
        report = FrameReport(0)
        kept = build_observation_set(proposals, make_ctx(), ObservationParams(), report)
        assert len(kept) == 100
        assert [o.score for o in kept] == sorted((o.score for o in kept), reverse=True)
        assert min(o.score for o in kept) == pytest.approx(50 / 150)
        assert report.proposals == 150
        assert report.observations == 100
        assert sum(r["reason"] == "beyond top-K" for r in report.rejected) == 50

    def test_empty_frame(self, make_ctx):
        assert build_observation_set([], make_ctx(), ObservationParams()) == []

    def test_mask_size_mismatch(self, make_ctx):
        prop = Proposal(rle_mask.from_box(10, 10, (0, 0, 5, 5)), 0.9, pos=np.array([0.0, -0.85, 10.0]))
        with pytest.raises(InvalidInputError):
            build_observation_set([prop], make_ctx(), ObservationParams())

    def test_depth_path_rejects_without_depth(self, make_ctx, box):
        report = FrameReport(0)
        kept = build_observation_set([Proposal(box(0, 0, 8, 8), 0.9, index=3)], make_ctx(), ObservationParams(), report)
        assert kept == []
        assert report.rejected == [{"index": 3, "reason": "no depth map"}]

    def test_empty_masks_are_dropped(self, make_ctx):
        prop = Proposal(rle_mask.empty(H, W), 0.9, pos=np.array([0.0, -0.85, 10.0]))
        assert build_observation_set([prop], make_ctx(), ObservationParams()) == []

    def test_params_validation(self):
        with pytest.raises(InvalidInputError):
            ObservationParams(h_min=2.0, h_max=1.0)
        with pytest.raises(InvalidInputError):
            ObservationParams(nms_iou=1.5)
