import numpy as np
import pytest

from src.errors import InvalidInputError
from src.evaluation import (
    CoverageCandidate,
    EvalConfig,
    GroundTruthTrack,
    MotMetrics,
    TrackBox,
    clear_mot,
    coverage_objective,
    group_ground_truth,
    temporal_coverage,
    top_k,
)

BOX_A = (0, 0, 10, 10)
BOX_B = (20, 0, 10, 10)
BOX_C = (40, 0, 10, 10)
BOX_D = (60, 0, 10, 10)
FAR = (100, 100, 10, 10)


def _gt(gt_id, boxes, label="car", distance=None):
    track = GroundTruthTrack(gt_id, label)
    for frame, bbox in boxes.items():
        track.add(frame, bbox, None if distance is None else (0.0, 0.0, distance))
    return track


def _hand_scene():
    # 10 GT boxes over 3 frames: one false positive, one miss, one identity switch
    ground_truth = [
        _gt(0, {0: BOX_A, 1: BOX_A, 2: BOX_A}, distance=5.0),
        _gt(1, {0: BOX_B, 1: BOX_B, 2: BOX_B}, distance=15.0),
        _gt(2, {0: BOX_C, 1: BOX_C, 2: BOX_C}, distance=25.0),
        _gt(3, {2: BOX_D}, distance=35.0),
    ]
    tracks = [
        TrackBox(0, 1, BOX_A, distance=5.0),
        TrackBox(1, 1, BOX_A, distance=5.0),
        TrackBox(2, 5, BOX_A, distance=5.0),
        TrackBox(1, 9, FAR, distance=45.0),
    ]
    for frame in range(3):
        tracks.append(TrackBox(frame, 2, BOX_B, distance=15.0))
        tracks.append(TrackBox(frame, 3, BOX_C, distance=25.0))
    return tracks, ground_truth


class TestClearMot:
    def test_hand_scene(self):
        tracks, ground_truth = _hand_scene()
        m = clear_mot(tracks, ground_truth, EvalConfig()).overall.overall
        assert (m.gt, m.tp, m.fp, m.fn, m.idsw) == (10, 9, 1, 1, 1)
        assert m.mota == pytest.approx(0.7)
        assert m.moda == pytest.approx(0.8)
        assert m.recall == pytest.approx(0.9)
        assert m.precision == pytest.approx(0.9)

    def test_bins_add_up_to_overall(self):
        tracks, ground_truth = _hand_scene()
        report = clear_mot(tracks, ground_truth, EvalConfig()).overall
        total = MotMetrics()
        for m in report.bins:
            total += m
        assert total.to_dict() == report.overall.to_dict()
        assert report.bin_labels[0] == "0-10m"
        assert report.bin_labels[-1] == ">=50m"
        assert report.bins[4].fp == 1

    def test_perfect_tracks(self):
        _, ground_truth = _hand_scene()
        tracks = [TrackBox(f, g.id, b) for g in ground_truth for f, b in g.boxes.items()]
        m = clear_mot(tracks, ground_truth, EvalConfig()).overall.overall
        assert m.mota == 1.0
        assert m.moda == 1.0
        assert m.recall == 1.0
        assert m.precision == 1.0

    def test_relabeling_track_ids_changes_nothing(self):
        tracks, ground_truth = _hand_scene()
        relabeled = [TrackBox(t.frame, 100 + 7 * t.id, t.bbox, distance=t.distance) for t in tracks]
        a = clear_mot(tracks, ground_truth, EvalConfig()).overall.overall
        b = clear_mot(relabeled, ground_truth, EvalConfig()).overall.overall
        assert a.to_dict() == b.to_dict()

    def test_empty_tracks(self):
        _, ground_truth = _hand_scene()
        m = clear_mot([], ground_truth, EvalConfig()).overall.overall
        assert m.recall == 0.0
        assert m.precision == 1.0
        assert m.moda == pytest.approx(0.0)
        assert m.mota <= m.moda

    def test_persistence_beats_higher_iou(self):
        gt = [_gt(0, {0: (0, 0, 10, 10), 1: (0, 0, 10, 10)})]
        tracks = [
            TrackBox(0, 1, (0, 0, 10, 10)),
            TrackBox(1, 1, (0, 0, 10, 8)),
            TrackBox(1, 2, (0, 0, 10, 10)),
        ]
        m = clear_mot(tracks, gt, EvalConfig()).overall.overall
        assert (m.tp, m.fp, m.idsw) == (2, 1, 0)

    def test_category_report_ignores_other_ground_truth(self):
        gt = [_gt(0, {0: BOX_A}, label="car"), _gt(1, {0: BOX_B}, label="pedestrian")]
        tracks = [TrackBox(0, 1, BOX_A), TrackBox(0, 2, BOX_B), TrackBox(0, 3, BOX_C, label="pedestrian")]
        result = clear_mot(tracks, gt, EvalConfig(categories=["car"]))
        car = result.categories["car"].overall
        assert (car.gt, car.tp, car.fp) == (1, 1, 0)
        assert result.overall.overall.fp == 1
        assert result.to_dict()["schema"] == "camot/1"
        assert "car" in result.format_table()
        assert len(result.csv_rows()) == 2 * len(EvalConfig().distance_bins)

    def test_duplicate_track_rows(self):
        with pytest.raises(InvalidInputError):
            clear_mot([TrackBox(0, 1, BOX_A), TrackBox(0, 1, BOX_B)], [], EvalConfig())


class TestGroundTruth:
    def test_grouping(self):
        rows = [
            {"frame": 1, "id": 4, "label": "car", "bbox": [0, 0, 2, 2], "pos": [0.0, 0.0, 12.0]},
            {"frame": 0, "id": 4, "label": "car", "bbox": [0, 0, 2, 2]},
            {"frame": 0, "id": 2, "label": "pedestrian", "bbox": [5, 5, 2, 2]},
        ]
        tracks = group_ground_truth(rows)
        assert [t.id for t in tracks] == [2, 4]
        assert tracks[1].distance_at(1) == pytest.approx(12.0)
        assert tracks[1].distance_at(0) is None

    def test_duplicate_entry(self):
        rows = [{"frame": 0, "id": 1, "bbox": [0, 0, 2, 2]}] * 2
        with pytest.raises(InvalidInputError):
            group_ground_truth(rows)

    def test_label_change(self):
        rows = [
            {"frame": 0, "id": 1, "label": "car", "bbox": [0, 0, 2, 2]},
            {"frame": 1, "id": 1, "label": "van", "bbox": [0, 0, 2, 2]},
        ]
        with pytest.raises(InvalidInputError):
            group_ground_truth(rows)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            EvalConfig(distance_bins=[0.0, 10.0, 10.0])
        config = EvalConfig()
        assert config.bin_of(None) is None
        assert config.bin_of(0.0) == 0
        assert config.bin_of(10.0) == 1
        assert config.bin_of(120.0) == 5


class TestTemporalCoverage:
    @pytest.mark.parametrize("lam", [1.0, 2.0, 4.0])
    def test_perfect_hypothesis(self, lam):
        boxes = {t: BOX_A for t in range(11)}
        gt = _gt(0, boxes)
        expected = sum(np.exp(-k / lam) for k in range(6))
        assert temporal_coverage([CoverageCandidate(0, -1.0, boxes)], gt, 10, lam) == pytest.approx(
            expected, abs=1e-12
        )

    def test_single_frame_and_no_overlap(self):
        gt = _gt(0, {t: BOX_A for t in range(11)})
        assert temporal_coverage([CoverageCandidate(0, -1.0, {10: BOX_A})], gt, 10, 2.0) == pytest.approx(1.0)
        assert temporal_coverage([CoverageCandidate(0, -1.0, {10: FAR})], gt, 10, 2.0) == 0.0
        assert temporal_coverage([], gt, 10, 2.0) == 0.0

    def test_monotone_in_iou(self):
        gt = _gt(0, {t: BOX_A for t in range(6)})
        values = [
            temporal_coverage([CoverageCandidate(0, -1.0, {5: (shift, 0, 10, 10)})], gt, 5, 2.0)
            for shift in (8, 5, 2, 0)
        ]
        assert values == sorted(values)


class TestCoverageObjective:
    def _snapshots(self, frames, boxes):
        return {t: [CoverageCandidate(0, -2.0, boxes), CoverageCandidate(1, 0.5, {})] for t in frames}

    def test_k_zero(self):
        boxes = {t: BOX_A for t in range(10)}
        assert coverage_objective(self._snapshots(range(10), boxes), [_gt(0, boxes)], 0, 2.0) == 0.0

    def test_one_of_two_objects_covered(self):
        boxes = {t: BOX_A for t in range(10)}
        covered = _gt(0, boxes)
        missed = _gt(1, {t: BOX_C for t in range(10)})
        snapshots = self._snapshots(range(10), boxes)
        full = coverage_objective(snapshots, [covered], 5, 2.0)
        assert full > 0
        assert coverage_objective(snapshots, [covered, missed], 5, 2.0) == pytest.approx(0.5 * full)

    def test_only_top_k_are_eligible(self):
        boxes = {t: BOX_A for t in range(10)}
        snapshots = {t: [CoverageCandidate(0, 0.5, boxes), CoverageCandidate(1, -2.0, {})] for t in range(10)}
        assert coverage_objective(snapshots, [_gt(0, boxes)], 1, 2.0) == 0.0
        assert coverage_objective(snapshots, [_gt(0, boxes)], 2, 2.0) > 0.0

    def test_top_k_order(self):
        candidates = [CoverageCandidate(3, -1.0, {}), CoverageCandidate(1, -1.0, {}), CoverageCandidate(2, -3.0, {})]
        assert [c.id for c in top_k(candidates, 2)] == [2, 1]
