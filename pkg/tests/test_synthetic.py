from dataclasses import replace

import numpy as np
import pytest

from src.errors import InvalidInputError
from src.geometry import RigidTransform
from src.pipeline.io import write_json
from src.synthetic import (
    MERGED_SCORE,
    TRUE_SCORE,
    ObjectSpec,
    ScenarioSpec,
    camera_poses,
    generate,
    load_scenario,
    occlusion_gap,
    single_static,
    two_crossing,
)


def _proposal_summary(bundle):
    return [[(p.mask.to_dict(), p.score) for p in f.proposals] for f in bundle.sequence.frames]


class TestGenerate:
    def test_is_deterministic(self):
        spec = replace(two_crossing(), frames=12)
        assert _proposal_summary(generate(spec)) == _proposal_summary(generate(spec))

    def test_seed_changes_corruption(self):
        spec = replace(two_crossing(), frames=12)
        assert _proposal_summary(generate(spec)) != _proposal_summary(generate(replace(spec, seed=8)))

    def test_clean_scenario_gives_one_proposal_per_frame(self):
        bundle = generate(single_static())
        gt = {row["frame"]: row for row in bundle.sequence.ground_truth}
        for f in bundle.sequence.frames:
            assert len(f.proposals) == 1
            assert f.proposals[0].score == TRUE_SCORE
            assert list(f.proposals[0].mask.bbox()) == gt[f.frame]["bbox"]

    def test_ground_truth_position_is_camera_bottom_point(self):
        bundle = generate(single_static())
        first = bundle.sequence.ground_truth[0]
        assert first["frame"] == 0
        np.testing.assert_allclose(first["pos"], [0.5, -1.6, 12.0])
        np.testing.assert_allclose(bundle.truth[(0, 0)], [0.5, -1.6, 12.0])

    def test_depth_under_object(self):
        bundle = generate(single_static())
        frame = bundle.sequence.frames[0]
        rows, cols = np.nonzero(frame.proposals[0].mask.decode())
        np.testing.assert_allclose(frame.depth.values[rows, cols], 12.0, rtol=1e-6)

    def test_full_dropout(self):
        bundle = generate(replace(single_static(), dropout=1.0))
        assert all(not f.proposals for f in bundle.sequence.frames)
        assert bundle.stats["dropped"] == bundle.stats["visible"] == 30
        assert len(bundle.sequence.ground_truth) == 30

    def test_corruption_rates(self):
        spec = replace(single_static(), frames=300, dropout=0.2, over_segmentation=0.3)
        stats = generate(spec).stats
        assert stats["visible"] == 300
        assert stats["dropped"] / stats["visible"] == pytest.approx(0.2, abs=0.07)
        kept = stats["visible"] - stats["dropped"]
        assert stats["over_segmented"] / kept == pytest.approx(0.3, abs=0.08)

    def test_clutter_count(self):
        bundle = generate(replace(single_static(), frames=5, clutter=7))
        assert all(len(f.proposals) == 8 for f in bundle.sequence.frames)
        assert all(p.score < TRUE_SCORE for f in bundle.sequence.frames for p in f.proposals[1:])

    def test_under_segmentation_merges_adjacent_objects(self):
        spec = ScenarioSpec(
            frames=3,
            objects=[ObjectSpec(0, start=(-0.9, 12.0)), ObjectSpec(1, start=(0.9, 12.0))],
            under_segmentation=1.0,
        )
        bundle = generate(spec)
        for f in bundle.sequence.frames:
            assert [p.score for p in f.proposals] == [MERGED_SCORE]
        assert bundle.stats["under_segmented"] == 3

    def test_occlusion_removes_ground_truth(self):
        frames = {row["frame"] for row in generate(occlusion_gap()).sequence.ground_truth}
        assert frames.isdisjoint(range(15, 19))
        assert {14, 19} <= frames

    def test_ego_motion_chains_to_camera_poses(self):
        spec = replace(two_crossing(), frames=8, camera_yaw_rate=0.01)
        sequence = generate(spec).sequence
        poses = camera_poses(spec)
        cam_to_world = RigidTransform.identity()
        for f in sequence.frames[1:]:
            cam_to_world = cam_to_world.compose(f.ego_motion.inverse())
            np.testing.assert_allclose(cam_to_world.rotation, poses[f.frame].rotation, atol=1e-9)
            np.testing.assert_allclose(cam_to_world.translation, poses[f.frame].translation, atol=1e-9)


class TestScenarioSpec:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            ScenarioSpec(dropout=1.5)
        with pytest.raises(InvalidInputError):
            ScenarioSpec(objects=[ObjectSpec(0), ObjectSpec(0)])

    def test_load_by_name_and_file(self, tmp_path):
        assert load_scenario("two-crossing").name == "two-crossing"
        path = tmp_path / "scenario.json"
        write_json(path, replace(single_static(), name="from-file").to_dict())
        spec = load_scenario(str(path))
        assert spec.name == "from-file"
        assert spec.objects[0].start == [0.5, 12.0]

    def test_unknown_scenario(self):
        with pytest.raises(InvalidInputError):
            load_scenario("no-such-scenario")
