import numpy as np
import pytest

from src import rle_mask
from src.geometry import CameraIntrinsics, DepthMap, GroundPlane, RigidTransform
from src.observations import FrameContext, Observation
from src.tracker import Hypothesis, KalmanState, TrackerParams, TrackFrame

H, W = 60, 80
INTRINSICS = CameraIntrinsics(100.0, 100.0, 40.0, 30.0)
FLAT_GROUND = GroundPlane(np.array([0.0, 1.0, 0.0]), 1.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_ctx():
    def _make(frame=0, depth=None, plane=FLAT_GROUND, flow=None, ego=None, cam_to_world=None):
        if np.isscalar(depth):
            depth = DepthMap(np.full((H, W), float(depth)))
        return FrameContext(
            frame,
            ego if ego is not None else RigidTransform.identity(),
            INTRINSICS,
            H,
            W,
            ground_plane=plane,
            depth=depth,
            flow=flow,
            cam_to_world=cam_to_world if cam_to_world is not None else RigidTransform.identity(),
        )

    return _make


@pytest.fixture
def box():
    def _box(x, y, w, h):
        return rle_mask.from_box(H, W, (x, y, w, h))

    return _box


@pytest.fixture
def make_observation():
    def _make(mask, pos=(0.0, -0.85, 10.0), vel=(0.0, 0.0), score=0.9, index=0, class_scores=None):
        return Observation(np.array(pos), np.array(vel), mask, score, class_scores, index)

    return _make


@pytest.fixture
def make_hypothesis():
    """Hypothesis over consecutive frames from a list of masks."""

    def _make(hid, masks, start=0, created=None, score=0.9, sim=1.0, class_scores=None):
        frames = [
            TrackFrame(
                start + k,
                m,
                False,
                obs_index=0,
                score=score,
                sim=sim,
                class_scores=class_scores,
                pos=np.zeros(3),
                vel=np.zeros(2),
            )
            for k, m in enumerate(masks)
        ]
        state = KalmanState.initial(np.zeros(3), np.zeros(2), TrackerParams())
        return Hypothesis(hid, start if created is None else created, frames, state)

    return _make


def _random_mask(rng, height, width, density=None):
    """Random noise with a few filled or cleared rectangles."""
    dense = rng.random((height, width)) < (rng.uniform(0.05, 0.6) if density is None else density)
    for _ in range(rng.integers(0, 4)):
        r0, c0 = rng.integers(0, height), rng.integers(0, width)
        dense[r0 : r0 + rng.integers(1, height + 1), c0 : c0 + rng.integers(1, width + 1)] = rng.random() < 0.5
    return dense


@pytest.fixture
def random_mask():
    return _random_mask
