"""synthetic"""

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from src import rle_mask
from src.errors import InvalidInputError
from src.geometry import CameraIntrinsics, DepthMap, GroundPlane, RigidTransform, rotation_about_y
from src.observations import Proposal
from src.pipeline.io import FrameInput, SequenceInput, read_json
from src.utils import boxes_overlap

logger = logging.getLogger(__name__)

TRUE_SCORE = 0.9
SPLIT_SCORE = 0.6
MERGED_SCORE = 0.5
CLASS_CONFIDENCE = 0.8
MIN_RENDER_DEPTH = 0.5


@dataclass
class ObjectSpec:
    """
    A box standing on the ground, moving at constant planar velocity.

    Attributes:
        id (int): Ground truth id.
        label (str): Category.
        size (tuple): (width, height) in meters.
        start (tuple): World ground position (x, z) at frame 0.
        velocity (tuple): World planar velocity (vx, vz), m/frame.
        occluded (list): Inclusive (first, last) frame ranges where the
            object is hidden.
    """

    id: int
    label: str = "car"
    size: tuple = (1.8, 1.5)
    start: tuple = (0.0, 12.0)
    velocity: tuple = (0.0, 0.0)
    occluded: list = field(default_factory=list)

    def position(self, frame):
        return np.array(self.start, dtype=float) + frame * np.array(self.velocity, dtype=float)

    def hidden(self, frame):
        return any(first <= frame <= last for first, last in self.occluded)


@dataclass
class ScenarioSpec:
    """
    A fully seeded synthetic sequence.

    The camera starts at the world origin at `camera_height` above a flat
    ground and drives along its heading at `camera_speed` while turning by
    `camera_yaw_rate`. Objects are rendered as upright rectangles at the
    depth of their center, in front of a flat backdrop.
    """

    name: str = "custom"
    seed: int = 0
    frames: int = 30
    width: int = 320
    height: int = 160
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 160.0
    cy: float = 80.0
    camera_height: float = 1.6
    camera_speed: float = 0.0
    camera_yaw_rate: float = 0.0
    backdrop: float = 60.0
    objects: list = field(default_factory=list)
    over_segmentation: float = 0.0
    under_segmentation: float = 0.0
    dropout: float = 0.0
    clutter: int = 0
    jitter: int = 0
    position_noise: float = 0.0
    class_scores: bool = False
    min_visible_pixels: int = 20

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        for name in ("over_segmentation", "under_segmentation", "dropout"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")
        if self.frames < 1 or self.clutter < 0 or self.jitter < 0 or self.position_noise < 0:
            raise InvalidInputError("frames must be >= 1; clutter, jitter and noise >= 0")
        if len({o.id for o in self.objects}) != len(self.objects):
            raise InvalidInputError("object ids must be unique")

    @property
    def intrinsics(self):
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidInputError(f"bad scenario: {exc}") from exc


@dataclass(eq=False)
class ScenarioBundle:
    """
    Generated sequence plus what only the generator knows.

    Attributes:
        sequence (SequenceInput): Pipeline input, ground truth rows included.
        truth (dict): (object id, frame) -> world bottom point of visible objects.
        stats (Counter): Corruption event counts.
    """

    sequence: SequenceInput
    truth: dict
    stats: Counter


def camera_poses(spec):
    """cam_to_world of every frame; frame 0 is the world."""
    poses = []
    yaw = 0.0
    position = np.zeros(3)
    for frame in range(spec.frames):
        if frame:
            position = position + rotation_about_y(yaw) @ np.array([0.0, 0.0, spec.camera_speed])
            yaw += spec.camera_yaw_rate
        poses.append(RigidTransform(rotation_about_y(yaw), position))
    return poses


def _background_depth(spec):
    rows = np.arange(spec.height, dtype=float)[:, None] - spec.cy
    with np.errstate(divide="ignore"):
        ground = np.where(rows > 0, spec.camera_height * spec.fy / rows, np.inf)
    return np.broadcast_to(np.minimum(ground, spec.backdrop), (spec.height, spec.width)).copy()


def _pixel_rect(spec, center, width, height):
    # inclusive pixel bounds of an upright rectangle centered at a camera-frame point
    z = center[2]
    u0 = spec.cx + spec.fx * (center[0] - width / 2) / z
    u1 = spec.cx + spec.fx * (center[0] + width / 2) / z
    v0 = spec.cy - spec.fy * (center[1] + height / 2) / z
    v1 = spec.cy - spec.fy * (center[1] - height / 2) / z
    c0, c1 = max(int(np.ceil(u0)), 0), min(int(np.floor(u1)), spec.width - 1)
    r0, r1 = max(int(np.ceil(v0)), 0), min(int(np.floor(v1)), spec.height - 1)
    if c0 > c1 or r0 > r1:
        return None
    return r0, r1, c0, c1


def render_frame(spec, frame, cam_to_world, rng):
    """
    Depth, flow and the visible pixels of every object at one frame.

    Returns:
        tuple: (depth, flow, visible) with `visible` mapping object id to a
        dense boolean mask.
    """
    world_to_cam = cam_to_world.inverse()
    depth = _background_depth(spec)
    flow = np.zeros((spec.height, spec.width, 2))
    owner = np.full((spec.height, spec.width), -1)
    placed = []
    for obj in spec.objects:
        if obj.hidden(frame):
            continue
        width, height = obj.size
        x, z = obj.position(frame)
        center = world_to_cam.apply([x, -spec.camera_height + height / 2, z])
        if center[2] < MIN_RENDER_DEPTH:
            continue
        rect = _pixel_rect(spec, center, width, height)
        if rect is None:
            continue
        noise = rng.normal(0.0, spec.position_noise) if spec.position_noise > 0 else 0.0
        placed.append((center[2], obj, rect, max(center[2] + noise, MIN_RENDER_DEPTH)))
    # far to near, so nearer objects overwrite
    for _, obj, (r0, r1, c0, c1), z_render in sorted(placed, key=lambda item: (-item[0], item[1].id)):
        motion = world_to_cam.apply_vector([obj.velocity[0], 0.0, obj.velocity[1]])
        owner[r0 : r1 + 1, c0 : c1 + 1] = obj.id
        depth[r0 : r1 + 1, c0 : c1 + 1] = z_render
        flow[r0 : r1 + 1, c0 : c1 + 1] = (motion[0], motion[2])
    visible = {obj.id: owner == obj.id for obj in spec.objects}
    return depth, flow, visible


def _jitter(dense, amount, rng):
    # moves each bbox edge of the mask in or out by up to `amount` pixels
    shifts = rng.integers(-amount, amount + 1, size=4)
    rows = np.flatnonzero(dense.any(axis=1))
    cols = np.flatnonzero(dense.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1], cols[0], cols[-1]
    out = dense.copy()
    h, w = dense.shape
    top, bottom, left, right = (int(s) for s in shifts)
    if top < 0:
        out[r0 : r0 - top] = False
    elif top > 0:
        out[max(r0 - top, 0) : r0] = dense[r0]
    if bottom < 0:
        out[r1 + bottom + 1 : r1 + 1] = False
    elif bottom > 0:
        out[r1 + 1 : min(r1 + 1 + bottom, h)] = dense[r1]
    if left < 0:
        out[:, c0 : c0 - left] = False
    elif left > 0:
        out[:, max(c0 - left, 0) : c0] = out[:, c0 : c0 + 1]
    if right < 0:
        out[:, c1 + right + 1 : c1 + 1] = False
    elif right > 0:
        out[:, c1 + 1 : min(c1 + 1 + right, w)] = out[:, c1 : c1 + 1]
    return out if out.any() else dense


def _split(dense):
    cols = np.flatnonzero(dense.any(axis=0))
    middle = (cols[0] + cols[-1] + 1) // 2
    left, right = dense.copy(), dense.copy()
    left[:, middle:] = False
    right[:, :middle] = False
    return [half for half in (left, right) if half.any()]


def _expanded(box, pixels=1):
    x, y, w, h = box
    return (x - pixels, y - pixels, w + 2 * pixels, h + 2 * pixels)


def corrupt_frame(spec, frame, visible, rng, stats):
    """
    Proposals of one frame from the visible object masks.

    Each visible object may be merged with an adjacent one, dropped, split
    into two vertical halves or reported whole; its mask edges are
    jittered. Random clutter rectangles are appended.

    Returns:
        list: Proposal objects, indexed in file order.
    """
    objects = [o for o in spec.objects if visible[o.id].sum() >= spec.min_visible_pixels]
    boxes = {o.id: rle_mask.encode(visible[o.id]).bbox() for o in objects}
    regions = []
    merged = set()
    for i, a in enumerate(objects):
        for b in objects[i + 1 :]:
            if a.id in merged or b.id in merged:
                continue
            if not boxes_overlap(_expanded(boxes[a.id]), _expanded(boxes[b.id])):
                continue
            stats["adjacent_pairs"] += 1
            if rng.random() < spec.under_segmentation:
                stats["under_segmented"] += 1
                merged.update((a.id, b.id))
                regions.append((visible[a.id] | visible[b.id], MERGED_SCORE, None))
    for obj in objects:
        if obj.id in merged:
            continue
        stats["visible"] += 1
        if rng.random() < spec.dropout:
            stats["dropped"] += 1
            continue
        classes = {obj.label: CLASS_CONFIDENCE} if spec.class_scores else None
        if rng.random() < spec.over_segmentation:
            stats["over_segmented"] += 1
            regions.extend((half, SPLIT_SCORE, classes) for half in _split(visible[obj.id]))
        else:
            regions.append((visible[obj.id], TRUE_SCORE, classes))
    proposals = []
    for dense, score, classes in regions:
        if spec.jitter:
            dense = _jitter(dense, spec.jitter, rng)
        proposals.append(Proposal(rle_mask.encode(dense), score, class_scores=classes, index=len(proposals)))
    for _ in range(spec.clutter):
        w = int(rng.integers(4, 31))
        h = int(rng.integers(4, 31))
        x = int(rng.integers(0, spec.width - w + 1))
        y = int(rng.integers(0, spec.height - h + 1))
        score = float(rng.uniform(0.05, 0.5))
        mask = rle_mask.from_box(spec.height, spec.width, (x, y, w, h))
        proposals.append(Proposal(mask, score, index=len(proposals)))
    stats["clutter"] += spec.clutter
    return proposals


def generate(spec):
    """
    Renders a scenario into pipeline inputs.

    Depth and flow are exact apart from the configured position noise;
    ground truth boxes are the boxes of the uncorrupted visible masks and
    ground truth positions are bottom points in the camera frame.

    Args:
        spec (ScenarioSpec): Scenario.

    Returns:
        ScenarioBundle: The sequence, world truth and corruption counts.
    """
    rng = np.random.default_rng(spec.seed)
    poses = camera_poses(spec)
    plane = GroundPlane(np.array([0.0, 1.0, 0.0]), spec.camera_height)
    frames = []
    gt_rows = []
    truth = {}
    stats = Counter()
    for frame, pose in enumerate(poses):
        depth, flow, visible = render_frame(spec, frame, pose, rng)
        proposals = corrupt_frame(spec, frame, visible, rng, stats)
        world_to_cam = pose.inverse()
        for obj in spec.objects:
            if visible[obj.id].sum() < spec.min_visible_pixels:
                continue
            x, z = obj.position(frame)
            bottom = np.array([x, -spec.camera_height, z])
            truth[(obj.id, frame)] = bottom
            gt_rows.append(
                {
                    "frame": frame,
                    "id": obj.id,
                    "label": obj.label,
                    "bbox": list(rle_mask.encode(visible[obj.id]).bbox()),
                    "pos": [round(float(v), 6) for v in world_to_cam.apply(bottom)],
                }
            )
        ego = RigidTransform.identity() if frame == 0 else world_to_cam.compose(poses[frame - 1])
        frames.append(
            FrameInput(frame, proposals, ego, ground_plane=plane, depth=DepthMap(depth), flow=flow)
        )
    for obj in spec.objects:
        if not any(key[0] == obj.id for key in truth):
            logger.warning("scenario %s: object %d is never visible", spec.name, obj.id)
    logger.info(
        "scenario %s: %d frames, %d proposals, %d ground truth boxes",
        spec.name,
        spec.frames,
        sum(len(f.proposals) for f in frames),
        len(gt_rows),
    )
    sequence = SequenceInput(
        spec.name, spec.intrinsics, spec.width, spec.height, frames, ground_truth=gt_rows
    )
    return ScenarioBundle(sequence, truth, stats)


def single_static():
    return ScenarioSpec(
        name="single-static",
        seed=1,
        frames=30,
        objects=[ObjectSpec(0, "car", start=(0.5, 12.0))],
    )


def two_crossing():
    return ScenarioSpec(
        name="two-crossing",
        seed=7,
        frames=100,
        camera_speed=0.03,
        objects=[
            ObjectSpec(0, "car", size=(1.8, 1.5), start=(-5.0, 14.0), velocity=(0.1, 0.0)),
            ObjectSpec(1, "pedestrian", size=(0.7, 1.7), start=(5.0, 17.0), velocity=(-0.1, 0.0)),
        ],
        over_segmentation=0.2,
        dropout=0.1,
        clutter=5,
    )


def occlusion_gap():
    return ScenarioSpec(
        name="occlusion-gap",
        seed=3,
        frames=40,
        objects=[ObjectSpec(0, "car", start=(0.5, 12.0), velocity=(0.03, 0.0), occluded=[(15, 18)])],
    )


def clutter_storm():
    return ScenarioSpec(
        name="clutter-storm",
        seed=11,
        frames=200,
        camera_speed=0.02,
        objects=[
            ObjectSpec(0, "car", start=(-3.0, 15.0), velocity=(0.02, 0.0)),
            ObjectSpec(1, "car", start=(3.5, 20.0), velocity=(-0.02, -0.02)),
            ObjectSpec(2, "pedestrian", size=(0.7, 1.7), start=(0.5, 10.0), velocity=(0.0, 0.01)),
        ],
        dropout=0.05,
        clutter=160,
        jitter=1,
    )


SCENARIOS = {
    "single-static": single_static,
    "two-crossing": two_crossing,
    "occlusion-gap": occlusion_gap,
    "clutter-storm": clutter_storm,
}


def load_scenario(name_or_path):
    """
    A catalog scenario by name, or a scenario JSON file.

    Raises:
        InvalidInputError: Unknown name and no readable file.
    """
    if name_or_path in SCENARIOS:
        return SCENARIOS[name_or_path]()
    path = Path(name_or_path)
    if not path.is_file():
        raise InvalidInputError(
            f"unknown scenario {name_or_path!r}; known: {', '.join(sorted(SCENARIOS))}"
        )
    data = read_json(path)
    data.pop("schema", None)
    return ScenarioSpec.from_dict(data)
