"""observations"""

import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from src import rle_mask
from src.errors import InvalidInputError, ObservationRejected
from src.geometry import RigidTransform, masked_pixels
from src.utils import box_overlap_matrix

logger = logging.getLogger(__name__)


@dataclass
class ObservationParams:
    """
    Hyperparameters of observation building.

    Attributes:
        nms_iou (float): Mask IoU above which a lower-scored proposal is suppressed.
        h_min (float): Lowest accepted height above the ground plane, meters.
        h_max (float): Highest accepted height above the ground plane, meters.
        max_observations (int): K, the per-frame observation cap.
        min_depth_pixels (int): Valid depth pixels required under a mask.
    """

    nms_iou: float = 0.7
    h_min: float = 0.2
    h_max: float = 3.0
    max_observations: int = 100
    min_depth_pixels: int = 10

    def __post_init__(self):
        if not 0.0 <= self.nms_iou <= 1.0:
            raise InvalidInputError(f"nms_iou must lie in [0, 1], got {self.nms_iou}")
        if self.h_min > self.h_max:
            raise InvalidInputError("h_min must not exceed h_max")
        if self.max_observations < 0 or self.min_depth_pixels < 1:
            raise InvalidInputError("max_observations must be >= 0 and min_depth_pixels >= 1")


@dataclass(eq=False)
class Proposal:
    """
    One raw region proposal as read from a frame file.

    Attributes:
        mask (RleMask): Proposal mask.
        score (float): Proposal confidence in [0, 1].
        pos (np.ndarray, optional): Precomputed world position (bypass mode).
        vel (np.ndarray, optional): Precomputed planar world velocity (vx, vz).
        class_scores (dict, optional): label -> classifier confidence.
        index (int): Position of the proposal in its frame file.
    """

    mask: rle_mask.RleMask
    score: float
    pos: np.ndarray = None
    vel: np.ndarray = None
    class_scores: dict = None
    index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"proposal score {self.score} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Tracker input: o = [p, v, m, s] plus optional class scores.

    Attributes:
        pos (np.ndarray): World position (x, y, z), meters.
        vel (np.ndarray): Planar world velocity (vx, vz), m/frame.
        mask (RleMask): Non-empty mask.
        score (float): Proposal confidence in [0, 1].
        class_scores (dict, optional): label -> confidence in [0, 1].
        index (int): Source proposal index in the frame file.
    """

    pos: np.ndarray
    vel: np.ndarray
    mask: rle_mask.RleMask
    score: float
    class_scores: dict = None
    index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=float).reshape(3)
        vel = np.asarray(self.vel, dtype=float).reshape(2)
        if not np.all(np.isfinite(pos)):
            raise InvalidInputError("observation position must be finite")
        if self.mask.is_empty():
            raise InvalidInputError("observation mask is empty")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"observation score {self.score} outside [0, 1]")
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "vel", vel)

    @functools.cached_property
    def bbox(self):
        return self.mask.bbox()

    def best_class(self):
        """(label, confidence) of the most confident class, or (None, None)."""
        if not self.class_scores:
            return None, None
        label = max(sorted(self.class_scores), key=lambda k: self.class_scores[k])
        return label, float(self.class_scores[label])


@dataclass(eq=False)
class FrameContext:
    """
    Everything known about one frame besides its proposals.

    Attributes:
        frame (int): Frame index.
        ego_motion (RigidTransform): Camera t-1 to camera t.
        intrinsics (CameraIntrinsics): Camera model.
        height (int): Image rows.
        width (int): Image columns.
        ground_plane (GroundPlane, optional): Ground plane in camera frame t.
        depth (DepthMap, optional): Depth of frame t.
        flow (np.ndarray, optional): (h, w, 2) planar displacement (dx, dz) per
            pixel since the previous frame, camera frame t.
        cam_to_world (RigidTransform): Pose of camera t in the world
            (camera frame of frame 0).
    """

    frame: int
    ego_motion: RigidTransform
    intrinsics: object
    height: int
    width: int
    ground_plane: object = None
    depth: object = None
    flow: np.ndarray = None
    cam_to_world: RigidTransform = field(default_factory=RigidTransform.identity)

    @functools.cached_property
    def world_to_cam(self):
        return self.cam_to_world.inverse()

    @functools.cached_property
    def world_ground_plane(self):
        if self.ground_plane is None:
            return None
        return self.ground_plane.transformed(self.cam_to_world)

    def velocity_to_camera(self, vel):
        """World planar velocity (vx, vz) expressed in this camera frame."""
        v = self.world_to_cam.apply_vector([vel[0], 0.0, vel[1]])
        return (float(v[0]), float(v[2]))


@dataclass
class FrameReport:
    """Per-frame bookkeeping of observation building."""

    frame: int
    proposals: int = 0
    observations: int = 0
    ground_plane_missing: bool = False
    rejected: list = field(default_factory=list)

    def reject(self, index, reason):
        self.rejected.append({"index": int(index), "reason": reason})
        logger.debug("frame %d: proposal %d rejected (%s)", self.frame, index, reason)

    def to_dict(self):
        return {
            "proposals": self.proposals,
            "observations": self.observations,
            "ground_plane_missing": self.ground_plane_missing,
            "rejected": list(self.rejected),
        }


def nms_proposals(proposals, iou_threshold):
    """
    Greedy mask NMS in descending score order.

    Args:
        proposals (list): Items with `mask` and `score`.
        iou_threshold (float): A proposal whose IoU with an already kept one
            exceeds this value is suppressed.

    Returns:
        list: Survivors in descending score order (ties keep input order).
    """
    ordered = sorted(proposals, key=lambda p: -p.score)
    kept = []
    kept_boxes = np.zeros((0, 4))
    for prop in ordered:
        box = prop.mask.bbox()
        if box is None:
            continue
        suppressed = False
        for j in np.flatnonzero(box_overlap_matrix(box, kept_boxes)):
            if rle_mask.iou(prop.mask, kept[j].mask) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(prop)
            kept_boxes = np.vstack([kept_boxes, box])
    return kept


def geometric_filter(observations, ctx, h_min, h_max, report=None):
    """
    Keeps observations that stick out of the ground by [h_min, h_max] meters.

    Height is the signed distance of the observation's position to the
    frame's ground plane. Without a ground plane the filter is skipped and
    the report is flagged.

    Args:
        observations (list): Observations with world positions.
        ctx (FrameContext): Frame geometry.
        h_min (float): Lower height bound, meters.
        h_max (float): Upper height bound, meters.
        report (FrameReport, optional): Receives rejections and the flag.

    Returns:
        list: The surviving observations, order preserved.
    """
    if ctx.ground_plane is None:
        logger.warning("frame %d: no ground plane, height filter skipped", ctx.frame)
        if report is not None:
            report.ground_plane_missing = True
        return list(observations)
    kept = []
    for obs in observations:
        height = float(ctx.ground_plane.signed_distance(ctx.world_to_cam.apply(obs.pos)))
        if h_min <= height <= h_max:
            kept.append(obs)
        elif report is not None:
            report.reject(obs.index, f"height {height:.2f} m outside [{h_min}, {h_max}]")
    return kept


def extract_pos_vel(mask, ctx, min_pixels=10):
    """
    Median 3D position and planar velocity under a mask.

    Args:
        mask (RleMask): Proposal mask.
        ctx (FrameContext): Frame with depth and optional flow.
        min_pixels (int): Valid depth pixels required.

    Returns:
        tuple: (pos, vel) in the world frame.

    Raises:
        ObservationRejected: Missing depth or too few valid depth pixels.
    """
    if ctx.depth is None:
        raise ObservationRejected("no depth map")
    rows, cols = masked_pixels(mask, ctx.depth)
    if len(rows) < min_pixels:
        raise ObservationRejected(f"{len(rows)} valid depth pixels (< {min_pixels})")
    points = ctx.intrinsics.backproject(cols, rows, ctx.depth.values[rows, cols])
    pos = ctx.cam_to_world.apply(np.median(points, axis=0))
    return pos, _median_velocity(ctx, rows, cols)


def _median_velocity(ctx, rows, cols):
    if ctx.flow is None or len(rows) == 0:
        return np.zeros(2)
    dx, dz = np.median(ctx.flow[rows, cols], axis=0)
    world = ctx.cam_to_world.apply_vector([dx, 0.0, dz])
    return np.array([world[0], world[2]])


def _to_observation(prop, ctx, params):
    if prop.pos is not None:
        pos = prop.pos
        if prop.vel is not None:
            vel = prop.vel
        elif ctx.depth is not None:
            vel = _median_velocity(ctx, *masked_pixels(prop.mask, ctx.depth))
        else:
            vel = np.zeros(2)
    else:
        pos, vel = extract_pos_vel(prop.mask, ctx, params.min_depth_pixels)
    return Observation(pos, vel, prop.mask, prop.score, prop.class_scores, prop.index)


def build_observation_set(proposals, ctx, params, report=None):
    """
    Proposals of one frame to at most K observations.

    NMS, then position/velocity extraction (or pass-through of precomputed
    values), then the height filter, then the top-K cut.

    Args:
        proposals (list): Proposal objects of the frame.
        ctx (FrameContext): Frame geometry.
        params (ObservationParams): Building hyperparameters.
        report (FrameReport, optional): Receives counts and rejections.

    Returns:
        list: Observations in non-increasing score order.
    """
    if report is None:
        report = FrameReport(ctx.frame)
    report.proposals = len(proposals)
    nonempty = []
    for prop in proposals:
        if prop.mask.is_empty():
            report.reject(prop.index, "empty mask")
        else:
            nonempty.append(prop)
    survivors = nms_proposals(nonempty, params.nms_iou)
    surviving = {id(prop) for prop in survivors}
    for prop in nonempty:
        if id(prop) not in surviving:
            report.reject(prop.index, "suppressed by NMS")
    candidates = []
    for prop in survivors:
        if prop.mask.shape != (ctx.height, ctx.width):
            raise InvalidInputError(
                f"frame {ctx.frame}: proposal {prop.index} mask size {prop.mask.shape} "
                f"differs from image size {(ctx.height, ctx.width)}"
            )
        try:
            candidates.append(_to_observation(prop, ctx, params))
        except ObservationRejected as exc:
            report.reject(prop.index, exc.reason)
    kept = geometric_filter(candidates, ctx, params.h_min, params.h_max, report)
    for obs in kept[params.max_observations :]:
        report.reject(obs.index, "beyond top-K")
    kept = kept[: params.max_observations]
    report.observations = len(kept)
    return kept
