"""geometry"""

import functools
import logging
from dataclasses import dataclass

import numpy as np

from src import rle_mask
from src.errors import DimensionMismatchError, InvalidInputError, NoPlaneError

logger = logging.getLogger(__name__)

# Fraction of mask pixels with valid depth below which prediction falls back
# to a 2D shift of the mask.
MIN_VALID_DEPTH_FRACTION = 0.2


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Pinhole intrinsics. Camera frame: x right, y up, z forward.

    Attributes:
        fx (float): Horizontal focal length, pixels.
        fy (float): Vertical focal length, pixels.
        cx (float): Principal point column.
        cy (float): Principal point row.
    """

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive: {self.fx}, {self.fy}")

    def project(self, points):
        """
        Projects camera-frame points to image coordinates.

        Args:
            points (np.ndarray): (N, 3) points with z > 0.

        Returns:
            tuple: (u, v) arrays of column and row coordinates.
        """
        points = np.atleast_2d(points)
        z = points[:, 2]
        u = self.cx + self.fx * points[:, 0] / z
        v = self.cy - self.fy * points[:, 1] / z
        return u, v

    def backproject(self, u, v, z):
        """Inverse projection of pixel coordinates at depth z to (N, 3) points."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        z = np.asarray(z, dtype=float)
        x = (u - self.cx) * z / self.fx
        y = -(v - self.cy) * z / self.fy
        return np.stack([x, y, z], axis=-1)


def rotation_about_y(angle):
    """Rotation matrix of a yaw by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """
    Rotation followed by translation: x -> R x + t.

    Attributes:
        rotation (np.ndarray): (3, 3) orthonormal matrix with determinant +1.
        translation (np.ndarray): (3,) translation in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(rot) - 1) > 1e-6:
            raise InvalidInputError("rotation is not orthonormal with determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, translation):
        return cls(np.eye(3), translation)

    def compose(self, other):
        """Transform applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self):
        rot_t = self.rotation.T
        return RigidTransform(rot_t, -rot_t @ self.translation)

    def apply(self, points):
        """Maps (N, 3) points (or a single 3-vector)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vector(self, vectors):
        """Rotates directions without translating them."""
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def to_dict(self):
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            rotation = np.array(data["rotation"], dtype=float)
            translation = np.array(data["translation"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad transform record: {exc}") from exc
        if rotation.size != 9 or translation.size != 3:
            raise InvalidInputError("transform needs 9 rotation and 3 translation values")
        return cls(rotation.reshape(3, 3), translation)


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """
    Plane {x : n.x + d = 0} with unit normal n.

    Attributes:
        normal (np.ndarray): Unit normal, pointing to the camera side.
        offset (float): d, meters.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise InvalidInputError("ground plane normal must have unit length")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_coefficients(cls, normal, offset):
        """
        Builds a plane from unnormalized coefficients of a camera-frame plane,
        oriented so the camera center lies on the positive side.
        """
        normal = np.asarray(normal, dtype=float)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise NoPlaneError("degenerate plane normal")
        normal = normal / norm
        offset = float(offset) / norm
        if offset < 0:
            normal, offset = -normal, -offset
        return cls(normal, offset)

    def signed_distance(self, points):
        """Height of points above the plane (positive on the camera side)."""
        return np.asarray(points, dtype=float) @ self.normal + self.offset

    def project(self, points):
        """Orthogonal projection onto the plane."""
        points = np.asarray(points, dtype=float)
        dist = self.signed_distance(points)
        return points - np.multiply.outer(dist, self.normal)

    def transformed(self, transform):
        """The same plane expressed in the target frame of `transform`."""
        normal = transform.rotation @ self.normal
        return GroundPlane(normal, self.offset - normal @ transform.translation)

    def to_dict(self):
        return {"normal": [float(v) for v in self.normal], "d": self.offset}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.from_coefficients(np.array(data["normal"], dtype=float), float(data["d"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad ground plane record: {exc}") from exc


@dataclass(frozen=True, eq=False)
class DepthMap:
    """
    Per-pixel metric depth; non-finite or non-positive values are invalid.

    Attributes:
        values (np.ndarray): (height, width) float array.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise InvalidInputError(f"depth map must be 2D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def valid(self):
        """Boolean grid of usable depths."""
        return np.isfinite(self.values) & (self.values > 0)

    @functools.cached_property
    def valid_flat(self):
        return self.valid().ravel()


def fit_ground_plane(points, iterations=200, inlier_threshold=0.05, seed=0):
    """
    RANSAC plane fit followed by a least-squares refit on the inliers.

    Args:
        points (np.ndarray): (N, 3) camera-frame points.
        iterations (int): Number of sampled triples.
        inlier_threshold (float): Max point-plane distance of an inlier, meters.
        seed (int): Seed of the triple sampler.

    Returns:
        GroundPlane: Plane with the largest inlier support.

    Raises:
        NoPlaneError: Fewer than 3 points, or every sampled triple is degenerate.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 3:
        raise NoPlaneError(f"need at least 3 points, got {len(points)}")
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = 0
    for _ in range(iterations):
        p0, p1, p2 = points[rng.choice(len(points), size=3, replace=False)]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-9:
            continue
        normal /= norm
        inliers = np.abs(points @ normal - normal @ p0) <= inlier_threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count, best_inliers = count, inliers
    if best_inliers is None:
        raise NoPlaneError("all sampled triples are degenerate")
    support = points[best_inliers]
    centroid = support.mean(axis=0)
    _, _, vh = np.linalg.svd(support - centroid)
    normal = vh[-1]
    plane = GroundPlane.from_coefficients(normal, -normal @ centroid)
    logger.debug("ground plane fit: %d/%d inliers", best_count, len(points))
    return plane


def masked_pixels(m, depth):
    """
    Rows and columns of mask pixels carrying a valid depth.

    Raises:
        DimensionMismatchError: If mask and depth map differ in size.
    """
    if m.shape != depth.shape:
        raise DimensionMismatchError(f"mask {m.shape} and depth {depth.shape} differ")
    flat = m.flat_indices()
    return np.divmod(flat[depth.valid_flat[flat]], m.width)


def lift_mask(m, depth, intr):
    """
    Lifts every mask pixel with valid depth into the camera frame.

    Args:
        m (RleMask): Mask to lift.
        depth (DepthMap): Depth of the mask's frame.
        intr (CameraIntrinsics): Camera model.

    Returns:
        np.ndarray: (N, 3) camera-frame points.
    """
    rows, cols = masked_pixels(m, depth)
    return intr.backproject(cols, rows, depth.values[rows, cols])


def rasterize(points, intr, height, width):
    """
    Splats camera-frame points onto the nearest pixel; no hole filling.

    Returns:
        RleMask: Mask of the hit pixels (empty when nothing lands in view).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    points = points[points[:, 2] > 1e-6]
    if len(points) == 0:
        return rle_mask.empty(height, width)
    u, v = intr.project(points)
    cols = np.rint(u).astype(np.int64)
    rows = np.rint(v).astype(np.int64)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    return rle_mask.from_indices(height, width, rows[inside] * width + cols[inside])


def _planar_motion(t_ego, v_prio):
    velocity = RigidTransform.from_translation([v_prio[0], 0.0, v_prio[1]])
    return t_ego.compose(velocity)


def predict_mask(m_star, depth, intr, t_ego, v_prio, anchor=None):
    """
    Predicts the mask of the next frame: project(T_ego . T_v . lift(m*)).

    Points are lifted with the depth of m*'s frame, moved by the planar
    velocity (vertical component zero) and by the ego-motion, projected and
    splatted back to the pixel grid. When less than
    `MIN_VALID_DEPTH_FRACTION` of the mask has depth (or no depth map is
    given) the mask is shifted in 2D by the projected motion of `anchor`.

    Args:
        m_star (RleMask): Last associated or predicted mask.
        depth (DepthMap or None): Depth of m*'s frame.
        intr (CameraIntrinsics): Camera model.
        t_ego (RigidTransform): Camera t-1 to camera t.
        v_prio (tuple): Planar velocity (vx, vz) in the camera frame of m*, m/frame.
        anchor (np.ndarray, optional): 3D reference point of the object in the
            camera frame of m*, used by the 2D fallback.

    Returns:
        RleMask: Predicted mask, possibly empty.
    """
    height, width = m_star.shape
    if m_star.is_empty():
        return rle_mask.empty(height, width)
    motion = _planar_motion(t_ego, v_prio)
    if depth is not None:
        points = lift_mask(m_star, depth, intr)
        if len(points) >= MIN_VALID_DEPTH_FRACTION * m_star.area:
            return rasterize(motion.apply(points), intr, height, width)
    return _shift_by_anchor(m_star, intr, motion, anchor)


def _shift_by_anchor(m_star, intr, motion, anchor):
    if anchor is None:
        return m_star
    anchor = np.asarray(anchor, dtype=float).reshape(1, 3)
    moved = motion.apply(anchor)
    if anchor[0, 2] <= 1e-6 or moved[0, 2] <= 1e-6:
        return rle_mask.empty(*m_star.shape)
    u0, v0 = intr.project(anchor)
    u1, v1 = intr.project(moved)
    dx = int(np.rint(u1[0] - u0[0]))
    dy = int(np.rint(v1[0] - v0[0]))
    return m_star.translate(dx, dy)


def project_to_ground(p, plane):
    """Orthogonal projection of a point onto the ground plane."""
    return plane.project(p)


def bbox_3d(points):
    """
    Axis-aligned 3D extent of a point set.

    Returns:
        tuple or None: (min_xyz, max_xyz) arrays, None for an empty set.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        return None
    return points.min(axis=0), points.max(axis=0)
