"""Deterministic geometric operators: boxes, projections, distances, angles.

Conventions (fixed once, used everywhere):
  * World frame is gravity-aligned, +Z up.
  * Camera frame: +Z forward (optical axis), +X right, +Y down.
    Poses are stored camera-to-world.
  * Angles are degrees in (-180, 180], counterclockwise-positive when
    viewed from +Z ("counterclockwise" and "left" name the same turn).
  * Points with camera-frame depth <= NEAR_PLANE do not project.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateVector, EmptyPointSet

NEAR_PLANE = 0.01

# Canonical direction tokens, in rendering order.
DIRECTION_TOKENS = ("front", "back", "left", "right", "up", "down")
_OPPOSITE = {"front": "back", "back": "front", "left": "right",
             "right": "left", "up": "down", "down": "up"}


@dataclass(frozen=True)
class Box3:
    """Axis-aligned box in the world frame."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ValueError("min_corner must be <= max_corner component-wise")

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.min_corner, self.max_corner))

    @property
    def longest_edge(self) -> float:
        return max(self.extents)

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((lo + hi) / 2.0 for lo, hi in zip(self.min_corner, self.max_corner))


class DirectionSet:
    """Non-empty set of direction tokens with opposing pairs excluded."""

    __slots__ = ("components",)

    def __init__(self, components):
        toks = frozenset(components)
        if not toks:
            raise ValueError("DirectionSet may not be empty")
        for tok in toks:
            if tok not in DIRECTION_TOKENS:
                raise ValueError(f"unknown direction token: {tok!r}")
            if _OPPOSITE[tok] in toks:
                raise ValueError(f"mutually exclusive tokens: {tok}/{_OPPOSITE[tok]}")
        object.__setattr__(self, "components", toks)

    def __eq__(self, other):
        return isinstance(other, DirectionSet) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __iter__(self):
        return iter(self.ordered())

    def __contains__(self, tok):
        return tok in self.components

    def __len__(self):
        return len(self.components)

    def ordered(self) -> list[str]:
        return [t for t in DIRECTION_TOKENS if t in self.components]

    def __repr__(self):
        return f"DirectionSet({self.ordered()})"


@dataclass(frozen=True)
class RelativePose:
    """Pose of one camera expressed in another camera's frame."""

    rotation: np.ndarray     # 3x3, orthonormal within 1e-6
    translation: np.ndarray  # 3-vector, meters

    def __post_init__(self):
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation not orthonormal (err={err:g})")


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise EmptyPointSet(f"expected non-empty (N, 3) points, got shape {pts.shape}")
    return pts


def fit_aabb(points) -> Box3:
    """Tight axis-aligned bounding box of a non-empty point set."""
    pts = _as_points(points)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Box3(tuple(float(v) for v in lo), tuple(float(v) for v in hi))


# Above this many pairs, route through a KD-tree; the tree computes each
# candidate distance with the same float64 ops as the brute scan, so the
# result is bit-identical either way.
_BRUTE_PAIR_LIMIT = 16384


def nearest_point_distance(a, b) -> float:
    """Exact minimum Euclidean distance over all point pairs."""
    pa = _as_points(a)
    pb = _as_points(b)
    if pa.shape[0] * pb.shape[0] <= _BRUTE_PAIR_LIMIT:
        d2 = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.min()))
    if pa.shape[0] > pb.shape[0]:  # build on the larger cloud, query the smaller
        pa, pb = pb, pa
    tree = cKDTree(pb)
    dist, _ = tree.query(pa)
    return float(dist.min())


def world_to_camera(frame, points) -> np.ndarray:
    """Map world points into the camera frame (x right, y down, z forward).

    Written as explicit component sums (not matmul) so scalar and batched
    callers produce bit-identical values.
    """
    pts = _as_points(points)
    rot, t = frame.rotation, frame.translation
    d = pts - t
    out = np.empty_like(pts)
    for j in range(3):
        out[:, j] = d[:, 0] * rot[0, j] + d[:, 1] * rot[1, j] + d[:, 2] * rot[2, j]
    return out


def project_point(frame, p) -> tuple[float, float, float] | None:
    """Pinhole projection of a world point.

    Returns (u, v, depth) in pixels/meters, or None when the camera-frame
    depth is at or behind the near plane.
    """
    p_cam = world_to_camera(frame, p)[0]
    z = float(p_cam[2])
    if z <= NEAR_PLANE:
        return None
    fx, fy, cx, cy = frame.intrinsics
    u = fx * float(p_cam[0]) / z + cx
    v = fy * float(p_cam[1]) / z + cy
    return (u, v, z)


def back_project(frame, u: float, v: float, depth: float) -> np.ndarray:
    """Inverse of project_point: pixel + depth back to a world point."""
    fx, fy, cx, cy = frame.intrinsics
    p_cam = np.array([(u - cx) * depth / fx, (v - cy) * depth / fy, depth])
    return frame.rotation @ p_cam + frame.translation


def project_points(frame, points) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection: (u, v, depth) arrays plus a validity mask.

    A point is valid when its depth exceeds the near plane AND it lands
    inside the image rectangle; u/v are only meaningful where depth is
    beyond the near plane.
    """
    p_cam = world_to_camera(frame, points)
    z = p_cam[:, 2]
    fx, fy, cx, cy = frame.intrinsics
    w, h = frame.image_size
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * p_cam[:, 0] / z + cx
        v = fy * p_cam[:, 1] / z + cy
    valid = (z > NEAR_PLANE) & (u >= 0.0) & (u < w) & (v >= 0.0) & (v < h)
    return u, v, z, valid


def median_instance_depth(scene, frame, instance) -> float | None:
    """Median camera-frame depth over the instance's visible points.

    Visible = depth beyond the near plane and projected inside the image.
    Even-sized lists use the lower median so the value is an observed depth.
    Returns None when no point is visible.
    """
    pts = scene.instance_points(instance.instance_id)
    _, _, depth, valid = project_points(frame, pts)
    vis = np.sort(depth[valid])
    if vis.size == 0:
        return None
    return float(vis[(vis.size - 1) // 2])


def _normalize_deg(theta: float) -> float:
    """Fold into (-180, 180]."""
    theta = math.fmod(theta, 360.0)
    if theta <= -180.0:
        theta += 360.0
    elif theta > 180.0:
        theta -= 360.0
    return theta


def horizontal_signed_angle(facing, target) -> float:
    """Signed horizontal angle from `facing` to `target`, degrees.

    Both vectors are projected to the XY plane first; counterclockwise
    (viewed from +Z) is positive. Raises DegenerateVector when either
    vector has no horizontal component.
    """
    fx, fy = float(facing[0]), float(facing[1])
    tx, ty = float(target[0]), float(target[1])
    if fx == 0.0 and fy == 0.0:
        raise DegenerateVector("facing vector has zero horizontal projection")
    if tx == 0.0 and ty == 0.0:
        raise DegenerateVector("target vector has zero horizontal projection")
    cross = fx * ty - fy * tx
    dot = fx * tx + fy * ty
    return _normalize_deg(math.degrees(math.atan2(cross, dot)))


def quadrant_label(theta: float) -> str:
    """Map an angle in (-180, 180] onto {front, left, back, right}.

    Boundary ownership: +45 belongs to left, -45 to right, +/-135 to back's
    neighbors (left/right own nothing at 135; back owns [135, 180] and
    (-180, -135)); front is the open interval (-45, 45).
    """
    if not -180.0 < theta <= 180.0:
        raise ValueError(f"theta outside (-180, 180]: {theta}")
    if -45.0 < theta < 45.0:
        return "front"
    if 45.0 <= theta < 135.0:
        return "left"
    if -135.0 <= theta <= -45.0:
        return "right"
    return "back"


# Sector-8 layout: 45-degree slices (lo, hi] of phi = atan2(x, z).
_SECTORS = (
    (-22.5, 22.5, ("front",)),
    (22.5, 67.5, ("front", "right")),
    (67.5, 112.5, ("right",)),
    (112.5, 157.5, ("back", "right")),
    (-67.5, -22.5, ("front", "left")),
    (-112.5, -67.5, ("left",)),
    (-157.5, -112.5, ("back", "left")),
)


def sector8_direction(x: float, z: float) -> DirectionSet:
    """Camera-centric direction of a point at (x right, z forward).

    Eight 45-degree sectors; diagonal sectors return compound sets.
    """
    if x == 0.0 and z == 0.0:
        raise DegenerateVector("direction undefined at the camera center")
    phi = _normalize_deg(math.degrees(math.atan2(x, z)))
    for lo, hi, toks in _SECTORS:
        if lo < phi <= hi:
            return DirectionSet(toks)
    return DirectionSet(("back",))  # (157.5, 180] and (-180, -157.5]


def relative_pose(frame_a, frame_b) -> RelativePose:
    """Pose of frame B's camera expressed in frame A's camera frame."""
    ra, ta = frame_a.rotation, frame_a.translation
    rb, tb = frame_b.rotation, frame_b.translation
    return RelativePose(rotation=ra.T @ rb, translation=ra.T @ (tb - ta))


def yaw_delta(frame_a, frame_b) -> float:
    """Signed horizontal rotation from A's forward axis to B's, degrees."""
    return horizontal_signed_angle(frame_a.forward_axis(), frame_b.forward_axis())


def polygon_area(vertices) -> float:
    """Shoelace area of a simple polygon given as (N, 2) vertices."""
    vs = np.asarray(vertices, dtype=np.float64)
    if vs.ndim != 2 or vs.shape[0] < 3 or vs.shape[1] != 2:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    total = 0.0
    n = vs.shape[0]
    for i in range(n):
        x0, y0 = vs[i]
        x1, y1 = vs[(i + 1) % n]
        total += float(x0) * float(y1) - float(x1) * float(y0)
    return abs(total) * 0.5
