"""Deterministic ground-truth synthesis for all 16 tasks.

Every solver is a pure function of the scene assets. Solvers raise
SolverUnavailable when a required input is missing and DegeneratePremise
when the question is geometrically uninformative; the pipeline converts
both into stage-6 failures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (DirectionSet, median_instance_depth,
                       nearest_point_distance, horizontal_signed_angle,
                       project_point, quadrant_label, relative_pose,
                       sector8_direction, world_to_camera, yaw_delta)
from .errors import DegenerateVector
from .scene import GroundedPools, Scene
from .tasks import (ContextRef, ELEVATION_BAND, GroundTruth, GroundTruthKind,
                    TaskType)

ROTATION_DOMINANCE_DEG = 15.0   # yaw at or above this wins over translation
SV_PIXEL_BAND = 0.03            # min |offset| / image dimension per axis
DEPTH_SAME_BAND = 0.05          # relative median-depth difference -> same
VISIBILITY_SAME_BAND = 0.05     # visible-fraction difference -> same


class SolverUnavailable(Exception):
    """Required metadata, pose, anchor, or visible geometry is missing."""


class DegeneratePremise(Exception):
    """The premise is physically valid but carries no usable signal."""


@dataclass(frozen=True)
class SceneContext:
    """Bundle handed to solvers: one scene, its pools, the active context."""

    scene: Scene
    pools: GroundedPools
    context: ContextRef

    def frame(self, position: int):
        return self.scene.frame(self.context.frame_ids[position])

    def reference_frame_id(self, params: dict) -> int:
        ref = params.get("reference_image")
        if ref not in (1, 2):
            raise SolverUnavailable(f"reference image unresolved: {ref!r}")
        if len(self.context.frame_ids) != 2:
            raise SolverUnavailable("image-pair context required")
        return self.context.frame_ids[ref - 1]


def _unique_instance(env: SceneContext, label: str):
    matches = env.scene.instances_of(label)
    if len(matches) != 1:
        raise SolverUnavailable(
            f"label {label!r} binds {len(matches)} instances, need exactly 1")
    return matches[0]


def _frame_bound_instance(env: SceneContext, frame_id: int, label: str):
    binding = env.pools.frame_label_instances.get(frame_id, {}).get(label, [])
    if len(binding) != 1:
        raise SolverUnavailable(
            f"label {label!r} binds {len(binding)} visible instances in "
            f"frame {frame_id}, need exactly 1")
    return env.scene.instance(binding[0])


def _point3(p) -> list[float]:
    return [float(v) for v in p]


def solve(task: TaskType, params: dict, env: SceneContext
          ) -> tuple[GroundTruth, list[tuple[str, object]]]:
    """Ground truth plus named intermediate geometric states."""
    fn = _SOLVERS[task]
    return fn(params, env)


def _solve_object_counting(params, env):
    label = params["target"]
    count = len(env.scene.instances_of(label))
    if count == 0:
        raise DegeneratePremise(f"no instance of {label!r} in the scene")
    gt = GroundTruth(kind=GroundTruthKind.COUNT, value=count)
    return gt, [("count:" + label, count)]


def _solve_object_size(params, env):
    inst = _unique_instance(env, params["target"])
    edge_cm = inst.aabb.longest_edge * 100.0
    gt = GroundTruth(kind=GroundTruthKind.METRIC, value=float(edge_cm), unit="cm")
    inter = [("aabb_min:" + inst.label, _point3(inst.aabb.min_corner)),
             ("aabb_max:" + inst.label, _point3(inst.aabb.max_corner))]
    return gt, inter


def _solve_absolute_distance(params, env):
    inst_a = _unique_instance(env, params["object_a"])
    inst_b = _unique_instance(env, params["object_b"])
    pts_a = env.scene.instance_points(inst_a.instance_id)
    pts_b = env.scene.instance_points(inst_b.instance_id)
    dist = nearest_point_distance(pts_a, pts_b)
    # locate the achieving pair for the intermediates record
    d2 = np.sum((pts_a[:, None, :] - pts_b[None, :, :]) ** 2, axis=-1) \
        if pts_a.shape[0] * pts_b.shape[0] <= 250_000 else None
    inter = [("nearest_distance_m", float(dist))]
    if d2 is not None:
        i, j = np.unravel_index(int(d2.argmin()), d2.shape)
        inter.append(("nearest_point:" + inst_a.label, _point3(pts_a[i])))
        inter.append(("nearest_point:" + inst_b.label, _point3(pts_b[j])))
    gt = GroundTruth(kind=GroundTruthKind.METRIC, value=float(dist), unit="m")
    return gt, inter


def _solve_relative_distance(params, env):
    anchor = _unique_instance(env, params["anchor"])
    anchor_pts = env.scene.instance_points(anchor.instance_id)
    best_label, best_d = None, None
    inter = []
    for label in sorted(params["candidates"]):
        inst = _unique_instance(env, label)
        d = nearest_point_distance(anchor_pts,
                                   env.scene.instance_points(inst.instance_id))
        inter.append(("distance_m:" + label, float(d)))
        if best_d is None or d < best_d:
            best_label, best_d = label, d
    gt = GroundTruth(kind=GroundTruthKind.LABEL, value=best_label)
    return gt, inter


def _solve_relative_direction(params, env):
    a = env.scene.instance_centroid(_unique_instance(env, params["anchor"]).instance_id)
    b = env.scene.instance_centroid(_unique_instance(env, params["facing"]).instance_id)
    c = env.scene.instance_centroid(_unique_instance(env, params["target"]).instance_id)
    try:
        theta = horizontal_signed_angle(b - a, c - a)
    except DegenerateVector as exc:
        raise DegeneratePremise(str(exc)) from exc
    label = quadrant_label(theta)
    gt = GroundTruth(kind=GroundTruthKind.DIRECTION, value=DirectionSet((label,)))
    inter = [("centroid:" + params["anchor"], _point3(a)),
             ("centroid:" + params["facing"], _point3(b)),
             ("centroid:" + params["target"], _point3(c)),
             ("signed_angle_deg", float(theta))]
    return gt, inter


def _solve_room_size(params, env):
    meta = env.scene.metadata
    if meta is None or not meta.room_area > 0:
        raise SolverUnavailable("room area metadata missing")
    gt = GroundTruth(kind=GroundTruthKind.METRIC, value=float(meta.room_area),
                     unit="m^2")
    return gt, [("room_area_m2", float(meta.room_area))]


def _solve_sv_relative_direction(params, env):
    frame = env.frame(0)
    ref = _frame_bound_instance(env, frame.frame_id, params["reference"])
    tgt = _frame_bound_instance(env, frame.frame_id, params["target"])
    proj_ref = project_point(frame, env.scene.instance_centroid(ref.instance_id))
    proj_tgt = project_point(frame, env.scene.instance_centroid(tgt.instance_id))
    if proj_ref is None or proj_tgt is None:
        raise SolverUnavailable("instance centroid projects behind the camera")
    w, h = frame.image_size
    du = (proj_tgt[0] - proj_ref[0]) / w
    dv = (proj_tgt[1] - proj_ref[1]) / h
    toks = []
    if abs(du) >= SV_PIXEL_BAND:
        toks.append("right" if du > 0 else "left")
    if abs(dv) >= SV_PIXEL_BAND:
        toks.append("down" if dv > 0 else "up")  # image v grows downward
    if not toks:
        raise DegeneratePremise(
            f"pixel offsets below the {SV_PIXEL_BAND:.0%} band on both axes")
    gt = GroundTruth(kind=GroundTruthKind.DIRECTION, value=DirectionSet(toks))
    inter = [("pixel:" + params["reference"], [float(proj_ref[0]), float(proj_ref[1])]),
             ("pixel:" + params["target"], [float(proj_tgt[0]), float(proj_tgt[1])]),
             ("offset_fraction", [float(du), float(dv)])]
    return gt, inter


def _solve_camera_object_distance(params, env):
    frame = env.frame(0)
    inst = _frame_bound_instance(env, frame.frame_id, params["target"])
    pts = env.scene.instance_points(inst.instance_id)
    center = frame.camera_center
    dist = nearest_point_distance(pts, center[None, :])
    gt = GroundTruth(kind=GroundTruthKind.METRIC, value=float(dist), unit="m")
    inter = [("camera_center", _point3(center)),
             ("min_distance_m", float(dist))]
    return gt, inter


def _solve_depth_order(params, env):
    frame = env.frame(0)
    label_a, label_b = params["object_a"], params["object_b"]
    inst_a = _frame_bound_instance(env, frame.frame_id, label_a)
    inst_b = _frame_bound_instance(env, frame.frame_id, label_b)
    da = median_instance_depth(env.scene, frame, inst_a)
    db = median_instance_depth(env.scene, frame, inst_b)
    if da is None or db is None:
        raise SolverUnavailable("no visible depth for one of the objects")
    rel = abs(da - db) / min(da, db)
    if rel < DEPTH_SAME_BAND:
        value = "same"
    else:
        value = "obj1" if da < db else "obj2"
    gt = GroundTruth(kind=GroundTruthKind.TERNARY, value=value,
                     object_a=label_a, object_b=label_b)
    inter = [("median_depth:" + label_a, float(da)),
             ("median_depth:" + label_b, float(db)),
             ("relative_difference", float(rel))]
    return gt, inter


def _solve_cam_cam_position(params, env):
    ref_id = env.reference_frame_id(params)
    other_id = [f for f in env.context.frame_ids if f != ref_id][0]
    rel = relative_pose(env.scene.frame(ref_id), env.scene.frame(other_id))
    x, z = float(rel.translation[0]), float(rel.translation[2])
    try:
        direction = sector8_direction(x, z)
    except DegenerateVector as exc:
        raise DegeneratePremise("camera centers coincide horizontally") from exc
    gt = GroundTruth(kind=GroundTruthKind.DIRECTION, value=direction)
    inter = [("relative_rotation", [[float(v) for v in row] for row in rel.rotation]),
             ("relative_translation", _point3(rel.translation))]
    return gt, inter


def _solve_cam_cam_elevation(params, env):
    ref_id = env.reference_frame_id(params)
    other_id = [f for f in env.context.frame_ids if f != ref_id][0]
    dz = float(env.scene.frame(ref_id).camera_center[2]) \
        - float(env.scene.frame(other_id).camera_center[2])
    if abs(dz) < ELEVATION_BAND:
        raise DegeneratePremise(
            f"camera height difference {abs(dz):.3f} m is inside the "
            f"{ELEVATION_BAND} m same-level band")
    value = "higher" if dz > 0 else "lower"
    gt = GroundTruth(kind=GroundTruthKind.ELEVATION, value=value)
    return gt, [("delta_z_m", dz)]


def _solve_visibility_comparison(params, env):
    label = params["target"]
    f, g = env.context.frame_ids
    v_min = env.pools.v_min

    def label_fraction(fid):
        fractions = env.pools.frame_visibility.get(fid, {})
        best = 0.0
        for inst in env.scene.instances_of(label):
            best = max(best, fractions.get(inst.instance_id, 0.0))
        return best

    v1, v2 = label_fraction(f), label_fraction(g)
    if v1 < v_min and v2 < v_min:
        value = "neither"
    elif abs(v1 - v2) < VISIBILITY_SAME_BAND:
        value = "same"
    else:
        value = "image1" if v1 > v2 else "image2"
    gt = GroundTruth(kind=GroundTruthKind.VISIBILITY, value=value)
    inter = [("visible_fraction:image1", float(v1)),
             ("visible_fraction:image2", float(v2))]
    return gt, inter


def _camera_centric_direction(env, ref_id: int, label: str):
    inst = _frame_bound_instance(env, ref_id, label)
    centroid = env.scene.instance_centroid(inst.instance_id)
    frame = env.scene.frame(ref_id)
    cam = world_to_camera(frame, centroid)[0]
    x, z = float(cam[0]), float(cam[2])
    try:
        direction = sector8_direction(x, z)
    except DegenerateVector as exc:
        raise DegeneratePremise("target sits at the camera center") from exc
    inter = [("centroid:" + label, _point3(centroid)),
             ("camera_frame_xz", [x, z])]
    return direction, inter


def _solve_cam_obj_position(params, env):
    ref_id = env.reference_frame_id(params)
    direction, inter = _camera_centric_direction(env, ref_id, params["target"])
    return GroundTruth(kind=GroundTruthKind.DIRECTION, value=direction), inter


def _solve_cam_region_position(params, env):
    ref_id = env.reference_frame_id(params)
    anchor = params.get("resolved_anchor")
    if anchor is None:
        from .questions import default_ontology, resolve_region
        anchors = env.pools.region_anchors.get(ref_id, frozenset())
        anchor = resolve_region(params.get("region") or "", default_ontology(),
                                anchors)
    if anchor is None:
        raise SolverUnavailable(
            f"region {params.get('region')!r} resolves to no anchor in "
            f"frame {ref_id}")
    direction, inter = _camera_centric_direction(env, ref_id, anchor)
    inter.insert(0, ("region_anchor", anchor))
    return GroundTruth(kind=GroundTruthKind.DIRECTION, value=direction), inter


def _solve_camera_motion(params, env):
    frame_a = env.frame(0)
    frame_b = env.frame(1)
    try:
        yaw = yaw_delta(frame_a, frame_b)
    except DegenerateVector as exc:
        raise SolverUnavailable(f"forward axis has no horizontal part: {exc}") from exc
    inter = [("yaw_delta_deg", float(yaw))]
    if abs(yaw) >= ROTATION_DOMINANCE_DEG:
        tok = "left" if yaw > 0 else "right"  # counterclockwise turns left
        gt = GroundTruth(kind=GroundTruthKind.MOTION, value=DirectionSet((tok,)))
        return gt, inter
    rel = relative_pose(frame_a, frame_b)
    t = rel.translation
    inter.append(("relative_translation", _point3(t)))
    axis = int(np.argmax(np.abs(t)))
    magnitude = float(abs(t[axis]))
    if magnitude < 1e-6:
        raise DegeneratePremise("camera neither turns nor moves")
    component = float(t[axis])
    tok = {
        0: "right" if component > 0 else "left",
        1: "down" if component > 0 else "up",   # camera +Y points down
        2: "front" if component > 0 else "back",
    }[axis]
    gt = GroundTruth(kind=GroundTruthKind.MOTION, value=DirectionSet((tok,)))
    return gt, inter


def _solve_attribute_measurement(params, env):
    # the pair-non-ambiguous pool guarantees both frames bind the same
    # instance, so binding through the first frame is enough
    f = env.context.frame_ids[0]
    label_a, label_b = params["object_a"], params["object_b"]
    edges = {}
    inter = []
    for label in (label_a, label_b):
        inst = _frame_bound_instance(env, f, label)
        edges[label] = inst.aabb.longest_edge
        inter.append(("longest_edge_m:" + label, float(edges[label])))
    if edges[label_a] == edges[label_b]:
        winner = min(label_a, label_b)  # deterministic on exact ties
    else:
        winner = label_a if edges[label_a] > edges[label_b] else label_b
    gt = GroundTruth(kind=GroundTruthKind.LABEL, value=winner)
    return gt, inter


_SOLVERS = {
    TaskType.OBJECT_COUNTING: _solve_object_counting,
    TaskType.OBJECT_SIZE: _solve_object_size,
    TaskType.ABSOLUTE_DISTANCE: _solve_absolute_distance,
    TaskType.RELATIVE_DISTANCE: _solve_relative_distance,
    TaskType.RELATIVE_DIRECTION: _solve_relative_direction,
    TaskType.ROOM_SIZE: _solve_room_size,
    TaskType.SV_RELATIVE_DIRECTION: _solve_sv_relative_direction,
    TaskType.CAMERA_OBJECT_DISTANCE: _solve_camera_object_distance,
    TaskType.DEPTH_ORDER: _solve_depth_order,
    TaskType.CAM_CAM_POSITION: _solve_cam_cam_position,
    TaskType.CAM_CAM_ELEVATION: _solve_cam_cam_elevation,
    TaskType.VISIBILITY_COMPARISON: _solve_visibility_comparison,
    TaskType.CAM_OBJ_POSITION: _solve_cam_obj_position,
    TaskType.CAM_REGION_POSITION: _solve_cam_region_position,
    TaskType.CAMERA_MOTION: _solve_camera_motion,
    TaskType.ATTRIBUTE_MEASUREMENT: _solve_attribute_measurement,
}
