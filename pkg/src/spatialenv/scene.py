"""Scene assets: labeled instance point clouds, camera frames, grounded pools.

On-disk format (one directory per scene):
  scene.json  manifest: scene id, instance table (label + point span),
              frame table (16 pose floats row-major, intrinsics, image size),
              metadata (room area, source tag)
  points.bin  little-endian records: 3 x float32 xyz then uint32 instance id

Scenes and pools are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentAsset, MalformedAsset
from .geometry import fit_aabb, project_points, Box3

MANIFEST_FORMAT = "spatialenv-scene/1"
MIN_V_MIN = 0.1

_POINT_DTYPE = np.dtype([("xyz", "<f4", (3,)), ("iid", "<u4")])


@dataclass(frozen=True)
class Frame:
    """A posed pinhole camera. Pose is camera-to-world; +Z forward, +Y down."""

    frame_id: int
    pose_camera_to_world: np.ndarray  # 4x4
    intrinsics: tuple[float, float, float, float]  # fx, fy, cx, cy (pixels)
    image_size: tuple[int, int]  # width, height

    def __post_init__(self):
        pose = np.asarray(self.pose_camera_to_world, dtype=np.float64)
        if pose.shape != (4, 4):
            raise InconsistentAsset(f"frame {self.frame_id}: pose must be 4x4")
        object.__setattr__(self, "pose_camera_to_world", pose)
        rot = pose[:3, :3]
        err = float(np.abs(rot @ rot.T - np.eye(3)).max())
        if err > 1e-6:
            raise InconsistentAsset(
                f"frame {self.frame_id}: rotation not orthonormal (err={err:g})")
        fx, fy, cx, cy = self.intrinsics
        w, h = self.image_size
        if fx <= 0 or fy <= 0:
            raise InconsistentAsset(f"frame {self.frame_id}: focal lengths must be positive")
        if not (0 <= cx < w and 0 <= cy < h):
            raise InconsistentAsset(f"frame {self.frame_id}: principal point outside image")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose_camera_to_world[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.pose_camera_to_world[:3, 3]

    @property
    def camera_center(self) -> np.ndarray:
        return self.translation

    def forward_axis(self) -> np.ndarray:
        """Camera +Z (optical axis) in world coordinates."""
        return self.rotation[:, 2]


@dataclass(frozen=True)
class Instance:
    instance_id: int
    label: str
    point_start: int
    point_count: int
    aabb: Box3

    @property
    def point_index_range(self) -> tuple[int, int]:
        return (self.point_start, self.point_start + self.point_count)


@dataclass(frozen=True)
class SceneMetadata:
    room_area: float  # square meters
    source: str = "synthetic"

    def __post_init__(self):
        if not self.room_area > 0:
            raise InconsistentAsset(f"room_area must be positive, got {self.room_area}")


@dataclass(frozen=True)
class Scene:
    scene_id: str
    points: np.ndarray        # (N, 3) float64, world meters
    instance_ids: np.ndarray  # (N,) uint32, parallel to points
    instances: tuple[Instance, ...]
    frames: tuple[Frame, ...]
    metadata: SceneMetadata

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "instance_ids", np.asarray(self.instance_ids, dtype=np.uint32))
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "frames", tuple(self.frames))
        self.points.setflags(write=False)
        self.instance_ids.setflags(write=False)
        _validate_scene(self)

    def instance(self, instance_id: int) -> Instance:
        inst = self._by_id.get(instance_id)
        if inst is None:
            raise KeyError(f"no instance {instance_id} in scene {self.scene_id}")
        return inst

    def frame(self, frame_id: int) -> Frame:
        fr = self._frame_by_id.get(frame_id)
        if fr is None:
            raise KeyError(f"no frame {frame_id} in scene {self.scene_id}")
        return fr

    def instance_points(self, instance_id: int) -> np.ndarray:
        inst = self.instance(instance_id)
        return self.points[inst.point_start:inst.point_start + inst.point_count]

    def instance_centroid(self, instance_id: int) -> np.ndarray:
        return self.instance_points(instance_id).mean(axis=0)

    def instances_of(self, label: str) -> list[Instance]:
        return [i for i in self.instances if i.label == label]

    def labels(self) -> set[str]:
        return {i.label for i in self.instances}


def _validate_scene(scene: Scene) -> None:
    if not scene.scene_id:
        raise InconsistentAsset("scene_id must be non-empty")
    if scene.points.ndim != 2 or scene.points.shape[1] != 3:
        raise InconsistentAsset("points must be (N, 3)")
    if scene.instance_ids.shape != (scene.points.shape[0],):
        raise InconsistentAsset("instance_ids must parallel points")
    by_id: dict[int, Instance] = {}
    labels_seen = set()
    for inst in scene.instances:
        if inst.instance_id in by_id:
            raise InconsistentAsset(f"duplicate instance_id {inst.instance_id}")
        if not inst.label or inst.label != inst.label.lower():
            raise InconsistentAsset(
                f"instance {inst.instance_id}: label must be non-empty lowercase, "
                f"got {inst.label!r}")
        if inst.point_count < 1:
            raise InconsistentAsset(f"instance {inst.instance_id}: owns no points")
        lo, hi = inst.point_index_range
        if lo < 0 or hi > scene.points.shape[0]:
            raise InconsistentAsset(f"instance {inst.instance_id}: point span out of range")
        span_ids = scene.instance_ids[lo:hi]
        if not bool((span_ids == inst.instance_id).all()):
            raise InconsistentAsset(
                f"instance {inst.instance_id}: points.bin ids disagree with span")
        by_id[inst.instance_id] = inst
        labels_seen.add(inst.label)
    known = set(by_id)
    present = set(np.unique(scene.instance_ids).tolist()) if scene.points.shape[0] else set()
    orphan = present - known
    if orphan:
        raise InconsistentAsset(f"points reference missing instance ids: {sorted(orphan)}")
    # Plural forms are an asset error when they collide with a singular label.
    for lbl in labels_seen:
        if lbl.endswith("s") and lbl[:-1] in labels_seen:
            raise InconsistentAsset(
                f"label {lbl!r} looks like the plural of {lbl[:-1]!r}; normalize assets")
    frame_ids = [f.frame_id for f in scene.frames]
    if len(frame_ids) != len(set(frame_ids)):
        raise InconsistentAsset("duplicate frame ids")
    # Recompute AABBs to confirm the cached boxes.
    for inst in scene.instances:
        pts = scene.points[inst.point_start:inst.point_start + inst.point_count]
        box = fit_aabb(pts)
        if box.min_corner != inst.aabb.min_corner or box.max_corner != inst.aabb.max_corner:
            raise InconsistentAsset(f"instance {inst.instance_id}: cached aabb is stale")
    object.__setattr__(scene, "_by_id", by_id)
    object.__setattr__(scene, "_frame_by_id", {f.frame_id: f for f in scene.frames})


def scene_from_instances(scene_id, labeled_clouds, frames, room_area,
                         source="synthetic") -> Scene:
    """Assemble a Scene from (label, points) pairs, packing point spans."""
    chunks = []
    ids = []
    instances = []
    cursor = 0
    for iid, (label, pts) in enumerate(labeled_clouds):
        pts = np.asarray(pts, dtype=np.float64)
        n = pts.shape[0]
        instances.append(Instance(
            instance_id=iid, label=label, point_start=cursor, point_count=n,
            aabb=fit_aabb(pts)))
        chunks.append(pts)
        ids.append(np.full(n, iid, dtype=np.uint32))
        cursor += n
    return Scene(
        scene_id=scene_id,
        points=np.concatenate(chunks, axis=0),
        instance_ids=np.concatenate(ids, axis=0),
        instances=tuple(instances),
        frames=tuple(frames),
        metadata=SceneMetadata(room_area=room_area, source=source),
    )


# ---------------------------------------------------------------------------
# Asset I/O
# ---------------------------------------------------------------------------

def _require(manifest: dict, key: str, kind, where: str):
    if key not in manifest:
        raise MalformedAsset(f"{where}: missing key {key!r}")
    value = manifest[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise MalformedAsset(f"{where}: {key!r} must be a number")
        return float(value)
    if not isinstance(value, kind):
        raise MalformedAsset(f"{where}: {key!r} must be {kind.__name__}")
    return value


def load_scene(path) -> Scene:
    """Load and fully validate a scene asset directory."""
    manifest_path = os.path.join(path, "scene.json")
    points_path = os.path.join(path, "points.bin")
    if not os.path.isfile(manifest_path):
        raise MalformedAsset(f"no scene.json under {path}")
    if not os.path.isfile(points_path):
        raise MalformedAsset(f"no points.bin under {path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedAsset(f"scene.json is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise MalformedAsset("scene.json: top level must be an object")
    fmt = manifest.get("format")
    if fmt != MANIFEST_FORMAT:
        raise MalformedAsset(f"unsupported manifest format: {fmt!r}")
    scene_id = _require(manifest, "scene_id", str, "scene.json")

    raw = np.fromfile(points_path, dtype=_POINT_DTYPE)
    points = raw["xyz"].astype(np.float64)
    instance_ids = raw["iid"].astype(np.uint32)

    instances = []
    for i, entry in enumerate(_require(manifest, "instances", list, "scene.json")):
        where = f"instances[{i}]"
        if not isinstance(entry, dict):
            raise MalformedAsset(f"{where}: must be an object")
        iid = _require(entry, "instance_id", int, where)
        label = _require(entry, "label", str, where)
        start = _require(entry, "point_start", int, where)
        count = _require(entry, "point_count", int, where)
        if start < 0 or count < 1 or start + count > points.shape[0]:
            raise InconsistentAsset(f"{where}: span [{start}, {start + count}) out of range")
        instances.append(Instance(
            instance_id=iid, label=label, point_start=start, point_count=count,
            aabb=fit_aabb(points[start:start + count])))

    frames = []
    for i, entry in enumerate(_require(manifest, "frames", list, "scene.json")):
        where = f"frames[{i}]"
        if not isinstance(entry, dict):
            raise MalformedAsset(f"{where}: must be an object")
        fid = _require(entry, "frame_id", int, where)
        pose_flat = _require(entry, "pose_camera_to_world", list, where)
        if len(pose_flat) != 16:
            raise MalformedAsset(f"{where}: pose must have 16 floats")
        intr = _require(entry, "intrinsics", list, where)
        if len(intr) != 4:
            raise MalformedAsset(f"{where}: intrinsics must be [fx, fy, cx, cy]")
        size = _require(entry, "image_size", list, where)
        if len(size) != 2:
            raise MalformedAsset(f"{where}: image_size must be [width, height]")
        try:
            pose = np.array([float(v) for v in pose_flat],
                            dtype=np.float64).reshape(4, 4)
            intrinsics = tuple(float(v) for v in intr)
            image_size = (int(size[0]), int(size[1]))
        except (TypeError, ValueError) as exc:
            raise MalformedAsset(f"{where}: non-numeric field: {exc}") from exc
        frames.append(Frame(
            frame_id=fid,
            pose_camera_to_world=pose,
            intrinsics=intrinsics,
            image_size=image_size,
        ))

    meta = _require(manifest, "metadata", dict, "scene.json")
    metadata = SceneMetadata(
        room_area=_require(meta, "room_area", float, "metadata"),
        source=_require(meta, "source", str, "metadata"),
    )
    return Scene(scene_id=scene_id, points=points, instance_ids=instance_ids,
                 instances=tuple(instances), frames=tuple(frames), metadata=metadata)


def save_scene(scene: Scene, path) -> None:
    """Write a scene asset directory; round-trips byte-identically."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": MANIFEST_FORMAT,
        "scene_id": scene.scene_id,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "label": inst.label,
                "point_start": inst.point_start,
                "point_count": inst.point_count,
            }
            for inst in scene.instances
        ],
        "frames": [
            {
                "frame_id": fr.frame_id,
                "pose_camera_to_world": [float(v) for v in fr.pose_camera_to_world.reshape(-1)],
                "intrinsics": [float(v) for v in fr.intrinsics],
                "image_size": [int(v) for v in fr.image_size],
            }
            for fr in scene.frames
        ],
        "metadata": {
            "room_area": float(scene.metadata.room_area),
            "source": scene.metadata.source,
        },
    }
    with open(os.path.join(path, "scene.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    record = np.empty(scene.points.shape[0], dtype=_POINT_DTYPE)
    record["xyz"] = scene.points.astype(np.float32)
    record["iid"] = scene.instance_ids
    record.tofile(os.path.join(path, "points.bin"))


# ---------------------------------------------------------------------------
# Grounded pools
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundedPools:
    """Label pools a question may legally draw from, per granularity.

    pair_* maps are keyed by the unordered frame pair (min_id, max_id);
    use the *_for accessors rather than indexing directly.
    """

    unique_scene: frozenset
    non_unique_scene: frozenset
    per_frame_unique: dict
    pair_visible: dict
    pair_non_ambiguous: dict
    region_anchors: dict
    v_min: float
    # Derived caches: per-frame visibility fractions, label->instance
    # bindings at v_min, and pairwise camera-height gaps; used by the
    # feasibility predicates and solvers, not part of the pool contract.
    frame_visibility: dict = field(repr=False, default_factory=dict)
    frame_label_instances: dict = field(repr=False, default_factory=dict)
    pair_elevation_gap: dict = field(repr=False, default_factory=dict)

    def pair_visible_for(self, f: int, g: int) -> frozenset:
        return self.pair_visible.get((min(f, g), max(f, g)), frozenset())

    def pair_non_ambiguous_for(self, f: int, g: int) -> frozenset:
        return self.pair_non_ambiguous.get((min(f, g), max(f, g)), frozenset())

    def scene_labels(self) -> frozenset:
        return self.unique_scene | self.non_unique_scene


def visible_fraction(scene: Scene, frame: Frame, instance: Instance) -> float:
    """Fraction of the instance's points that project inside the image.

    No occlusion test: a point counts when its depth is beyond the near
    plane and its pixel lands inside the rectangle.
    """
    pts = scene.instance_points(instance.instance_id)
    _, _, _, valid = project_points(frame, pts)
    return float(valid.sum()) / float(pts.shape[0])


def build_grounded_pools(scene: Scene, v_min: float = MIN_V_MIN,
                         ontology=None) -> GroundedPools:
    """Compute every pool for a scene at visibility threshold v_min.

    v_min below 0.1 is clamped up. The ontology (region phrase -> ordered
    anchor labels, or a RegionOntology) gates which uniquely-visible labels
    count as region anchors; when omitted the packaged default is used.
    """
    v_min = max(float(v_min), MIN_V_MIN)
    if ontology is None:
        from .questions import default_ontology
        ontology = default_ontology()
    mapping = ontology.mapping if hasattr(ontology, "mapping") else ontology
    anchor_vocab = {a for anchors in mapping.values() for a in anchors}

    counts: dict[str, int] = {}
    for inst in scene.instances:
        counts[inst.label] = counts.get(inst.label, 0) + 1
    unique_scene = frozenset(l for l, n in counts.items() if n == 1)
    non_unique_scene = frozenset(l for l, n in counts.items() if n >= 2)

    frame_visibility: dict[int, dict[int, float]] = {}
    frame_label_instances: dict[int, dict[str, list[int]]] = {}
    per_frame_unique: dict[int, frozenset] = {}
    region_anchors: dict[int, frozenset] = {}
    for fr in scene.frames:
        fractions = {inst.instance_id: visible_fraction(scene, fr, inst)
                     for inst in scene.instances}
        binding: dict[str, list[int]] = {}
        for inst in scene.instances:
            if fractions[inst.instance_id] >= v_min:
                binding.setdefault(inst.label, []).append(inst.instance_id)
        uf = frozenset(l for l, ids in binding.items() if len(ids) == 1)
        frame_visibility[fr.frame_id] = fractions
        frame_label_instances[fr.frame_id] = binding
        per_frame_unique[fr.frame_id] = uf
        region_anchors[fr.frame_id] = frozenset(l for l in uf if l in anchor_vocab)

    pair_visible: dict[tuple[int, int], frozenset] = {}
    pair_non_ambiguous: dict[tuple[int, int], frozenset] = {}
    pair_elevation_gap: dict[tuple[int, int], float] = {}
    fids = [fr.frame_id for fr in scene.frames]
    for i, f in enumerate(fids):
        for g in fids[i + 1:]:
            key = (min(f, g), max(f, g))
            bf, bg = frame_label_instances[f], frame_label_instances[g]
            pair_visible[key] = frozenset(set(bf) & set(bg))
            pair_non_ambiguous[key] = frozenset(
                l for l in set(bf) & set(bg)
                if len(bf[l]) == 1 and len(bg[l]) == 1 and bf[l][0] == bg[l][0])
            pair_elevation_gap[key] = abs(
                float(scene.frame(f).camera_center[2])
                - float(scene.frame(g).camera_center[2]))

    return GroundedPools(
        unique_scene=unique_scene,
        non_unique_scene=non_unique_scene,
        per_frame_unique=per_frame_unique,
        pair_visible=pair_visible,
        pair_non_ambiguous=pair_non_ambiguous,
        region_anchors=region_anchors,
        v_min=v_min,
        frame_visibility=frame_visibility,
        frame_label_instances=frame_label_instances,
        pair_elevation_gap=pair_elevation_gap,
    )


class SceneIndex:
    """Registry of loaded scenes with their pools, keyed by scene id."""

    def __init__(self, v_min: float = MIN_V_MIN, ontology=None):
        self.v_min = max(float(v_min), MIN_V_MIN)
        self._ontology = ontology
        self._scenes: dict[str, Scene] = {}
        self._pools: dict[str, GroundedPools] = {}

    def add(self, scene: Scene) -> GroundedPools:
        pools = build_grounded_pools(scene, self.v_min, self._ontology)
        # pools first: a concurrent reader that sees the scene id must
        # never miss its pools
        self._pools[scene.scene_id] = pools
        self._scenes[scene.scene_id] = scene
        return pools

    def __contains__(self, scene_id: str) -> bool:
        return scene_id in self._scenes

    def scene(self, scene_id: str) -> Scene:
        return self._scenes[scene_id]

    def pools(self, scene_id: str) -> GroundedPools:
        return self._pools[scene_id]

    def scene_ids(self) -> list[str]:
        return sorted(self._scenes)
