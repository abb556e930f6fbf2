"""The 16 spatial task definitions: modality contracts, role schemas,
feasibility predicates, and validity-factor downgrades.

Task identifiers are stable lowercase snake_case strings used verbatim in
the service protocol and logs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ModalityMismatch
from .geometry import DirectionSet

ELEVATION_BAND = 0.15  # |dz| below this makes an elevation pair degenerate


class Modality(str, enum.Enum):
    SCENE = "scene"
    SINGLE_IMAGE = "single_image"
    IMAGE_PAIR = "image_pair"


class TaskType(str, enum.Enum):
    OBJECT_COUNTING = "object_counting"
    OBJECT_SIZE = "object_size"
    ABSOLUTE_DISTANCE = "absolute_distance"
    RELATIVE_DISTANCE = "relative_distance"
    RELATIVE_DIRECTION = "relative_direction"
    ROOM_SIZE = "room_size"
    SV_RELATIVE_DIRECTION = "sv_relative_direction"
    CAMERA_OBJECT_DISTANCE = "camera_object_distance"
    DEPTH_ORDER = "depth_order"
    CAM_CAM_POSITION = "cam_cam_position"
    CAM_CAM_ELEVATION = "cam_cam_elevation"
    VISIBILITY_COMPARISON = "visibility_comparison"
    CAM_OBJ_POSITION = "cam_obj_position"
    CAM_REGION_POSITION = "cam_region_position"
    CAMERA_MOTION = "camera_motion"
    ATTRIBUTE_MEASUREMENT = "attribute_measurement"


# Pool a role's labels must come from.
class PoolKind(str, enum.Enum):
    SCENE_ANY = "scene_any"          # any label present in the scene
    SCENE_UNIQUE = "scene_unique"    # U_scene
    FRAME_UNIQUE = "frame_unique"    # U_f of the (reference) frame
    PAIR_VISIBLE = "pair_visible"
    PAIR_NON_AMBIGUOUS = "pair_non_ambiguous"
    REGION_PHRASE = "region_phrase"  # resolved through the ontology
    IMAGE_INDEX = "image_index"      # 1 or 2


@dataclass(frozen=True)
class RoleSpec:
    name: str
    pool: PoolKind
    is_list: bool = False
    list_min: int = 0
    list_max: int = 0


@dataclass(frozen=True)
class TaskSchema:
    task: TaskType
    modality: Modality
    numeric: bool
    roles: tuple[RoleSpec, ...]
    unit: str | None = None          # unit of Metric answers
    # role-name groups that must hold mutually distinct labels
    distinct_groups: tuple[tuple[str, ...], ...] = ()

    def role(self, name: str) -> RoleSpec:
        for r in self.roles:
            if r.name == name:
                return r
        raise KeyError(name)

    def role_names(self) -> list[str]:
        return [r.name for r in self.roles]


def _schema(task, modality, numeric, roles, unit=None, distinct=()):
    return TaskSchema(task=task, modality=modality, numeric=numeric,
                      roles=tuple(roles), unit=unit,
                      distinct_groups=tuple(tuple(g) for g in distinct))


SCHEMAS: dict[TaskType, TaskSchema] = {s.task: s for s in [
    _schema(TaskType.OBJECT_COUNTING, Modality.SCENE, True,
            [RoleSpec("target", PoolKind.SCENE_ANY)]),
    _schema(TaskType.OBJECT_SIZE, Modality.SCENE, True,
            [RoleSpec("target", PoolKind.SCENE_UNIQUE)], unit="cm"),
    _schema(TaskType.ABSOLUTE_DISTANCE, Modality.SCENE, True,
            [RoleSpec("object_a", PoolKind.SCENE_UNIQUE),
             RoleSpec("object_b", PoolKind.SCENE_UNIQUE)],
            unit="m", distinct=[("object_a", "object_b")]),
    _schema(TaskType.RELATIVE_DISTANCE, Modality.SCENE, False,
            [RoleSpec("anchor", PoolKind.SCENE_UNIQUE),
             RoleSpec("candidates", PoolKind.SCENE_UNIQUE,
                      is_list=True, list_min=3, list_max=3)]),
    _schema(TaskType.RELATIVE_DIRECTION, Modality.SCENE, False,
            [RoleSpec("anchor", PoolKind.SCENE_UNIQUE),
             RoleSpec("facing", PoolKind.SCENE_UNIQUE),
             RoleSpec("target", PoolKind.SCENE_UNIQUE)],
            distinct=[("anchor", "facing", "target")]),
    _schema(TaskType.ROOM_SIZE, Modality.SCENE, True, [], unit="m^2"),
    _schema(TaskType.SV_RELATIVE_DIRECTION, Modality.SINGLE_IMAGE, False,
            [RoleSpec("reference", PoolKind.FRAME_UNIQUE),
             RoleSpec("target", PoolKind.FRAME_UNIQUE)],
            distinct=[("reference", "target")]),
    _schema(TaskType.CAMERA_OBJECT_DISTANCE, Modality.SINGLE_IMAGE, True,
            [RoleSpec("target", PoolKind.FRAME_UNIQUE)], unit="m"),
    _schema(TaskType.DEPTH_ORDER, Modality.SINGLE_IMAGE, False,
            [RoleSpec("object_a", PoolKind.FRAME_UNIQUE),
             RoleSpec("object_b", PoolKind.FRAME_UNIQUE)],
            distinct=[("object_a", "object_b")]),
    _schema(TaskType.CAM_CAM_POSITION, Modality.IMAGE_PAIR, False,
            [RoleSpec("reference_image", PoolKind.IMAGE_INDEX)]),
    _schema(TaskType.CAM_CAM_ELEVATION, Modality.IMAGE_PAIR, False,
            [RoleSpec("reference_image", PoolKind.IMAGE_INDEX)]),
    _schema(TaskType.VISIBILITY_COMPARISON, Modality.IMAGE_PAIR, False,
            [RoleSpec("target", PoolKind.PAIR_VISIBLE)]),
    _schema(TaskType.CAM_OBJ_POSITION, Modality.IMAGE_PAIR, False,
            [RoleSpec("reference_image", PoolKind.IMAGE_INDEX),
             RoleSpec("target", PoolKind.FRAME_UNIQUE)]),
    _schema(TaskType.CAM_REGION_POSITION, Modality.IMAGE_PAIR, False,
            [RoleSpec("reference_image", PoolKind.IMAGE_INDEX),
             RoleSpec("region", PoolKind.REGION_PHRASE)]),
    _schema(TaskType.CAMERA_MOTION, Modality.IMAGE_PAIR, False, []),
    _schema(TaskType.ATTRIBUTE_MEASUREMENT, Modality.IMAGE_PAIR, False,
            [RoleSpec("object_a", PoolKind.PAIR_NON_AMBIGUOUS),
             RoleSpec("object_b", PoolKind.PAIR_NON_AMBIGUOUS)],
            distinct=[("object_a", "object_b")]),
]}

NUMERIC_TASKS = frozenset(t for t, s in SCHEMAS.items() if s.numeric)
SCENE_TASKS = tuple(t for t, s in SCHEMAS.items() if s.modality is Modality.SCENE)
SINGLE_IMAGE_TASKS = tuple(t for t, s in SCHEMAS.items()
                           if s.modality is Modality.SINGLE_IMAGE)
IMAGE_PAIR_TASKS = tuple(t for t, s in SCHEMAS.items()
                         if s.modality is Modality.IMAGE_PAIR)

# Accepted spellings of task names beyond the canonical id.
_TASK_ALIASES = {
    "object counting": TaskType.OBJECT_COUNTING,
    "counting": TaskType.OBJECT_COUNTING,
    "object size": TaskType.OBJECT_SIZE,
    "absolute distance": TaskType.ABSOLUTE_DISTANCE,
    "relative distance": TaskType.RELATIVE_DISTANCE,
    "relative direction": TaskType.RELATIVE_DIRECTION,
    "room size": TaskType.ROOM_SIZE,
    "room size estimation": TaskType.ROOM_SIZE,
    "single-view relative direction": TaskType.SV_RELATIVE_DIRECTION,
    "single view relative direction": TaskType.SV_RELATIVE_DIRECTION,
    "camera-object distance": TaskType.CAMERA_OBJECT_DISTANCE,
    "camera object distance": TaskType.CAMERA_OBJECT_DISTANCE,
    "depth ordering": TaskType.DEPTH_ORDER,
    "depth order": TaskType.DEPTH_ORDER,
    "inter-camera relative position": TaskType.CAM_CAM_POSITION,
    "inter-camera elevation": TaskType.CAM_CAM_ELEVATION,
    "visibility comparison": TaskType.VISIBILITY_COMPARISON,
    "camera-object position": TaskType.CAM_OBJ_POSITION,
    "camera-region position": TaskType.CAM_REGION_POSITION,
    "camera motion": TaskType.CAMERA_MOTION,
    "camera motion estimation": TaskType.CAMERA_MOTION,
    "attribute measurement": TaskType.ATTRIBUTE_MEASUREMENT,
}


def _canon_name(name: str) -> str:
    key = name.strip().lower().replace("_", " ").replace("-", " ")
    return " ".join(key.split())


_TASK_ALIASES = {_canon_name(k): v for k, v in _TASK_ALIASES.items()}


def normalize_task_name(name) -> TaskType | None:
    """Parse a noisy task name to its canonical type; None when unknown."""
    if isinstance(name, TaskType):
        return name
    if not isinstance(name, str):
        return None
    key = _canon_name(name)
    try:
        return TaskType(key.replace(" ", "_"))
    except ValueError:
        pass
    return _TASK_ALIASES.get(key)


@dataclass(frozen=True)
class ContextRef:
    """A question's visual context: one scene plus zero, one, or two frames."""

    scene_id: str
    frame_ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))

    @property
    def modality(self) -> Modality:
        n = len(self.frame_ids)
        if n == 0:
            return Modality.SCENE
        if n == 1:
            return Modality.SINGLE_IMAGE
        if n == 2:
            return Modality.IMAGE_PAIR
        raise ModalityMismatch(f"context may hold at most two frames, got {n}")

    @property
    def context_id(self) -> str:
        return self.scene_id + "/" + ",".join(str(f) for f in self.frame_ids)


# ---------------------------------------------------------------------------
# Ground truth vocabulary (shared by solvers and rewards)
# ---------------------------------------------------------------------------

class GroundTruthKind(str, enum.Enum):
    COUNT = "count"
    METRIC = "metric"
    LABEL = "label"
    DIRECTION = "direction"
    TERNARY = "ternary"
    ELEVATION = "elevation"
    VISIBILITY = "visibility"
    MOTION = "motion"


TASK_OUTPUT_KIND: dict[TaskType, GroundTruthKind] = {
    TaskType.OBJECT_COUNTING: GroundTruthKind.COUNT,
    TaskType.OBJECT_SIZE: GroundTruthKind.METRIC,
    TaskType.ABSOLUTE_DISTANCE: GroundTruthKind.METRIC,
    TaskType.RELATIVE_DISTANCE: GroundTruthKind.LABEL,
    TaskType.RELATIVE_DIRECTION: GroundTruthKind.DIRECTION,
    TaskType.ROOM_SIZE: GroundTruthKind.METRIC,
    TaskType.SV_RELATIVE_DIRECTION: GroundTruthKind.DIRECTION,
    TaskType.CAMERA_OBJECT_DISTANCE: GroundTruthKind.METRIC,
    TaskType.DEPTH_ORDER: GroundTruthKind.TERNARY,
    TaskType.CAM_CAM_POSITION: GroundTruthKind.DIRECTION,
    TaskType.CAM_CAM_ELEVATION: GroundTruthKind.ELEVATION,
    TaskType.VISIBILITY_COMPARISON: GroundTruthKind.VISIBILITY,
    TaskType.CAM_OBJ_POSITION: GroundTruthKind.DIRECTION,
    TaskType.CAM_REGION_POSITION: GroundTruthKind.DIRECTION,
    TaskType.CAMERA_MOTION: GroundTruthKind.MOTION,
    TaskType.ATTRIBUTE_MEASUREMENT: GroundTruthKind.LABEL,
}


@dataclass(frozen=True)
class GroundTruth:
    """Tagged answer value. `value` holds:

    count: int / metric: float (with `unit`) / label: str /
    direction, motion: DirectionSet / ternary: 'obj1'|'obj2'|'same' /
    elevation: 'higher'|'lower'|'same_level' /
    visibility: 'image1'|'image2'|'same'|'neither'.

    Ternary answers also carry the two role labels so a label-worded
    prediction can be matched positionally.
    """

    kind: GroundTruthKind
    value: object
    unit: str | None = None
    object_a: str | None = None
    object_b: str | None = None

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind.value}
        if isinstance(self.value, DirectionSet):
            out["value"] = self.value.ordered()
        else:
            out["value"] = self.value
        if self.unit is not None:
            out["unit"] = self.unit
        if self.object_a is not None:
            out["object_a"] = self.object_a
            out["object_b"] = self.object_b
        return out

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruth":
        kind = GroundTruthKind(data["kind"])
        value = data["value"]
        if kind in (GroundTruthKind.DIRECTION, GroundTruthKind.MOTION):
            value = DirectionSet(value)
        return cls(kind=kind, value=value, unit=data.get("unit"),
                   object_a=data.get("object_a"), object_b=data.get("object_b"))


# ---------------------------------------------------------------------------
# Feasibility and validity factor
# ---------------------------------------------------------------------------

def feasible_tasks(pools, context: ContextRef) -> set[TaskType]:
    """Tasks whose feasibility predicate holds for this context's pools."""
    modality = context.modality
    out: set[TaskType] = set()
    if modality is Modality.SCENE:
        if len(pools.non_unique_scene) >= 1:
            out.add(TaskType.OBJECT_COUNTING)
        if len(pools.unique_scene) >= 1:
            out.add(TaskType.OBJECT_SIZE)
        if len(pools.unique_scene) >= 2:
            out.add(TaskType.ABSOLUTE_DISTANCE)
        if len(pools.unique_scene) >= 3:
            out.add(TaskType.RELATIVE_DIRECTION)
        if len(pools.unique_scene) >= 4:
            out.add(TaskType.RELATIVE_DISTANCE)
        out.add(TaskType.ROOM_SIZE)
        return out
    if modality is Modality.SINGLE_IMAGE:
        (fid,) = context.frame_ids
        if fid not in pools.per_frame_unique:
            raise ModalityMismatch(f"no pools for frame {fid}")
        uf = pools.per_frame_unique[fid]
        if len(uf) >= 2:
            out.add(TaskType.SV_RELATIVE_DIRECTION)
            out.add(TaskType.DEPTH_ORDER)
        if len(uf) >= 1:
            out.add(TaskType.CAMERA_OBJECT_DISTANCE)
        return out
    f, g = context.frame_ids
    if f not in pools.per_frame_unique or g not in pools.per_frame_unique:
        raise ModalityMismatch(f"no pools for frame pair ({f}, {g})")
    out.add(TaskType.CAM_CAM_POSITION)
    out.add(TaskType.CAMERA_MOTION)
    key = (min(f, g), max(f, g))
    if pools.pair_elevation_gap.get(key, 0.0) >= ELEVATION_BAND:
        out.add(TaskType.CAM_CAM_ELEVATION)
    if pools.pair_visible_for(f, g):
        out.add(TaskType.VISIBILITY_COMPARISON)
    if len(pools.pair_non_ambiguous_for(f, g)) >= 2:
        out.add(TaskType.ATTRIBUTE_MEASUREMENT)
    if pools.per_frame_unique[f] or pools.per_frame_unique[g]:
        out.add(TaskType.CAM_OBJ_POSITION)
    if pools.region_anchors.get(f) or pools.region_anchors.get(g):
        out.add(TaskType.CAM_REGION_POSITION)
    return out


def validity_factor(task: TaskType, gt: GroundTruth) -> float:
    """Downgrade factor for formally valid but low-information questions."""
    if task is TaskType.OBJECT_COUNTING and gt.kind is GroundTruthKind.COUNT:
        if gt.value == 0:
            return 0.0
        if gt.value == 1:
            return 0.5
    elif task is TaskType.DEPTH_ORDER and gt.kind is GroundTruthKind.TERNARY:
        if gt.value == "same":
            return 0.5
    elif task is TaskType.CAM_CAM_ELEVATION and gt.kind is GroundTruthKind.ELEVATION:
        if gt.value == "same_level":
            return 0.0
    elif task is TaskType.VISIBILITY_COMPARISON and gt.kind is GroundTruthKind.VISIBILITY:
        if gt.value in ("same", "neither"):
            return 0.5
    return 1.0
