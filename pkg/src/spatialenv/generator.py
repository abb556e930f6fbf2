"""Seeded synthetic indoor scenes for desk-scale testing.

Everything is a pure function of (spec, seed) using a PCG64 stream with a
fixed draw order, so identical inputs produce bit-identical scenes across
processes and platforms. Points are quantized to float32 at the end, which
makes generate -> save -> load lossless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecOutOfRange
from .geometry import polygon_area
from .scene import Frame, Scene, SceneIndex, scene_from_instances, visible_fraction

# Lowercase singular labels; multi-word entries are deliberate so the
# extraction grammar gets exercised on phrases, not just tokens.
DEFAULT_VOCABULARY = (
    "bed", "chair", "table", "sofa", "lamp", "desk", "tv", "plant", "sink",
    "toilet", "bathtub", "fridge", "stove", "cabinet", "shelf", "rug",
    "mirror", "night stand", "trash can", "coat rack", "window", "door",
    "microwave", "oven", "laptop", "monitor", "keyboard", "printer",
    "heater", "fan", "bench", "stool", "wardrobe", "dresser",
)

MIN_INSTANCES, MAX_INSTANCES = 2, 30
MIN_POINTS, MAX_POINTS = 100, 5000
MIN_FRAMES, MAX_FRAMES = 2, 16

IMAGE_SIZE = (640, 480)


@dataclass(frozen=True)
class GeneratorSpec:
    n_instances: int = 8
    points_per_instance: int = 300
    n_frames: int = 4
    duplicate_labels: int = 1          # labels that receive two instances
    room_width_range: tuple[float, float] = (4.0, 8.0)
    room_depth_range: tuple[float, float] = (3.0, 6.0)
    occluded_layouts: bool = False     # skip the coverage guarantee
    vocabulary: tuple[str, ...] = field(default=DEFAULT_VOCABULARY)

    def validate(self) -> None:
        if not MIN_INSTANCES <= self.n_instances <= MAX_INSTANCES:
            raise SpecOutOfRange(
                f"n_instances must be in [{MIN_INSTANCES}, {MAX_INSTANCES}], "
                f"got {self.n_instances}")
        if not MIN_POINTS <= self.points_per_instance <= MAX_POINTS:
            raise SpecOutOfRange(
                f"points_per_instance must be in [{MIN_POINTS}, {MAX_POINTS}], "
                f"got {self.points_per_instance}")
        if not MIN_FRAMES <= self.n_frames <= MAX_FRAMES:
            raise SpecOutOfRange(
                f"n_frames must be in [{MIN_FRAMES}, {MAX_FRAMES}], got {self.n_frames}")
        if self.duplicate_labels < 0 or self.duplicate_labels * 2 > self.n_instances:
            raise SpecOutOfRange("duplicate_labels must fit inside n_instances")
        if self.n_instances - self.duplicate_labels > len(self.vocabulary):
            raise SpecOutOfRange("vocabulary too small for the requested instance count")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        kwargs = {}
        for key in ("n_instances", "points_per_instance", "n_frames",
                    "duplicate_labels", "occluded_layouts"):
            if key in data:
                kwargs[key] = data[key]
        for key in ("room_width_range", "room_depth_range"):
            if key in data:
                kwargs[key] = tuple(data[key])
        if "vocabulary" in data:
            kwargs["vocabulary"] = tuple(data["vocabulary"])
        return cls(**kwargs)


def room_footprint(spec: GeneratorSpec, seed: int) -> np.ndarray:
    """Floor polygon the generator will use for (spec, seed), as (4, 2)."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    w = float(rng.uniform(*spec.room_width_range))
    d = float(rng.uniform(*spec.room_depth_range))
    return np.array([[0.0, 0.0], [w, 0.0], [w, d], [0.0, d]])


def camera_pose(position: np.ndarray, look_at: np.ndarray) -> np.ndarray:
    forward = look_at - position
    norm = float(np.linalg.norm(forward))
    if norm < 1e-9:
        forward = np.array([1.0, 0.0, 0.0])
    else:
        forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(forward @ up)) > 0.999:  # pitch clamp: never look straight down
        forward = np.array([1.0, 0.0, -0.2])
        forward = forward / float(np.linalg.norm(forward))
    right = np.cross(forward, up)
    right = right / float(np.linalg.norm(right))
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = position
    return pose


def make_frame(frame_id: int, position, look_at) -> Frame:
    w, h = IMAGE_SIZE
    fx = fy = 0.8 * w
    return Frame(
        frame_id=frame_id,
        pose_camera_to_world=camera_pose(np.asarray(position, dtype=np.float64),
                                          np.asarray(look_at, dtype=np.float64)),
        intrinsics=(fx, fy, w / 2.0, h / 2.0),
        image_size=IMAGE_SIZE,
    )


def generate_synthetic_scene(spec: GeneratorSpec, seed: int) -> Scene:
    """Deterministic labeled scene with cameras covering every instance.

    Unless spec.occluded_layouts is set, every instance is visible with
    fraction >= 0.1 in at least one frame.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(seed))

    # Draw order is part of the format: room first (see room_footprint).
    w = float(rng.uniform(*spec.room_width_range))
    d = float(rng.uniform(*spec.room_depth_range))
    corners = np.array([[0.0, 0.0], [w, 0.0], [w, d], [0.0, d]])
    room_area = polygon_area(corners)

    distinct = spec.n_instances - spec.duplicate_labels
    labels = list(rng.choice(spec.vocabulary, size=distinct, replace=False))
    labels = [str(l) for l in labels]
    instance_labels = labels + labels[:spec.duplicate_labels]

    clouds = []
    for label in instance_labels:
        ext = np.array([
            rng.uniform(0.2, 1.2),
            rng.uniform(0.2, 1.2),
            rng.uniform(0.15, 1.4),
        ])
        margin_x = ext[0] / 2 + 0.1
        margin_y = ext[1] / 2 + 0.1
        cx = rng.uniform(margin_x, w - margin_x)
        cy = rng.uniform(margin_y, d - margin_y)
        base = 0.0 if rng.random() > 0.2 else rng.uniform(0.4, 1.2)
        center = np.array([cx, cy, base + ext[2] / 2])
        pts = center + (rng.random((spec.points_per_instance, 3)) - 0.5) * ext
        # float32 quantization keeps the on-disk round trip lossless
        clouds.append((label, pts.astype(np.float32).astype(np.float64)))

    center_xy = np.array([w / 2.0, d / 2.0])
    radius = 0.42 * min(w, d)
    frames = []
    for i in range(spec.n_frames):
        angle = 2 * math.pi * i / spec.n_frames + float(rng.uniform(-0.2, 0.2))
        pos_xy = center_xy + radius * np.array([math.cos(angle), math.sin(angle)])
        # Alternate a 0.4 m height step so frame pairs exist on both sides
        # of the 0.15 m elevation-degeneracy band.
        height = float(rng.uniform(1.25, 1.35)) + 0.4 * (i % 2)
        look = np.array([
            center_xy[0] + float(rng.uniform(-0.4, 0.4)),
            center_xy[1] + float(rng.uniform(-0.4, 0.4)),
            0.8,
        ])
        frames.append(make_frame(i, np.array([pos_xy[0], pos_xy[1], height]), look))

    scene = scene_from_instances(
        scene_id=f"synthetic-{seed:08d}",
        labeled_clouds=clouds,
        frames=frames,
        room_area=room_area,
    )

    if not spec.occluded_layouts:
        scene = _ensure_coverage(scene, rng)
    return scene


def _ensure_coverage(scene: Scene, rng: np.random.Generator) -> Scene:
    """Re-aim cameras until every instance is seen at fraction >= 0.1."""
    frames = list(scene.frames)
    for _ in range(4):
        uncovered = _uncovered_instances(scene, frames)
        if not uncovered:
            break
        for k, inst in enumerate(uncovered):
            target = scene.instance_centroid(inst.instance_id)
            idx = (len(frames) - 1 - k) % len(frames)
            away = target[:2] - np.array([scene.points[:, 0].mean(),
                                          scene.points[:, 1].mean()])
            norm = float(np.linalg.norm(away))
            direction = away / norm if norm > 1e-6 else np.array([1.0, 0.0])
            pos_xy = target[:2] - direction * 2.5
            height = float(rng.uniform(1.4, 1.8))
            frames[idx] = make_frame(
                frames[idx].frame_id,
                np.array([pos_xy[0], pos_xy[1], height]), target)
    else:
        uncovered = _uncovered_instances(scene, frames)
        if uncovered:
            raise RuntimeError(
                f"coverage not reached for instances "
                f"{[i.instance_id for i in uncovered]} in {scene.scene_id}")
    return Scene(
        scene_id=scene.scene_id, points=scene.points,
        instance_ids=scene.instance_ids, instances=scene.instances,
        frames=tuple(frames), metadata=scene.metadata)


def _uncovered_instances(scene: Scene, frames) -> list:
    out = []
    for inst in scene.instances:
        if all(visible_fraction(scene, fr, inst) < 0.1 for fr in frames):
            out.append(inst)
    return out


def generate_scene_pool(n_scenes: int, base_seed: int,
                        spec: GeneratorSpec | None = None,
                        v_min: float = 0.1) -> SceneIndex:
    """Convenience: an index holding n seeded scenes (seeds base..base+n-1)."""
    spec = spec or GeneratorSpec()
    index = SceneIndex(v_min=v_min)
    for k in range(n_scenes):
        index.add(generate_synthetic_scene(spec, base_seed + k))
    return index
