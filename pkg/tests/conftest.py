import numpy as np
import pytest

from spatialenv.generator import GeneratorSpec, generate_synthetic_scene, make_frame
from spatialenv.scene import SceneIndex, scene_from_instances


@pytest.fixture(scope="session")
def default_scene():
    return generate_synthetic_scene(GeneratorSpec(), 1)


@pytest.fixture(scope="session")
def default_index(default_scene):
    index = SceneIndex()
    index.add(default_scene)
    return index


def box_cloud(center, extent, n=120, seed=0):
    """Uniform points filling an axis-aligned box; float32-exact."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = np.asarray(center) + (rng.random((n, 3)) - 0.5) * np.asarray(extent)
    return pts.astype(np.float32).astype(np.float64)


def tiny_scene(labeled_boxes, frames=None, room_area=20.0, scene_id="tiny"):
    """Scene from (label, center, extent) triples with optional frames.

    Without explicit frames, two cameras on the -Y side look at the origin
    from different heights so pair tasks stay feasible.
    """
    clouds = []
    for i, (label, center, extent) in enumerate(labeled_boxes):
        clouds.append((label, box_cloud(center, extent, seed=100 + i)))
    if frames is None:
        frames = [
            make_frame(0, np.array([0.0, -4.0, 1.3]), np.array([0.0, 0.0, 0.5])),
            make_frame(1, np.array([0.5, -4.0, 1.7]), np.array([0.0, 0.0, 0.5])),
        ]
    return scene_from_instances(scene_id, clouds, frames, room_area)


def indexed(scene, v_min=0.1):
    index = SceneIndex(v_min=v_min)
    index.add(scene)
    return index
