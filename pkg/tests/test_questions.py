import random

import pytest

from spatialenv.errors import CrossContextInput, IncompleteParams
from spatialenv.questions import (RegionOntology, StructuredQuestion, dedup,
                                  default_aliases, default_ontology,
                                  extract_entities, render_question,
                                  resolve_region, sanitize,
                                  semantic_signature)
from spatialenv.scene import build_grounded_pools
from spatialenv.tasks import ContextRef, SCHEMAS, TaskType

from conftest import tiny_scene

CTX_SCENE = ContextRef(scene_id="s")
CTX_SINGLE = ContextRef(scene_id="s", frame_ids=(0,))
CTX_PAIR = ContextRef(scene_id="s", frame_ids=(0, 1))


def _ctx(task):
    return {"scene": CTX_SCENE, "single_image": CTX_SINGLE,
            "image_pair": CTX_PAIR}[SCHEMAS[task].modality.value]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def test_render_absolute_distance_canonical_text():
    q = StructuredQuestion(
        task=TaskType.ABSOLUTE_DISTANCE,
        params={"object_a": "fireplace", "object_b": "tv"}, context=CTX_SCENE)
    assert render_question(q) == (
        "What is the straight-line distance between the fireplace and the tv "
        "at their nearest points, in meters?")


def test_render_room_size_canonical_text():
    q = StructuredQuestion(task=TaskType.ROOM_SIZE, params={}, context=CTX_SCENE)
    assert render_question(q) == "Approximately how many square meters is this room?"


def test_render_missing_role_raises():
    q = StructuredQuestion(task=TaskType.ABSOLUTE_DISTANCE,
                           params={"object_a": "tv", "object_b": None},
                           context=CTX_SCENE)
    with pytest.raises(IncompleteParams):
        render_question(q)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def test_extract_rendered_absolute_distance():
    text = ("What is the straight-line distance between the fireplace and "
            "the tv at their nearest points, in meters?")
    out = extract_entities(text, TaskType.ABSOLUTE_DISTANCE)
    assert out == {"object_a": "fireplace", "object_b": "tv"}


def test_extract_missing_phrase_yields_null():
    text = ("What is the straight-line distance between the and the tv at "
            "their nearest points, in meters?")
    out = extract_entities(text, TaskType.ABSOLUTE_DISTANCE)
    assert out["object_a"] is None
    assert out["object_b"] == "tv"


def test_extract_camera_object_question():
    text = "When I took Image 1, in which direction is the table relative to me?"
    out = extract_entities(text, TaskType.CAM_OBJ_POSITION)
    assert out == {"reference_image": 1, "target": "table"}


def test_extract_cam_cam_reference_from_target_mention():
    text = "When you took Image 1, where is Image 2's camera relative to you?"
    out = extract_entities(text, TaskType.CAM_CAM_POSITION)
    assert out == {"reference_image": 1}
    text2 = "Compared to Image 2's camera, is Image 1's camera higher or lower?"
    out2 = extract_entities(text2, TaskType.CAM_CAM_ELEVATION)
    assert out2 == {"reference_image": 1}


_SAMPLE_PARAMS = {
    TaskType.OBJECT_COUNTING: {"target": "window"},
    TaskType.OBJECT_SIZE: {"target": "night stand"},
    TaskType.ABSOLUTE_DISTANCE: {"object_a": "coat rack", "object_b": "tv"},
    TaskType.RELATIVE_DISTANCE: {"anchor": "bed",
                                 "candidates": ["chair", "coat rack", "table"]},
    TaskType.RELATIVE_DIRECTION: {"anchor": "toilet", "facing": "sink",
                                  "target": "bathtub"},
    TaskType.ROOM_SIZE: {},
    TaskType.SV_RELATIVE_DIRECTION: {"reference": "washing machine",
                                     "target": "sink"},
    TaskType.CAMERA_OBJECT_DISTANCE: {"target": "bed"},
    TaskType.DEPTH_ORDER: {"object_a": "chair", "object_b": "trash can"},
    TaskType.CAM_CAM_POSITION: {"reference_image": 1},
    TaskType.CAM_CAM_ELEVATION: {"reference_image": 2},
    TaskType.VISIBILITY_COMPARISON: {"target": "cabinet"},
    TaskType.CAM_OBJ_POSITION: {"reference_image": 2, "target": "table"},
    TaskType.CAM_REGION_POSITION: {"reference_image": 1,
                                   "region": "dining area"},
    TaskType.CAMERA_MOTION: {},
    TaskType.ATTRIBUTE_MEASUREMENT: {"object_a": "laptop", "object_b": "oven"},
}


@pytest.mark.parametrize("task", list(TaskType), ids=lambda t: t.value)
def test_roundtrip_all_tasks(task):
    params = _SAMPLE_PARAMS[task]
    q = StructuredQuestion(task=task, params=dict(params), context=_ctx(task))
    text = render_question(q)
    out = extract_entities(text, task)
    assert out == params


# ---------------------------------------------------------------------------
# sanitization
# ---------------------------------------------------------------------------

def _scene_pools(labels):
    boxes = [(l, (i * 1.0 - 2.0, 0.0, 0.3), (0.5, 0.5, 0.5))
             for i, l in enumerate(labels)]
    scene = tiny_scene(boxes, scene_id="s")
    return build_grounded_pools(scene, 0.1)


def test_sanitize_alias_nightstand():
    pools = _scene_pools(["night stand", "bed"])
    out = sanitize({"target": "Nightstand"}, pools, TaskType.OBJECT_SIZE,
                   CTX_SCENE)
    assert out["target"] == "night stand"


def test_sanitize_remap_failure_nulls():
    pools = _scene_pools(["couch", "bed"])
    # note: alias maps couch->sofa, but 'sofa' is what the question says and
    # the pool here genuinely holds 'couch'... use a label with no route
    out = sanitize({"target": "wardrobe"}, pools, TaskType.OBJECT_SIZE,
                   CTX_SCENE)
    assert out["target"] is None


def test_sanitize_stopword_stripping():
    pools = _scene_pools(["chair", "bed"])
    out = sanitize({"target": "the wooden chair"}, pools, TaskType.OBJECT_SIZE,
                   CTX_SCENE)
    assert out["target"] == "chair"


def test_sanitize_edit_distance_remap():
    pools = _scene_pools(["chair", "bed"])
    out = sanitize({"target": "char"}, pools, TaskType.OBJECT_SIZE, CTX_SCENE)
    assert out["target"] == "chair"  # one deletion: 1/5 = 0.2 <= 0.25
    out2 = sanitize({"target": "chairs"}, pools, TaskType.OBJECT_SIZE, CTX_SCENE)
    assert out2["target"] == "chair"  # 1/6 = 0.167 <= 0.25


def test_sanitize_sofa_outside_pool_nulls():
    pools = _scene_pools(["couch", "bed"])
    out = sanitize({"target": "sofa"}, pools, TaskType.OBJECT_SIZE, CTX_SCENE)
    assert out["target"] is None  # nearest label is farther than 0.25


def test_sanitize_idempotent():
    pools = _scene_pools(["night stand", "chair", "bed"])
    first = sanitize({"target": "the wooden Nightstand"}, pools,
                     TaskType.OBJECT_SIZE, CTX_SCENE)
    second = sanitize(first, pools, TaskType.OBJECT_SIZE, CTX_SCENE)
    assert first == second


def test_sanitize_candidate_lists():
    pools = _scene_pools(["chair", "bed", "lamp", "desk", "rug"])
    out = sanitize({"anchor": "the rug",
                    "candidates": ["Chair", "the bed", "lampp"]},
                   pools, TaskType.RELATIVE_DISTANCE, CTX_SCENE)
    assert out["anchor"] == "rug"
    assert out["candidates"] == ["chair", "bed", "lamp"]


# ---------------------------------------------------------------------------
# region resolution
# ---------------------------------------------------------------------------

def test_resolve_region_priority_order():
    ontology = RegionOntology({"kitchen area": ["stove", "sink"]})
    assert resolve_region("kitchen area", ontology, {"stove", "sink"}) == "stove"
    assert resolve_region("kitchen area", ontology, {"sink"}) == "sink"
    assert resolve_region("kitchen area", ontology, {"bed"}) is None


def test_resolve_region_sleeping_area_default_ontology():
    ontology = default_ontology()
    assert resolve_region("sleeping area", ontology, {"bed", "tv"}) == "bed"
    assert resolve_region("sleeping area", ontology, {"tv"}) is None


# ---------------------------------------------------------------------------
# signatures and dedup
# ---------------------------------------------------------------------------

def test_signature_unordered_pair():
    q1 = StructuredQuestion(task=TaskType.ABSOLUTE_DISTANCE,
                            params={"object_a": "tv", "object_b": "fireplace"},
                            context=CTX_SCENE)
    q2 = StructuredQuestion(task=TaskType.ABSOLUTE_DISTANCE,
                            params={"object_a": "fireplace", "object_b": "tv"},
                            context=CTX_SCENE)
    assert semantic_signature(q1) == semantic_signature(q2)


def test_signature_encodes_image_roles():
    q1 = StructuredQuestion(task=TaskType.CAM_OBJ_POSITION,
                            params={"reference_image": 1, "target": "table"},
                            context=CTX_PAIR)
    q2 = StructuredQuestion(task=TaskType.CAM_OBJ_POSITION,
                            params={"reference_image": 2, "target": "table"},
                            context=CTX_PAIR)
    assert semantic_signature(q1) != semantic_signature(q2)


def test_signature_ignores_raw_text():
    q1 = StructuredQuestion(task=TaskType.OBJECT_SIZE, params={"target": "tv"},
                            context=CTX_SCENE, raw_text="How big is the tv?")
    q2 = StructuredQuestion(task=TaskType.OBJECT_SIZE, params={"target": "tv"},
                            context=CTX_SCENE, raw_text="Completely different")
    assert semantic_signature(q1) == semantic_signature(q2)


def test_signature_candidate_list_sorted():
    base = {"anchor": "bed"}
    q1 = StructuredQuestion(task=TaskType.RELATIVE_DISTANCE,
                            params={**base, "candidates": ["b", "c", "a"]},
                            context=CTX_SCENE)
    q2 = StructuredQuestion(task=TaskType.RELATIVE_DISTANCE,
                            params={**base, "candidates": ["a", "b", "c"]},
                            context=CTX_SCENE)
    assert semantic_signature(q1) == semantic_signature(q2)


def _mk(task, params, ctx=CTX_SCENE):
    return StructuredQuestion(task=task, params=params, context=ctx)


def test_dedup_counts():
    cands = [
        _mk(TaskType.OBJECT_SIZE, {"target": "tv"}),
        _mk(TaskType.OBJECT_SIZE, {"target": "bed"}),
        _mk(TaskType.OBJECT_SIZE, {"target": "tv"}),
        _mk(TaskType.OBJECT_SIZE, {"target": "rug"}),
    ]
    out = dedup(cands)
    assert [(q.params["target"], w) for q, w in out] == [
        ("tv", 2), ("bed", 1), ("rug", 1)]


def test_dedup_all_identical():
    cands = [_mk(TaskType.OBJECT_SIZE, {"target": "tv"}) for _ in range(4)]
    out = dedup(cands)
    assert len(out) == 1 and out[0][1] == 4


def test_dedup_weight_conservation_random():
    rng = random.Random(5)
    labels = ["a", "b", "c", "d"]
    for _ in range(50):
        n = rng.randint(1, 12)
        cands = [_mk(TaskType.OBJECT_SIZE, {"target": rng.choice(labels)})
                 for _ in range(n)]
        out = dedup(cands)
        assert sum(w for _, w in out) == n
        # oracle: naive counting by label
        naive = {}
        for c in cands:
            naive[c.params["target"]] = naive.get(c.params["target"], 0) + 1
        assert {q.params["target"]: w for q, w in out} == naive


def test_dedup_rejects_cross_context():
    a = _mk(TaskType.OBJECT_SIZE, {"target": "tv"},
            ContextRef(scene_id="s1"))
    b = _mk(TaskType.OBJECT_SIZE, {"target": "tv"},
            ContextRef(scene_id="s2"))
    with pytest.raises(CrossContextInput):
        dedup([a, b])


def test_alias_table_from_default():
    aliases = default_aliases()
    assert aliases.apply("nightstand") == "night stand"
    assert aliases.apply("television") == "tv"


def test_signature_bytes_golden():
    # the byte layout is the cross-platform dedup key; pin it
    q = StructuredQuestion(
        task=TaskType.RELATIVE_DISTANCE,
        params={"anchor": "bed", "candidates": ["rug", "desk", "lamp"]},
        context=CTX_SCENE)
    assert semantic_signature(q).normalized_params == \
        b"relative_distance|anchor=bed|candidates=desk,lamp,rug"
    q2 = StructuredQuestion(
        task=TaskType.ABSOLUTE_DISTANCE,
        params={"object_a": "tv", "object_b": "bed"}, context=CTX_SCENE)
    assert semantic_signature(q2).normalized_params == \
        b"absolute_distance|object_a=bed|object_b=tv"
    q3 = StructuredQuestion(
        task=TaskType.OBJECT_SIZE, params={"target": None}, context=CTX_SCENE)
    assert semantic_signature(q3).normalized_params == \
        "object_size|target=∅".encode("utf-8")
