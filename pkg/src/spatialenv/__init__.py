"""Deterministic geometric environment for verifiable spatial-reasoning QA.

Validates natural-language spatial questions against 3D scene assets,
computes exact ground truth for 16 task categories, scores both sides of a
question/answer loop, and drives an accuracy-adaptive task curriculum.
"""

from .generator import GeneratorSpec, generate_synthetic_scene
from .geometry import Box3, DirectionSet, RelativePose
from .pipeline import (DiagnosticSummary, ErrorCode, ValidationOutcome,
                       Verdict, verdict_to_diagnostics, verify)
from .questions import (RegionOntology, SemanticSignature, StructuredQuestion,
                        dedup, extract_entities, render_question,
                        resolve_region, sanitize, semantic_signature)
from .scene import (GroundedPools, Frame, Instance, Scene, SceneIndex,
                    SceneMetadata, build_grounded_pools, load_scene,
                    save_scene)
from .scheduler import (SchedulerConfig, SchedulerState, TaskStats, calibrate,
                        sample_task, sampling_distribution, smoothed_accuracy,
                        update)
from .solvers import SceneContext, solve
from .tasks import (ContextRef, GroundTruth, GroundTruthKind, Modality,
                    TaskType, feasible_tasks, validity_factor)

__version__ = "0.1.0"

__all__ = [
    "Box3", "ContextRef", "DiagnosticSummary", "DirectionSet", "ErrorCode",
    "Frame", "GeneratorSpec", "GroundTruth", "GroundTruthKind",
    "GroundedPools", "Instance", "Modality", "RegionOntology", "RelativePose",
    "Scene", "SceneContext", "SceneIndex", "SceneMetadata",
    "SchedulerConfig", "SchedulerState", "SemanticSignature",
    "StructuredQuestion", "TaskStats", "TaskType", "ValidationOutcome",
    "Verdict", "build_grounded_pools", "calibrate", "dedup",
    "extract_entities", "feasible_tasks", "generate_synthetic_scene",
    "load_scene", "render_question", "resolve_region", "sample_task",
    "sampling_distribution", "sanitize", "save_scene", "semantic_signature",
    "smoothed_accuracy", "solve", "update", "validity_factor",
    "verdict_to_diagnostics", "verify",
]
