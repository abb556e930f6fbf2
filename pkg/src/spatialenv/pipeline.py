"""Six-stage verification pipeline producing the unified Verdict.

Stages: (1) task normalization + modality contract, (2) context injection,
(3) structured extraction with heuristic fallback, (4) canonicalization,
sanitization, and region anchor resolution, (5) rule-based rejection, (6)
deterministic ground-truth synthesis. The first failing stage short-circuits
with its error code; later stages never run.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import jsonutil
from .errors import CalledOnValidVerdict
from .geometry import DirectionSet
from .questions import (AliasTable, Extractor, TemplateExtractor,
                        default_aliases, default_ontology, resolve_region,
                        role_pool, sanitize, StructuredQuestion)
from .scene import SceneIndex
from .solvers import (DegeneratePremise, SceneContext, SolverUnavailable,
                      solve)
from .tasks import (ContextRef, GroundTruth, Modality, PoolKind, SCHEMAS,
                    TaskType, normalize_task_name)

MAX_INTERMEDIATES = 64


class ErrorCode(str, enum.Enum):
    MODE_MISMATCH = "MODE_MISMATCH"
    CONTEXT_MISSING = "CONTEXT_MISSING"
    EXTRACTION_FAILED = "EXTRACTION_FAILED"
    POOL_VIOLATION = "POOL_VIOLATION"
    ROLE_CONFLICT = "ROLE_CONFLICT"
    LIST_INVALID = "LIST_INVALID"
    SELF_IN_CANDIDATES = "SELF_IN_CANDIDATES"
    DEGENERATE_PREMISE = "DEGENERATE_PREMISE"
    SOLVER_UNAVAILABLE = "SOLVER_UNAVAILABLE"


# Each code belongs to exactly one pipeline stage.
ERROR_STAGE: dict[ErrorCode, int] = {
    ErrorCode.MODE_MISMATCH: 1,
    ErrorCode.CONTEXT_MISSING: 2,
    ErrorCode.EXTRACTION_FAILED: 3,
    ErrorCode.POOL_VIOLATION: 5,
    ErrorCode.ROLE_CONFLICT: 5,
    ErrorCode.LIST_INVALID: 5,
    ErrorCode.SELF_IN_CANDIDATES: 5,
    ErrorCode.DEGENERATE_PREMISE: 6,
    ErrorCode.SOLVER_UNAVAILABLE: 6,
}


@dataclass(frozen=True)
class ValidationOutcome:
    c_mode: bool = False
    c_extract: bool = False
    c_pool: bool = False
    c_schema: bool = False
    c_solver: bool = False

    @property
    def valid(self) -> bool:
        return (self.c_mode and self.c_extract and self.c_pool
                and self.c_schema and self.c_solver)

    def to_json(self) -> dict:
        return {"c_mode": self.c_mode, "c_extract": self.c_extract,
                "c_pool": self.c_pool, "c_schema": self.c_schema,
                "c_solver": self.c_solver}


@dataclass(frozen=True)
class VerdictFailure:
    error_code: ErrorCode
    failure_stage: int
    outcome: ValidationOutcome
    reason: str

    def to_json(self) -> dict:
        return {"error_code": self.error_code.value,
                "failure_stage": self.failure_stage,
                "outcome": self.outcome.to_json(),
                "reason": self.reason}


@dataclass(frozen=True)
class Verdict:
    valid: bool
    task: TaskType | None
    parsed: dict
    ground_truth: GroundTruth | None = None
    failure: VerdictFailure | None = None
    intermediates: tuple = ()

    def __post_init__(self):
        if self.valid and (self.ground_truth is None or self.failure is not None):
            raise ValueError("valid verdicts carry ground truth and no failure")
        if not self.valid and self.failure is None:
            raise ValueError("invalid verdicts carry a failure record")

    def to_json(self) -> dict:
        parsed = {}
        for key, value in self.parsed.items():
            if isinstance(value, (list, tuple)):
                parsed[key] = list(value)
            else:
                parsed[key] = value
        out: dict = {
            "valid": self.valid,
            "task": self.task.value if self.task else None,
            "parsed": parsed,
            "ground_truth": self.ground_truth.to_json() if self.ground_truth else None,
            "failure": self.failure.to_json() if self.failure else None,
            "intermediates": [
                {"name": name, "value": _json_value(value)}
                for name, value in self.intermediates
            ],
        }
        return out

    def to_json_line(self) -> str:
        return jsonutil.dumps(self.to_json())


def _json_value(value):
    if isinstance(value, DirectionSet):
        return value.ordered()
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    return value


@dataclass(frozen=True)
class DiagnosticSummary:
    """Compact rejection evidence consumed by the explanation judge."""

    task: TaskType | None
    error_code: ErrorCode
    failure_stage: int
    reason: str
    field_status: dict
    validation_issues: tuple[str, ...]

    def to_json(self) -> dict:
        return {"task": self.task.value if self.task else None,
                "error_code": self.error_code.value,
                "failure_stage": self.failure_stage,
                "reason": self.reason,
                "field_status": dict(self.field_status),
                "validation_issues": list(self.validation_issues)}

    @classmethod
    def from_json(cls, data: dict) -> "DiagnosticSummary":
        task = TaskType(data["task"]) if data.get("task") else None
        return cls(task=task,
                   error_code=ErrorCode(data["error_code"]),
                   failure_stage=int(data["failure_stage"]),
                   reason=data.get("reason", ""),
                   field_status=dict(data.get("field_status") or {}),
                   validation_issues=tuple(data.get("validation_issues") or ()))


def verdict_to_diagnostics(verdict: Verdict) -> DiagnosticSummary:
    if verdict.valid:
        raise CalledOnValidVerdict("diagnostics exist only for invalid verdicts")
    failure = verdict.failure
    field_status = {}
    for key, value in verdict.parsed.items():
        if value is None:
            field_status[key] = "null"
        elif isinstance(value, (list, tuple)) and any(v is None for v in value):
            field_status[key] = "partial"
        else:
            field_status[key] = "resolved"
    issues = [f"stage {failure.failure_stage}: {failure.reason}"]
    return DiagnosticSummary(
        task=verdict.task,
        error_code=failure.error_code,
        failure_stage=failure.failure_stage,
        reason=failure.reason,
        field_status=field_status,
        validation_issues=tuple(issues),
    )


@dataclass
class _StageState:
    outcome_flags: dict = field(default_factory=lambda: {
        "c_mode": False, "c_extract": False, "c_pool": False,
        "c_schema": False, "c_solver": False})

    def passed(self, flag: str):
        self.outcome_flags[flag] = True

    def outcome(self) -> ValidationOutcome:
        return ValidationOutcome(**self.outcome_flags)


def _fail(task, parsed, state: _StageState, code: ErrorCode, reason: str,
          intermediates=()) -> Verdict:
    failure = VerdictFailure(error_code=code, failure_stage=ERROR_STAGE[code],
                             outcome=state.outcome(), reason=reason)
    return Verdict(valid=False, task=task, parsed=parsed, failure=failure,
                   intermediates=tuple(intermediates)[:MAX_INTERMEDIATES])


def verify(question, declared_task, context: ContextRef, env: SceneIndex,
           extractor: Extractor | None = None,
           aliases: AliasTable | None = None,
           ontology=None) -> Verdict:
    """Judge a question against a loaded scene; never raises for bad input.

    `question` is either raw text or a StructuredQuestion whose params skip
    the extraction stage. All failures come back in-band as invalid
    Verdicts carrying an error code, failing stage, and diagnostics.
    """
    state = _StageState()
    extractor = extractor or TemplateExtractor()
    aliases = aliases or default_aliases()
    ontology = ontology or default_ontology()

    # Stage 1: task normalization and modality contract
    task = normalize_task_name(declared_task)
    if task is None:
        return _fail(None, {}, state, ErrorCode.MODE_MISMATCH,
                     f"unknown task name: {declared_task!r}")
    schema = SCHEMAS[task]
    n_frames = len(context.frame_ids)
    if n_frames > 2 or len(set(context.frame_ids)) != n_frames:
        return _fail(task, {}, state, ErrorCode.MODE_MISMATCH,
                     f"malformed frame list {context.frame_ids}")
    if context.modality is not schema.modality:
        return _fail(task, {}, state, ErrorCode.MODE_MISMATCH,
                     f"task {task.value} needs {schema.modality.value} input, "
                     f"context is {context.modality.value}")
    state.passed("c_mode")

    # Stage 2: context injection
    if context.scene_id not in env:
        return _fail(task, {}, state, ErrorCode.CONTEXT_MISSING,
                     f"scene {context.scene_id!r} is not loaded")
    scene = env.scene(context.scene_id)
    pools = env.pools(context.scene_id)
    known_frames = {f.frame_id for f in scene.frames}
    missing = [f for f in context.frame_ids if f not in known_frames]
    if missing:
        return _fail(task, {}, state, ErrorCode.CONTEXT_MISSING,
                     f"frames {missing} absent from scene {context.scene_id!r}")
    scene_ctx = SceneContext(scene=scene, pools=pools, context=context)

    # Stage 3: structured extraction with heuristic fallback
    if isinstance(question, StructuredQuestion):
        raw_params = {r.name: question.params.get(r.name) for r in schema.roles}
        text = question.raw_text
    else:
        text = str(question)
        raw_params = extractor.extract(text, task)
        raw_params = {r.name: raw_params.get(r.name) for r in schema.roles}
    raw_params = _heuristic_fallback(raw_params, schema, pools, context)
    null_roles = [name for name, value in raw_params.items() if value is None]
    if null_roles:
        return _fail(task, raw_params, state, ErrorCode.EXTRACTION_FAILED,
                     f"unresolved fields after extraction: {null_roles}")
    state.passed("c_extract")

    # Stage 4: canonicalization, sanitization, region anchor resolution
    parsed = sanitize(raw_params, pools, task, context, aliases)
    resolved_anchor = None
    if task is TaskType.CAM_REGION_POSITION and parsed.get("region"):
        ref = parsed.get("reference_image")
        if ref in (1, 2):
            ref_frame = context.frame_ids[ref - 1]
            anchors = pools.region_anchors.get(ref_frame, frozenset())
            resolved_anchor = resolve_region(parsed["region"], ontology, anchors)
            parsed = dict(parsed)
            parsed["resolved_anchor"] = resolved_anchor

    # Stage 5: rule-based rejection (pool, roles, lists)
    verdict = _stage5(task, schema, raw_params, parsed, pools, context, state)
    if verdict is not None:
        return verdict
    state.passed("c_schema")

    # Stage 6: deterministic rubric execution
    try:
        gt, intermediates = solve(task, parsed, scene_ctx)
    except DegeneratePremise as exc:
        return _fail(task, parsed, state, ErrorCode.DEGENERATE_PREMISE, str(exc))
    except SolverUnavailable as exc:
        return _fail(task, parsed, state, ErrorCode.SOLVER_UNAVAILABLE, str(exc))
    state.passed("c_solver")
    return Verdict(valid=True, task=task, parsed=parsed, ground_truth=gt,
                   intermediates=tuple(intermediates)[:MAX_INTERMEDIATES])


def _heuristic_fallback(params: dict, schema, pools, context) -> dict:
    """Fill a null role only when exactly one pool member remains possible."""
    out = dict(params)
    used = {v for v in out.values() if isinstance(v, str)}
    for value in out.values():
        if isinstance(value, (list, tuple)):
            used.update(v for v in value if isinstance(v, str))
    for role in schema.roles:
        if out.get(role.name) is not None:
            continue
        if role.pool in (PoolKind.IMAGE_INDEX, PoolKind.REGION_PHRASE) or role.is_list:
            continue
        ref = out.get("reference_image")
        ref_frame = None
        if context.modality is Modality.IMAGE_PAIR and ref in (1, 2):
            ref_frame = context.frame_ids[ref - 1]
        try:
            pool = role_pool(role.pool, pools, context, ref_frame)
        except (ValueError, IndexError):
            continue
        candidates = sorted(pool - used)
        if len(candidates) == 1:
            out[role.name] = candidates[0]
            used.add(candidates[0])
    return out


def _stage5(task, schema, raw_params, parsed, pools, context,
            state: _StageState) -> Verdict | None:
    """B.1.1 structural constraints; returns a failure verdict or None."""
    ref = parsed.get("reference_image")
    ref_frame = None
    if context.modality is Modality.IMAGE_PAIR and ref in (1, 2):
        ref_frame = context.frame_ids[ref - 1]

    # pool membership (labels nulled during sanitization were extracted but
    # fall outside the permitted pool)
    for role in schema.roles:
        value = parsed.get(role.name)
        if role.pool is PoolKind.IMAGE_INDEX:
            if value not in (1, 2):
                return _fail(task, parsed, state, ErrorCode.POOL_VIOLATION,
                             f"{role.name} must be image 1 or 2, got {value!r}")
            continue
        if role.pool is PoolKind.REGION_PHRASE:
            if parsed.get("resolved_anchor") is None:
                return _fail(task, parsed, state, ErrorCode.POOL_VIOLATION,
                             f"region {value!r} resolves to no grounded anchor")
            continue
        pool = role_pool(role.pool, pools, context, ref_frame)
        if role.is_list:
            values = value if isinstance(value, (list, tuple)) else [value]
            for i, item in enumerate(values):
                if item is None or item not in pool:
                    offender = raw_params.get(role.name)
                    raw = offender[i] if isinstance(offender, (list, tuple)) \
                        and i < len(offender) else item
                    return _fail(
                        task, parsed, state, ErrorCode.POOL_VIOLATION,
                        f"candidate {raw!r} is outside the grounded pool "
                        f"for {role.name}")
        else:
            if value is None or value not in pool:
                return _fail(task, parsed, state, ErrorCode.POOL_VIOLATION,
                             f"label {raw_params.get(role.name)!r} is outside "
                             f"the grounded pool for {role.name}")
    state.passed("c_pool")

    # distinct-field-group constraints
    for group in schema.distinct_groups:
        seen: dict = {}
        for name in group:
            value = parsed.get(name)
            if value in seen:
                return _fail(task, parsed, state, ErrorCode.ROLE_CONFLICT,
                             f"roles {seen[value]} and {name} share the same "
                             f"object {value!r}")
            seen[value] = name

    # list constraints, then self-in-candidates
    for role in schema.roles:
        if not role.is_list:
            continue
        values = parsed.get(role.name)
        if not isinstance(values, (list, tuple)) or not values:
            return _fail(task, parsed, state, ErrorCode.LIST_INVALID,
                         f"{role.name} must be a non-empty list")
        if len(values) < role.list_min or len(values) > role.list_max:
            return _fail(task, parsed, state, ErrorCode.LIST_INVALID,
                         f"{role.name} needs {role.list_min} entries, "
                         f"got {len(values)}")
        if len(set(values)) != len(values):
            return _fail(task, parsed, state, ErrorCode.LIST_INVALID,
                         f"{role.name} contains duplicates")
        anchor = parsed.get("anchor")
        if anchor is not None and anchor in values:
            return _fail(task, parsed, state, ErrorCode.SELF_IN_CANDIDATES,
                         f"query target {anchor!r} appears in its own "
                         f"candidate set")
    return None
