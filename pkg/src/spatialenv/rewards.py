"""Reward computation for both roles: format gates, accuracy grids,
observation and explanation judging.

All default judges are deterministic rule tables so a full self-play run
is replayable bit-for-bit; external judges can wrap a chat endpoint via
ServiceJudge.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Protocol

from .errors import NonFiniteInput
from .geometry import DirectionSet
from .pipeline import DiagnosticSummary, ErrorCode
from .tasks import (GroundTruth, GroundTruthKind, SCHEMAS, TASK_OUTPUT_KIND,
                    TaskType)

# ---------------------------------------------------------------------------
# Format scores
# ---------------------------------------------------------------------------

_TAG = re.compile(r"</?[a-zA-Z][a-zA-Z0-9_]*>")


def _tag_tokens(text: str) -> list[str]:
    return _TAG.findall(text)


def questioner_format(text: str) -> tuple[int, bool]:
    """(f_fmt, severe) for an observation+question response.

    f_fmt = 1 only for exactly one <observation> element followed by one
    <question> element, both non-empty, with no other tags. Severe failures
    (empty output, unclosed or interleaved tags) earn the -1 reward.
    """
    if not text or not text.strip():
        return 0, True
    tokens = _tag_tokens(text)
    opens = [t for t in tokens if not t.startswith("</")]
    closes = [t for t in tokens if t.startswith("</")]
    for name in ("observation", "question"):
        if opens.count(f"<{name}>") != closes.count(f"</{name}>"):
            return 0, True  # unclosed tag
    if tokens != ["<observation>", "</observation>", "<question>", "</question>"]:
        # right multiset but wrong order means interleaved/nested tags
        if (sorted(tokens) ==
                sorted(["<observation>", "</observation>", "<question>", "</question>"])
                and _interleaved(text)):
            return 0, True
        return 0, False
    obs = extract_tag(text, "observation")
    qst = extract_tag(text, "question")
    if not obs or not obs.strip() or not qst or not qst.strip():
        return 0, False
    return 1, False


def _interleaved(text: str) -> bool:
    spans = {}
    for name in ("observation", "question"):
        o = text.find(f"<{name}>")
        c = text.find(f"</{name}>")
        if o == -1 or c == -1 or c < o:
            return True
        spans[name] = (o, c)
    a, b = spans["observation"], spans["question"]
    return not (a[1] < b[0] or b[1] < a[0])


def extract_tag(text: str, name: str) -> str | None:
    m = re.search(f"<{name}>(.*?)</{name}>", text, re.S)
    return m.group(1) if m else None


def solver_format(text: str) -> int:
    """1: exactly one <answer> element and nothing else tag-like;
    0: no tags at all; -1: multiple or foreign tags."""
    if text is None:
        return 0
    answers = re.findall(r"<answer>.*?</answer>", text, re.S)
    stripped = re.sub(r"<answer>.*?</answer>", "", text, flags=re.S)
    leftover = _tag_tokens(stripped)
    if len(answers) == 1 and not leftover:
        return 1
    if not answers and not leftover:
        return 0
    return -1


# ---------------------------------------------------------------------------
# Accuracy grids
# ---------------------------------------------------------------------------

RELATIVE_EPS = 1e-9
# 1 - c for c in LinSpace(0.50, 0.95, 11): coarse to strict tolerance bands.
RELATIVE_THRESHOLDS = tuple(1.0 - (0.50 + 0.045 * k) for k in range(11))


def relative_accuracy(pred: float, gt: float) -> float:
    """Fraction of the 11 tolerance bands the prediction satisfies."""
    if not (math.isfinite(pred) and math.isfinite(gt)):
        raise NonFiniteInput(f"relative_accuracy({pred}, {gt})")
    d_rel = abs(pred - gt) / max(gt, RELATIVE_EPS)
    passed = sum(1 for thr in RELATIVE_THRESHOLDS if d_rel <= thr)
    return passed / 11.0


def counting_accuracy(pred: int, gt: int) -> float:
    err = abs(int(pred) - int(gt))
    if err == 0:
        return 1.0
    if err <= 1:
        return 0.3
    if err <= 2:
        return 0.1
    return 0.0


def direction_set_accuracy(pred: DirectionSet | None, gt: DirectionSet,
                           partial_credit: bool) -> float:
    """1.0 on equality; 0.5 for a proper non-empty subset either way when
    partial credit applies; otherwise 0."""
    if pred is None:
        return 0.0
    a, b = pred.components, gt.components
    if a == b:
        return 1.0
    if partial_credit and (a < b or b < a):
        return 0.5
    return 0.0


# ---------------------------------------------------------------------------
# Answer parsing
# ---------------------------------------------------------------------------

DIRECTION_ALIASES = {
    "forward": "front", "forwards": "front", "ahead": "front",
    "backward": "back", "backwards": "back", "behind": "back",
    "above": "up", "upward": "up", "upwards": "up",
    "below": "down", "downward": "down", "downwards": "down",
    "counterclockwise": "left", "counter-clockwise": "left",
    "anticlockwise": "left", "anti-clockwise": "left",
    "clockwise": "right",
}

_NUMBER = re.compile(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?")

# multiplicative factor to meters / square meters
_LENGTH_UNITS = {
    "mm": 0.001, "millimeter": 0.001, "millimeters": 0.001,
    "cm": 0.01, "centimeter": 0.01, "centimeters": 0.01,
    "m": 1.0, "meter": 1.0, "meters": 1.0, "metre": 1.0, "metres": 1.0,
    "km": 1000.0, "kilometer": 1000.0, "kilometers": 1000.0,
}
_AREA_UNITS = {
    "m^2": 1.0, "m2": 1.0, "m²": 1.0, "sq m": 1.0, "sqm": 1.0,
    "square meter": 1.0, "square meters": 1.0, "square metre": 1.0,
    "square metres": 1.0,
    "cm^2": 1e-4, "cm2": 1e-4, "cm²": 1e-4,
    "square centimeter": 1e-4, "square centimeters": 1e-4,
}
_TASK_UNIT_FACTOR = {"m": 1.0, "cm": 0.01, "m^2": 1.0}


def _parse_metric(payload: str, task_unit: str) -> float | None:
    m = _NUMBER.search(payload)
    if not m:
        return None
    value = float(m.group(0))
    tail = payload[m.end():].strip().lower().rstrip(".!")
    table = _AREA_UNITS if task_unit == "m^2" else _LENGTH_UNITS
    factor_to_base = None
    for unit in sorted(table, key=len, reverse=True):
        if tail.startswith(unit):
            factor_to_base = table[unit]
            break
    if factor_to_base is None:
        return value  # unitless answers are read in the task's unit
    base = value * factor_to_base  # meters or square meters
    return base / _TASK_UNIT_FACTOR[task_unit]


def parse_direction_set(payload: str) -> DirectionSet | None:
    """Decompose 'front-left', 'down and right', etc. into a DirectionSet."""
    words = re.split(r"[\s\-/,]+", payload.strip().lower())
    toks = []
    for word in words:
        if not word or word in ("and", "the", "to", "of"):
            continue
        tok = DIRECTION_ALIASES.get(word, word)
        if tok in ("front", "back", "left", "right", "up", "down"):
            toks.append(tok)
        elif word not in ("slightly", "mostly", "somewhat"):
            return None
    if not toks:
        return None
    try:
        return DirectionSet(toks)
    except ValueError:
        return None


def _normalize_choice(payload: str) -> str:
    text = payload.strip().lower().rstrip(".!")
    text = re.sub(r"\s+", " ", text)
    compact = text.replace("-", " ").replace("_", " ")
    if compact in ("same level", "samelevel", "level", "equal height"):
        return "same_level"
    m = re.fullmatch(r"image\s*([12])", compact)
    if m:
        return f"image{m.group(1)}"
    return text


def parse_answer(text: str, task: TaskType, gt_kind: GroundTruthKind | None = None):
    """Typed prediction from an <answer> payload (or bare text); None when
    unparseable. Metric tasks convert explicit units to the task's unit."""
    payload = extract_tag(text, "answer")
    if payload is None:
        payload = text
    payload = payload.strip()
    if not payload:
        return None
    kind = gt_kind or TASK_OUTPUT_KIND[task]
    if kind is GroundTruthKind.COUNT:
        m = _NUMBER.search(payload)
        if not m:
            return None
        try:
            value = float(m.group(0))
        except ValueError:
            return None
        if value != int(value):
            return None
        return int(value)
    if kind is GroundTruthKind.METRIC:
        return _parse_metric(payload, SCHEMAS[task].unit or "m")
    if kind in (GroundTruthKind.DIRECTION, GroundTruthKind.MOTION):
        return parse_direction_set(payload)
    return _normalize_choice(payload)

# partial credit applies to single-view and camera-centric direction tasks,
# not to scene-level relative direction
_PARTIAL_CREDIT = {
    TaskType.RELATIVE_DIRECTION: False,
    TaskType.SV_RELATIVE_DIRECTION: True,
    TaskType.CAM_CAM_POSITION: True,
    TaskType.CAM_OBJ_POSITION: True,
    TaskType.CAM_REGION_POSITION: True,
    TaskType.CAMERA_MOTION: True,
}


def solver_accuracy(pred, gt: GroundTruth, task: TaskType) -> float:
    """Per-task accuracy of a typed prediction against ground truth."""
    if pred is None:
        return 0.0
    kind = gt.kind
    if kind is GroundTruthKind.COUNT:
        return counting_accuracy(pred, gt.value)
    if kind is GroundTruthKind.METRIC:
        return relative_accuracy(float(pred), float(gt.value))
    if kind in (GroundTruthKind.DIRECTION, GroundTruthKind.MOTION):
        if isinstance(pred, str):
            pred = parse_direction_set(pred)
        return direction_set_accuracy(pred, gt.value, _PARTIAL_CREDIT[task])
    if kind is GroundTruthKind.TERNARY:
        choice = str(pred)
        if choice == "same":
            return 1.0 if gt.value == "same" else 0.0
        winner = {"obj1": gt.object_a, "obj2": gt.object_b}.get(gt.value)
        return 1.0 if winner is not None and choice == winner else 0.0
    # elevation / visibility / plain label: exact match after normalization
    return 1.0 if str(pred) == str(gt.value) else 0.0


def score_answer(text: str, gt: GroundTruth, task: TaskType) -> float:
    """Convenience: parse the <answer> payload and score it."""
    return solver_accuracy(parse_answer(text, task, gt.kind), gt, task)


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------

class Judge(Protocol):
    def score_observation(self, observation: str, question: str,
                          task: TaskType) -> float:
        """Rubric grade in {1.0, 0.6, 0.3, 0.0}."""
        ...

    def score_explanation(self, explanation: str,
                          diagnostics: DiagnosticSummary) -> float:
        """Rubric grade in {0.0, 0.3, 0.6, 1.0}."""
        ...


# Canonical phrase per code (grade 1.0 when the explanation states it) and
# family keywords (grade 0.6 when the right failure family is named).
CANONICAL_FAILURE_PHRASES: dict[ErrorCode, str] = {
    ErrorCode.MODE_MISMATCH: "input modality does not match the task",
    ErrorCode.CONTEXT_MISSING: "scene context could not be resolved",
    ErrorCode.EXTRACTION_FAILED: "required fields could not be extracted",
    ErrorCode.POOL_VIOLATION: "label outside the grounded pool",
    ErrorCode.ROLE_CONFLICT: "same object used in conflicting roles",
    ErrorCode.LIST_INVALID: "candidate list is structurally invalid",
    ErrorCode.SELF_IN_CANDIDATES: "query target appears in its own candidate set",
    ErrorCode.DEGENERATE_PREMISE: "geometrically degenerate premise",
    ErrorCode.SOLVER_UNAVAILABLE: "required geometric inputs are unavailable",
}

_FAMILY_KEYWORDS: dict[ErrorCode, tuple[str, ...]] = {
    ErrorCode.MODE_MISMATCH: ("modality", "input mode", "wrong kind of input"),
    ErrorCode.CONTEXT_MISSING: ("context", "scene is missing", "frame is missing"),
    ErrorCode.EXTRACTION_FAILED: ("extraction", "extract", "missing field",
                                  "null field", "could not parse"),
    ErrorCode.POOL_VIOLATION: ("pool", "grounded", "not in the scene",
                               "not present in the scene"),
    ErrorCode.ROLE_CONFLICT: ("role", "same object", "duplicate object",
                              "conflicting"),
    ErrorCode.LIST_INVALID: ("candidate list", "candidates", "list"),
    ErrorCode.SELF_IN_CANDIDATES: ("own candidate", "itself",
                                   "target in the candidates"),
    ErrorCode.DEGENERATE_PREMISE: ("degenerate", "trivial", "uninformative",
                                   "too close to call", "same level"),
    ErrorCode.SOLVER_UNAVAILABLE: ("unavailable", "missing pose",
                                   "missing metadata", "cannot compute"),
}

_VALID_CLAIM = re.compile(r"\bvalid\b")
_INVALID_CLAIM = re.compile(r"\b(invalid|not valid|ill-posed|cannot be answered|"
                            r"unanswerable|rejected)\b")


class DeterministicJudge:
    """Rule-table stand-in for the text judges; fully reproducible."""

    def score_observation(self, observation: str, question: str,
                          task: TaskType) -> float:
        obs = (observation or "").strip()
        if not obs:
            return 0.0
        words = obs.split()
        if len(words) < 5:
            return 0.0
        # "grounded" here: the observation names the question's own subject
        q_words = {w.strip(".,?!").lower() for w in (question or "").split()}
        o_words = {w.strip(".,?!").lower() for w in words}
        content = {w for w in q_words & o_words
                   if len(w) > 3 and w not in ("image", "this", "that", "room",
                                               "which", "direction", "relative",
                                               "camera")}
        if not content:
            return 0.3
        if len(words) < 15:
            return 0.6
        return 1.0

    def score_explanation(self, explanation: str,
                          diagnostics: DiagnosticSummary) -> float:
        text = (explanation or "").strip().lower()
        if not text:
            return 0.0
        payload = extract_tag(explanation, "answer")
        if payload is not None:
            text = (payload + " " + text).lower()
        code = diagnostics.error_code
        if CANONICAL_FAILURE_PHRASES[code] in text:
            return 1.0
        claims_invalid = bool(_INVALID_CLAIM.search(text))
        claims_valid = bool(_VALID_CLAIM.search(text)) and "invalid" not in text
        if claims_valid:
            return 0.0
        if any(kw in text for kw in _FAMILY_KEYWORDS[code]):
            return 0.6
        if claims_invalid:
            return 0.3
        return 0.0


class ServiceJudge:
    """Judge backed by a chat-completion endpoint (env-configured);
    falls back to the deterministic judge when the call fails."""

    def __init__(self, base_url: str, model: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._fallback = DeterministicJudge()

    @classmethod
    def from_env(cls) -> "ServiceJudge":
        import os
        url = os.environ.get("SPATIALENV_JUDGE_URL")
        if not url:
            raise RuntimeError("SPATIALENV_JUDGE_URL is not set")
        return cls(url, os.environ.get("SPATIALENV_JUDGE_MODEL", "default"),
                   float(os.environ.get("SPATIALENV_JUDGE_TIMEOUT", "30")))

    def _call(self, prompt: str, grid: tuple[float, ...]) -> float | None:
        import json as _json
        import urllib.request
        body = _json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/chat/completions", data=body,
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = _json.loads(resp.read().decode("utf-8"))
            content = payload["choices"][0]["message"]["content"]
            m = re.search(r"(1\.0|0\.6|0\.3|0\.0|0|1)", content)
            if not m:
                return None
            value = float(m.group(1))
            return value if value in grid else None
        except Exception:
            return None

    def score_observation(self, observation, question, task):
        prompt = ("Grade this observation as a visual lead-in for the "
                  f"question on the grid 1.0/0.6/0.3/0.0.\nObservation: "
                  f"{observation}\nQuestion: {question}\nTask: {task.value}\n"
                  "Output only the score.")
        value = self._call(prompt, (1.0, 0.6, 0.3, 0.0))
        if value is None:
            return self._fallback.score_observation(observation, question, task)
        return value

    def score_explanation(self, explanation, diagnostics):
        prompt = ("Grade whether this explanation captures the validator's "
                  "failure reason on the grid 1.0/0.6/0.3/0.0.\nDiagnostics: "
                  f"{diagnostics.to_json()}\nExplanation: {explanation}\n"
                  "Output only the score.")
        value = self._call(prompt, (1.0, 0.6, 0.3, 0.0))
        if value is None:
            return self._fallback.score_explanation(explanation, diagnostics)
        return value


def explanation_score(explanation: str, diagnostics: DiagnosticSummary,
                      judge: Judge | None = None) -> float:
    return (judge or DeterministicJudge()).score_explanation(explanation, diagnostics)


# ---------------------------------------------------------------------------
# Reward composition
# ---------------------------------------------------------------------------

OBS_FLOOR = 0.1


def observation_factor(judge_score: float | None, eligible: bool) -> float:
    """f_obs: judge score floored at 0.1 when eligible, else exactly 0."""
    if not eligible:
        return 0.0
    return max(OBS_FLOOR, judge_score if judge_score is not None else 0.0)


def questioner_reward(f_fmt: int, f_valid: float, f_obs: float,
                      severe: bool) -> float:
    """-1 on severe structural failure, else 0.1*f_fmt + 0.9*f_valid*f_obs."""
    if severe:
        return -1.0
    return 0.1 * f_fmt + 0.9 * f_valid * f_obs


def solver_reward(valid_branch: bool, f_fmt: int, content_score: float) -> float:
    """Valid branch: -1 on hard format failure (f_fmt = -1), else
    0.1*f_fmt + 0.9*f_acc. Invalid branch: 0.1*f_fmt + 0.9*f_explain with
    the format score entering linearly (no hard penalty)."""
    if valid_branch and f_fmt == -1:
        return -1.0
    return 0.1 * f_fmt + 0.9 * content_score


@dataclass(frozen=True)
class QuestionerReward:
    f_fmt: int
    f_valid: float
    f_obs: float
    severe_failure: bool
    r_q: float

    @classmethod
    def compute(cls, f_fmt: int, f_valid: float, f_obs: float,
                severe: bool) -> "QuestionerReward":
        return cls(f_fmt=f_fmt, f_valid=f_valid, f_obs=f_obs,
                   severe_failure=severe,
                   r_q=questioner_reward(f_fmt, f_valid, f_obs, severe))

    def to_json(self) -> dict:
        return {"f_fmt": self.f_fmt, "f_valid": self.f_valid,
                "f_obs": self.f_obs, "severe_failure": self.severe_failure,
                "r_q": self.r_q}


@dataclass(frozen=True)
class SolverReward:
    f_fmt: int
    f_acc: float | None
    f_explain: float | None
    hard_format_failure: bool
    r_a: float

    @classmethod
    def for_valid(cls, f_fmt: int, f_acc: float) -> "SolverReward":
        hard = f_fmt == -1
        return cls(f_fmt=f_fmt, f_acc=f_acc, f_explain=None,
                   hard_format_failure=hard,
                   r_a=solver_reward(True, f_fmt, f_acc))

    @classmethod
    def for_invalid(cls, f_fmt: int, f_explain: float) -> "SolverReward":
        return cls(f_fmt=f_fmt, f_acc=None, f_explain=f_explain,
                   hard_format_failure=False,
                   r_a=solver_reward(False, f_fmt, f_explain))

    def to_json(self) -> dict:
        return {"f_fmt": self.f_fmt, "f_acc": self.f_acc,
                "f_explain": self.f_explain,
                "hard_format_failure": self.hard_format_failure,
                "r_a": self.r_a}
