"""Structured questions: rendering, extraction, sanitization, signatures.

Rendering and the reference extractor are exact inverses over the template
grammar, so generated corpora round-trip with no language model in the
loop. An external chat-completion endpoint can be plugged in through
ServiceExtractor for free-form text.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from importlib import resources
from typing import Protocol

from .errors import CrossContextInput, IncompleteParams
from .tasks import ContextRef, Modality, PoolKind, SCHEMAS, TaskType

_WS = re.compile(r"\s+")

# Words dropped before word-level pool matching; articles plus the handful
# of descriptors questioners like to prepend.
STOPWORDS = frozenset("""
the a an this that these those my your our its his her their
wooden metal plastic glass leather fabric
big small large little long short tall wide narrow
old new modern antique
red blue green black white brown grey gray beige dark light
""".split())


def _clean(text: str) -> str:
    text = unicodedata.normalize("NFKC", text)
    return _WS.sub(" ", text).strip().lower()


# ---------------------------------------------------------------------------
# Alias table and region ontology
# ---------------------------------------------------------------------------

def _load_data(name: str) -> dict:
    with resources.files("spatialenv.data").joinpath(name).open("r") as fh:
        return json.load(fh)


class AliasTable:
    """Lexical alias map (e.g. nightstand -> night stand)."""

    def __init__(self, mapping: dict[str, str]):
        self.mapping = {_clean(k): _clean(v) for k, v in mapping.items()}

    @classmethod
    def default(cls) -> "AliasTable":
        return cls(_load_data("aliases.json"))

    @classmethod
    def from_file(cls, path) -> "AliasTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def apply(self, phrase: str) -> str:
        return self.mapping.get(phrase, phrase)


class RegionOntology:
    """Region phrase -> ordered anchor label list; list order is priority."""

    def __init__(self, mapping: dict[str, list[str]]):
        self.mapping = {_clean(k): [_clean(a) for a in v]
                        for k, v in mapping.items()}

    @classmethod
    def default(cls) -> "RegionOntology":
        return cls(_load_data("ontology.json"))

    @classmethod
    def from_file(cls, path) -> "RegionOntology":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def phrases(self) -> list[str]:
        return list(self.mapping)

    def anchors_for(self, phrase: str) -> list[str]:
        return self.mapping.get(_clean(phrase), [])


_DEFAULT_ALIASES: AliasTable | None = None
_DEFAULT_ONTOLOGY: RegionOntology | None = None


def default_aliases() -> AliasTable:
    global _DEFAULT_ALIASES
    if _DEFAULT_ALIASES is None:
        _DEFAULT_ALIASES = AliasTable.default()
    return _DEFAULT_ALIASES


def default_ontology() -> RegionOntology:
    global _DEFAULT_ONTOLOGY
    if _DEFAULT_ONTOLOGY is None:
        _DEFAULT_ONTOLOGY = RegionOntology.default()
    return _DEFAULT_ONTOLOGY


# ---------------------------------------------------------------------------
# Structured question
# ---------------------------------------------------------------------------

@dataclass
class StructuredQuestion:
    task: TaskType
    params: dict
    context: ContextRef
    raw_text: str | None = None
    observation: str | None = None

    def complete(self) -> bool:
        schema = SCHEMAS[self.task]
        for role in schema.roles:
            value = self.params.get(role.name)
            if value is None:
                return False
            if role.is_list and (not isinstance(value, (list, tuple)) or
                                 any(v is None for v in value)):
                return False
        return True


def _plural(label: str) -> str:
    # Invertible by construction: rendering always appends exactly one 's',
    # extraction strips exactly one. Grammar loses to determinism here.
    return label + "s"


def _singular(phrase: str) -> str:
    return phrase[:-1] if phrase.endswith("s") else phrase


TEMPLATES: dict[TaskType, str] = {
    TaskType.OBJECT_COUNTING:
        "How many {target_plural} are there in this room?",
    TaskType.OBJECT_SIZE:
        "What is the longest edge of the {target} in centimeters?",
    TaskType.ABSOLUTE_DISTANCE:
        "What is the straight-line distance between the {object_a} and the "
        "{object_b} at their nearest points, in meters?",
    TaskType.RELATIVE_DISTANCE:
        "Among the {c0}, the {c1}, and the {c2}, which is closest to the "
        "{anchor} at their nearest points?",
    TaskType.RELATIVE_DIRECTION:
        "If I stand at the {anchor} and face the {facing}, in which "
        "direction is the {target} relative to me?",
    TaskType.ROOM_SIZE:
        "Approximately how many square meters is this room?",
    TaskType.SV_RELATIVE_DIRECTION:
        "In this image, in which direction is the {target} relative to the "
        "{reference}?",
    TaskType.CAMERA_OBJECT_DISTANCE:
        "In this image, what is the distance from the camera to the "
        "{target} in meters?",
    TaskType.DEPTH_ORDER:
        "In this image, which is closer to the camera, the {object_a} or "
        "the {object_b}?",
    TaskType.CAM_CAM_POSITION:
        "When you took Image {reference_image}, where is Image "
        "{other_image}'s camera relative to you?",
    TaskType.CAM_CAM_ELEVATION:
        "Compared to Image {other_image}'s camera, is Image "
        "{reference_image}'s camera higher or lower?",
    TaskType.VISIBILITY_COMPARISON:
        "For the {target}, which image shows it more clearly, Image 1 or "
        "Image 2?",
    TaskType.CAM_OBJ_POSITION:
        "When I took Image {reference_image}, in which direction is the "
        "{target} relative to me?",
    TaskType.CAM_REGION_POSITION:
        "When you took Image {reference_image}, in which direction is the "
        "{region} relative to you?",
    TaskType.CAMERA_MOTION:
        "Based on this image sequence, in which direction is the camera "
        "moving?",
    TaskType.ATTRIBUTE_MEASUREMENT:
        "Which has the larger longest edge, the {object_a} or the "
        "{object_b}?",
}


def render_question(q: StructuredQuestion) -> str:
    """Deterministic English question text from the task's template."""
    if not q.complete():
        missing = [r.name for r in SCHEMAS[q.task].roles
                   if q.params.get(r.name) is None]
        raise IncompleteParams(f"{q.task.value}: missing roles {missing}")
    params = dict(q.params)
    fills: dict[str, object] = {}
    for role in SCHEMAS[q.task].roles:
        value = params[role.name]
        if role.is_list:
            for i, item in enumerate(value):
                fills[f"c{i}"] = item
        else:
            fills[role.name] = value
    if q.task is TaskType.OBJECT_COUNTING:
        fills["target_plural"] = _plural(str(fills.pop("target")))
    if "reference_image" in fills:
        ref = int(fills["reference_image"])
        fills["other_image"] = 2 if ref == 1 else 1
    return TEMPLATES[q.task].format(**fills)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

class Extractor(Protocol):
    def extract(self, text: str, task: TaskType) -> dict:
        """Return role -> value-or-None for the task's object/region roles."""
        ...


def resolve_camera_reference(text: str, task: TaskType):
    """Infer the observer image index from the question text.

    Camera-reference parsing is separate from entity extraction: 'took
    Image N' names the reference directly; 'where is Image N's camera'
    marks N as the queried target (the other frame observes); 'compared
    to Image N' likewise points away from the reference; 'is Image N's
    camera higher' keeps N as the subject being asked about.
    """
    low = text.lower()
    m = re.search(r"(?:when (?:you|i) took|taking) image\s*([12])", low)
    if m:
        return int(m.group(1))
    m = re.search(r"compared to image\s*([12])'s camera", low)
    if m:
        return 2 if int(m.group(1)) == 1 else 1
    m = re.search(r"where is image\s*([12])'s camera", low)
    if m:
        return 2 if int(m.group(1)) == 1 else 1
    m = re.search(r"is image\s*([12])'s camera", low)
    if m:
        return int(m.group(1))
    if task in (TaskType.CAM_CAM_POSITION, TaskType.CAM_CAM_ELEVATION):
        return 1  # canonical observer when the text names no index
    return None


# Per-task extraction grammar: the full-template pattern first, then
# per-field fallbacks so partially mangled questions yield partial maps.
_FULL = {
    TaskType.OBJECT_COUNTING:
        (re.compile(r"how many (.+?) are there", re.I), ("target",)),
    TaskType.OBJECT_SIZE:
        (re.compile(r"longest edge of (?:the|this) (.+?) in centimeters", re.I),
         ("target",)),
    TaskType.ABSOLUTE_DISTANCE:
        (re.compile(r"between the (.+?) and the (.+?) at (?:their )?nearest points", re.I),
         ("object_a", "object_b")),
    TaskType.RELATIVE_DISTANCE:
        (re.compile(r"among the (.+?), the (.+?), and the (.+?), which is closest "
                    r"to the (.+?) at (?:their )?nearest points", re.I),
         ("c0", "c1", "c2", "anchor")),
    TaskType.RELATIVE_DIRECTION:
        (re.compile(r"stand (?:at|near) the (.+?) and face the (.+?), in which "
                    r"direction is the (.+?) relative to me", re.I),
         ("anchor", "facing", "target")),
    TaskType.SV_RELATIVE_DIRECTION:
        (re.compile(r"in which direction is the (.+?) relative to the (.+?)\?", re.I),
         ("target", "reference")),
    TaskType.CAMERA_OBJECT_DISTANCE:
        (re.compile(r"distance from the camera to the (.+?) in meters", re.I),
         ("target",)),
    TaskType.DEPTH_ORDER:
        (re.compile(r"which is closer to the camera, the (.+?) or the (.+?)\?", re.I),
         ("object_a", "object_b")),
    TaskType.VISIBILITY_COMPARISON:
        (re.compile(r"for the (.+?), which image shows it more clearly", re.I),
         ("target",)),
    TaskType.CAM_OBJ_POSITION:
        (re.compile(r"in which direction is the (.+?) relative to me", re.I),
         ("target",)),
    TaskType.CAM_REGION_POSITION:
        (re.compile(r"in which direction is the (.+?) relative to you", re.I),
         ("region",)),
    TaskType.ATTRIBUTE_MEASUREMENT:
        (re.compile(r"which has the larger longest edge, the (.+?) or "
                    r"the (.+?)\?", re.I),
         ("object_a", "object_b")),
}

_FALLBACK: dict[TaskType, list[tuple[str, re.Pattern]]] = {
    TaskType.ABSOLUTE_DISTANCE: [
        ("object_a", re.compile(r"between the (.+?) and the ", re.I)),
        ("object_b", re.compile(r" and the (.+?) at (?:their )?nearest points", re.I)),
    ],
    TaskType.RELATIVE_DISTANCE: [
        ("anchor", re.compile(r"closest to the (.+?) at (?:their )?nearest points", re.I)),
    ],
    TaskType.RELATIVE_DIRECTION: [
        ("anchor", re.compile(r"stand (?:at|near) the (.+?) and face", re.I)),
        ("facing", re.compile(r"face the (.+?), in which direction", re.I)),
        ("target", re.compile(r"direction is the (.+?) relative to me", re.I)),
    ],
    TaskType.DEPTH_ORDER: [
        ("object_a", re.compile(r"closer to the camera, the (.+?) or", re.I)),
        ("object_b", re.compile(r" or the (.+?)\?", re.I)),
    ],
    TaskType.SV_RELATIVE_DIRECTION: [
        ("target", re.compile(r"direction is the (.+?) relative to", re.I)),
        ("reference", re.compile(r"relative to the (.+?)\?", re.I)),
    ],
}


def _phrase_or_none(raw: str | None) -> str | None:
    if raw is None:
        return None
    phrase = _clean(raw)
    return phrase or None


class TemplateExtractor:
    """Deterministic reference extractor over the template grammar."""

    def extract(self, text: str, task: TaskType) -> dict:
        schema = SCHEMAS[task]
        out: dict = {}
        for role in schema.roles:
            if role.pool is PoolKind.IMAGE_INDEX:
                out[role.name] = resolve_camera_reference(text, task)
            elif role.is_list:
                out[role.name] = None
            else:
                out[role.name] = None
        entry = _FULL.get(task)
        if entry is not None:
            pattern, groups = entry
            m = pattern.search(text)
            if m:
                values = {g: _phrase_or_none(m.group(i + 1))
                          for i, g in enumerate(groups)}
                out.update(self._assign(task, values))
            else:
                for name, pat in _FALLBACK.get(task, []):
                    fm = pat.search(text)
                    if fm:
                        out[name] = _phrase_or_none(fm.group(1))
        if task is TaskType.OBJECT_COUNTING and out.get("target"):
            out["target"] = _singular(out["target"])
        return out

    @staticmethod
    def _assign(task: TaskType, values: dict) -> dict:
        if task is TaskType.RELATIVE_DISTANCE:
            cands = [values.get("c0"), values.get("c1"), values.get("c2")]
            return {"anchor": values.get("anchor"),
                    "candidates": None if any(c is None for c in cands) else cands}
        return values


class ServiceExtractor:
    """Extractor backed by a chat-completion-style HTTP endpoint.

    Configured via environment variables SPATIALENV_EXTRACTOR_URL and
    SPATIALENV_EXTRACTOR_MODEL; falls back to the template grammar when
    the service response cannot be parsed.
    """

    def __init__(self, base_url: str, model: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._fallback = TemplateExtractor()

    @classmethod
    def from_env(cls) -> "ServiceExtractor":
        import os
        url = os.environ.get("SPATIALENV_EXTRACTOR_URL")
        if not url:
            raise RuntimeError("SPATIALENV_EXTRACTOR_URL is not set")
        return cls(url, os.environ.get("SPATIALENV_EXTRACTOR_MODEL", "default"),
                   float(os.environ.get("SPATIALENV_EXTRACTOR_TIMEOUT", "30")))

    def extract(self, text: str, task: TaskType) -> dict:
        import urllib.request
        schema = SCHEMAS[task]
        object_roles = [r.name for r in schema.roles
                        if r.pool is not PoolKind.IMAGE_INDEX]
        prompt = (
            "Role: Expert entity extractor for spatial questions.\n"
            "Extract the fields exactly as they appear, lowercase; output "
            "null for anything missing or uncertain. Respond with a JSON "
            f"object holding keys {object_roles}.\n"
            f"Task: {task.value}\nQuestion: {text}\nExtraction:")
        body = json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }).encode("utf-8")
        req = urllib.request.Request(
            self.base_url + "/chat/completions", data=body,
            headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            content = payload["choices"][0]["message"]["content"]
            fields = json.loads(content)
            out = self._fallback.extract(text, task)  # image indices + shape
            for name in object_roles:
                value = fields.get(name)
                out[name] = _phrase_or_none(value) if isinstance(value, str) else value
            return out
        except Exception:
            return self._fallback.extract(text, task)


def extract_entities(text: str, task: TaskType,
                     extractor: Extractor | None = None) -> dict:
    """Structured fields for the task; unresolvable fields are None."""
    return (extractor or TemplateExtractor()).extract(text, task)


# ---------------------------------------------------------------------------
# Sanitization and region resolution
# ---------------------------------------------------------------------------

def _edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _normalized_distance(a: str, b: str) -> float:
    longer = max(len(a), len(b))
    return _edit_distance(a, b) / longer if longer else 0.0


REMAP_THRESHOLD = 0.25


def _sanitize_label(raw: str | None, pool: frozenset | set,
                    aliases: AliasTable) -> str | None:
    """Two-layer normalization: lexical, then pool-aware remap.

    Pool membership is checked before alias substitution so a phrase that
    already names a pool label can never be aliased out of it.
    """
    if raw is None:
        return None
    phrase = _clean(str(raw))
    if phrase in pool:
        return phrase
    aliased = aliases.apply(phrase)
    if aliased in pool:
        return aliased
    # word-level match after stopword removal; longest window wins
    words = [w for w in phrase.split() if w not in STOPWORDS]
    for size in range(len(words), 0, -1):
        for start in range(len(words) - size + 1):
            window = " ".join(words[start:start + size])
            if window in pool:
                return window
            window = aliases.apply(window)
            if window in pool:
                return window
    # pool-aware remap to the nearest canonical label
    best, best_d = None, None
    for label in sorted(pool):
        dist = _normalized_distance(phrase, label)
        if best_d is None or dist < best_d:
            best, best_d = label, dist
    if best is not None and best_d is not None and best_d <= REMAP_THRESHOLD:
        return best
    return None


def role_pool(pool_kind: PoolKind, pools, context: ContextRef,
              reference_frame: int | None = None) -> frozenset:
    """Labels legal for a role of the given pool kind in this context."""
    if pool_kind is PoolKind.SCENE_ANY:
        return pools.scene_labels()
    if pool_kind is PoolKind.SCENE_UNIQUE:
        return pools.unique_scene
    if pool_kind is PoolKind.FRAME_UNIQUE:
        fid = reference_frame if reference_frame is not None else context.frame_ids[0]
        return pools.per_frame_unique.get(fid, frozenset())
    if pool_kind is PoolKind.PAIR_VISIBLE:
        f, g = context.frame_ids
        return pools.pair_visible_for(f, g)
    if pool_kind is PoolKind.PAIR_NON_AMBIGUOUS:
        f, g = context.frame_ids
        return pools.pair_non_ambiguous_for(f, g)
    raise ValueError(f"role pool not label-based: {pool_kind}")


def sanitize(params: dict, pools, task: TaskType, context: ContextRef,
             aliases: AliasTable | None = None) -> dict:
    """Normalize extracted params against the grounded pools.

    Lexical layer first (case, aliases, phrase and word-level matching),
    then pool-aware remap within normalized edit distance 0.25; labels
    that still fall outside the pool become None. Idempotent.
    """
    aliases = aliases or default_aliases()
    schema = SCHEMAS[task]
    ref = params.get("reference_image")
    ref_frame = None
    if context.modality is Modality.IMAGE_PAIR and ref in (1, 2):
        ref_frame = context.frame_ids[ref - 1]
    out: dict = dict(params)
    for role in schema.roles:
        value = params.get(role.name)
        if role.pool is PoolKind.IMAGE_INDEX:
            if isinstance(value, str) and value.strip() in ("1", "2"):
                value = int(value.strip())
            ok = isinstance(value, int) and not isinstance(value, bool) \
                and value in (1, 2)
            out[role.name] = value if ok else None
            continue
        if role.pool is PoolKind.REGION_PHRASE:
            out[role.name] = _phrase_or_none(value) if value is not None else None
            continue
        pool = role_pool(role.pool, pools, context, ref_frame)
        if role.is_list:
            if value is None:
                out[role.name] = None
            else:
                out[role.name] = [
                    _sanitize_label(v, pool, aliases) if v is not None else None
                    for v in value]
        else:
            out[role.name] = _sanitize_label(value, pool, aliases)
    return out


def resolve_region(phrase: str, ontology: RegionOntology,
                   anchors: frozenset | set) -> str | None:
    """First ontology anchor for the phrase present in the frame's anchors."""
    for anchor in ontology.anchors_for(phrase):
        if anchor in anchors:
            return anchor
    return None


# ---------------------------------------------------------------------------
# Semantic signatures and deduplication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SemanticSignature:
    task: TaskType
    normalized_params: bytes

    def hex(self) -> str:
        return self.normalized_params.hex()


# Roles whose two members are interchangeable for signature purposes.
_UNORDERED_PAIRS: dict[TaskType, tuple[str, str]] = {
    TaskType.ABSOLUTE_DISTANCE: ("object_a", "object_b"),
    TaskType.DEPTH_ORDER: ("object_a", "object_b"),
    TaskType.ATTRIBUTE_MEASUREMENT: ("object_a", "object_b"),
}


def semantic_signature(q: StructuredQuestion) -> SemanticSignature:
    """Canonical byte encoding of (task, normalized params).

    Unordered pairs sort lexicographically, candidate lists sort, image
    indices are already canonical 1/2, and role names are encoded so
    role-bearing tasks keep reference/target distinct. Raw text never
    participates.
    """
    schema = SCHEMAS[q.task]
    params = dict(q.params)
    pair = _UNORDERED_PAIRS.get(q.task)
    if pair is not None:
        a, b = params.get(pair[0]), params.get(pair[1])
        if a is not None and b is not None and str(b) < str(a):
            params[pair[0]], params[pair[1]] = b, a
    parts = [q.task.value]
    for role in schema.roles:
        value = params.get(role.name)
        if role.is_list:
            if value is None:
                encoded = "∅"
            else:
                encoded = ",".join(sorted(str(v) for v in value if v is not None))
                if any(v is None for v in value):
                    encoded = encoded + ",∅" if encoded else "∅"
        elif value is None:
            encoded = "∅"
        else:
            encoded = str(value)
        parts.append(f"{role.name}={encoded}")
    return SemanticSignature(task=q.task,
                             normalized_params="|".join(parts).encode("utf-8"))


def dedup(candidates: list[StructuredQuestion]) -> list[tuple[StructuredQuestion, int]]:
    """One representative per signature with its pre-dedup frequency.

    All candidates must come from a single source context; weights sum to
    the input length.
    """
    if not candidates:
        return []
    context_ids = {c.context.context_id for c in candidates}
    if len(context_ids) > 1:
        raise CrossContextInput(f"candidates span contexts: {sorted(context_ids)}")
    order: list[SemanticSignature] = []
    reps: dict[SemanticSignature, StructuredQuestion] = {}
    weights: dict[SemanticSignature, int] = {}
    for cand in candidates:
        sig = semantic_signature(cand)
        if sig not in reps:
            reps[sig] = cand
            weights[sig] = 0
            order.append(sig)
        weights[sig] += 1
    return [(reps[s], weights[s]) for s in order]
