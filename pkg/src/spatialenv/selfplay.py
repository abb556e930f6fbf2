"""Desk-scale self-play loop with scripted Questioner/Solver agents.

The scripted agents are parameterized oracles, not learners: the loop
exists to exercise the verifier, rewards, and curriculum mathematics end
to end, and to emit the per-iteration records an external RL trainer would
consume. Identical (config, seed) produce byte-identical logs.
"""

from __future__ import annotations

import math
import os
import random
from dataclasses import dataclass, field

from . import jsonutil
from .generator import GeneratorSpec, generate_synthetic_scene
from .pipeline import Verdict, verdict_to_diagnostics, verify
from .questions import (StructuredQuestion, default_ontology, render_question,
                        semantic_signature)
from .rewards import (CANONICAL_FAILURE_PHRASES, DeterministicJudge, Judge,
                      QuestionerReward, SolverReward, observation_factor,
                      parse_answer, questioner_format, solver_accuracy,
                      solver_format)
from .scene import SceneIndex
from .scheduler import (SchedulerConfig, SchedulerState, sample_task,
                        sampling_distribution, snapshot_digest, save_snapshot,
                        update)
from .tasks import (ContextRef, GroundTruth, GroundTruthKind, Modality,
                    SCHEMAS, TaskType, feasible_tasks, validity_factor)

SNAPSHOT_EVERY = 50


# ---------------------------------------------------------------------------
# Group-normalized advantages
# ---------------------------------------------------------------------------

def group_advantages(rewards: list[float]) -> list[float]:
    """Z-normalize within a rollout group; zero vector when the sample std
    is degenerate (below 1e-8) or the group has fewer than two members."""
    n = len(rewards)
    if n < 2:
        return [0.0] * n
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / (n - 1)
    std = math.sqrt(var)
    if std <= 1e-8:
        return [0.0] * n
    return [(r - mean) / std for r in rewards]


@dataclass(frozen=True)
class RolloutGroup:
    rewards: tuple[float, ...]
    mean: float
    std: float
    advantages: tuple[float, ...]

    @classmethod
    def from_rewards(cls, rewards) -> "RolloutGroup":
        rewards = tuple(float(r) for r in rewards)
        n = len(rewards)
        mean = sum(rewards) / n if n else 0.0
        if n >= 2:
            std = math.sqrt(sum((r - mean) ** 2 for r in rewards) / (n - 1))
        else:
            std = 0.0
        return cls(rewards=rewards, mean=mean, std=std,
                   advantages=tuple(group_advantages(list(rewards))))


# ---------------------------------------------------------------------------
# Scripted Questioner
# ---------------------------------------------------------------------------

CORRUPTIONS = ("out_of_pool_label", "role_duplication", "self_in_candidates",
               "missing_role")


@dataclass(frozen=True)
class ScriptedQuestionerConfig:
    candidates_per_context: int = 4
    invalid_injection_rate: float = 0.0
    corruption_menu: tuple[str, ...] = CORRUPTIONS

    def __post_init__(self):
        if not 0.0 <= self.invalid_injection_rate <= 1.0:
            raise ValueError("invalid_injection_rate must be in [0, 1]")
        if self.candidates_per_context < 1:
            raise ValueError("candidates_per_context must be >= 1")


def _pick(rng: random.Random, pool, k: int = 1) -> list[str]:
    ordered = sorted(pool)
    return rng.sample(ordered, k)


def _draw_params(task: TaskType, context: ContextRef, pools,
                 rng: random.Random) -> dict | None:
    """Schema-valid params for the task, or None when the pools are thin."""
    try:
        if task is TaskType.OBJECT_COUNTING:
            pool = pools.non_unique_scene or pools.unique_scene
            return {"target": _pick(rng, pool)[0]}
        if task is TaskType.OBJECT_SIZE:
            return {"target": _pick(rng, pools.unique_scene)[0]}
        if task is TaskType.ABSOLUTE_DISTANCE:
            a, b = _pick(rng, pools.unique_scene, 2)
            return {"object_a": a, "object_b": b}
        if task is TaskType.RELATIVE_DISTANCE:
            labels = _pick(rng, pools.unique_scene, 4)
            return {"anchor": labels[0], "candidates": labels[1:]}
        if task is TaskType.RELATIVE_DIRECTION:
            a, b, c = _pick(rng, pools.unique_scene, 3)
            return {"anchor": a, "facing": b, "target": c}
        if task is TaskType.ROOM_SIZE or task is TaskType.CAMERA_MOTION:
            return {}
        if task in (TaskType.SV_RELATIVE_DIRECTION, TaskType.DEPTH_ORDER):
            uf = pools.per_frame_unique[context.frame_ids[0]]
            a, b = _pick(rng, uf, 2)
            if task is TaskType.SV_RELATIVE_DIRECTION:
                return {"reference": a, "target": b}
            return {"object_a": a, "object_b": b}
        if task is TaskType.CAMERA_OBJECT_DISTANCE:
            uf = pools.per_frame_unique[context.frame_ids[0]]
            return {"target": _pick(rng, uf)[0]}
        if task in (TaskType.CAM_CAM_POSITION, TaskType.CAM_CAM_ELEVATION):
            return {"reference_image": rng.choice((1, 2))}
        if task is TaskType.VISIBILITY_COMPARISON:
            pv = pools.pair_visible_for(*context.frame_ids)
            return {"target": _pick(rng, pv)[0]}
        if task is TaskType.CAM_OBJ_POSITION:
            options = [i for i in (1, 2)
                       if pools.per_frame_unique.get(context.frame_ids[i - 1])]
            ref = rng.choice(options)
            uf = pools.per_frame_unique[context.frame_ids[ref - 1]]
            return {"reference_image": ref, "target": _pick(rng, uf)[0]}
        if task is TaskType.CAM_REGION_POSITION:
            ontology = default_ontology()
            options = []
            for ref in (1, 2):
                anchors = pools.region_anchors.get(context.frame_ids[ref - 1],
                                                   frozenset())
                for phrase in sorted(ontology.phrases()):
                    if any(a in anchors for a in ontology.anchors_for(phrase)):
                        options.append((ref, phrase))
            if not options:
                return None
            ref, phrase = rng.choice(options)
            return {"reference_image": ref, "region": phrase}
        if task is TaskType.ATTRIBUTE_MEASUREMENT:
            pa = pools.pair_non_ambiguous_for(*context.frame_ids)
            a, b = _pick(rng, pa, 2)
            return {"object_a": a, "object_b": b}
    except (ValueError, IndexError, KeyError):
        return None
    raise AssertionError(f"unhandled task {task}")


_OBS_OPENERS = (
    "Sweeping across the layout from the far wall toward the foreground",
    "Starting from the overall arrangement and moving toward the center",
    "Taking in the whole space before settling on the key objects",
)


def _observation_text(task: TaskType, params: dict, pools,
                      rng: random.Random) -> str:
    opener = rng.choice(_OBS_OPENERS)
    labels = [v for v in params.values() if isinstance(v, str)]
    for v in params.values():
        if isinstance(v, (list, tuple)):
            labels.extend(x for x in v if isinstance(x, str))
    scenery = sorted(pools.scene_labels())[:3]
    scenery_text = ", ".join(f"the {l}" for l in scenery) if scenery else "the furniture"
    if task is TaskType.ROOM_SIZE:
        focus = "the open floor suggests how many square meters the room spans"
    elif task is TaskType.CAMERA_MOTION:
        focus = "the viewpoint is clearly moving between the two frames"
    elif task in (TaskType.CAM_CAM_POSITION, TaskType.CAM_CAM_ELEVATION):
        focus = "the two viewpoints frame the scene from clearly separated positions"
    elif labels:
        focus = "the " + " and the ".join(labels[:2]) + \
            " stand out as well grounded targets here"
    else:
        focus = "the scene offers a clear spatial relation to probe"
    return (f"{opener}, the room gathers {scenery_text} into one readable "
            f"arrangement, and {focus}.")


@dataclass
class QuestionerOutput:
    text: str                      # full tagged response
    question_text: str
    observation: str
    intended_params: dict
    corruption: str | None


class ScriptedQuestioner:
    """Emits template-faithful questions, optionally corrupted on purpose."""

    def __init__(self, config: ScriptedQuestionerConfig):
        self.config = config

    def emit(self, task: TaskType, context: ContextRef, pools,
             rng: random.Random) -> list[QuestionerOutput]:
        outputs = []
        for _ in range(self.config.candidates_per_context):
            params = _draw_params(task, context, pools, rng)
            if params is None:
                params = {}
            corruption = None
            if (self.config.corruption_menu and params and
                    rng.random() < self.config.invalid_injection_rate):
                corruption = rng.choice(self.config.corruption_menu)
                params, corruption = self._corrupt(task, dict(params), corruption)
            question = StructuredQuestion(task=task, params=params, context=context)
            try:
                text = render_question(question)
            except Exception:
                text = "What can you tell me about this scene?"
            if corruption == "missing_role":
                text, applied = self._blank_one_label(text, params)
                if not applied:
                    corruption = None
            observation = _observation_text(task, params, pools, rng)
            outputs.append(QuestionerOutput(
                text=f"<observation>{observation}</observation>"
                     f"<question>{text}</question>",
                question_text=text,
                observation=observation,
                intended_params=params,
                corruption=corruption,
            ))
        return outputs

    @staticmethod
    def _corrupt(task: TaskType, params: dict, corruption: str):
        label_roles = [r.name for r in SCHEMAS[task].roles
                       if not r.is_list and isinstance(params.get(r.name), str)]
        if corruption == "out_of_pool_label" and label_roles:
            params[label_roles[0]] = "chartreuse zeppelin"
            return params, corruption
        if corruption == "role_duplication" and len(label_roles) >= 2:
            params[label_roles[1]] = params[label_roles[0]]
            return params, corruption
        if (corruption == "self_in_candidates"
                and task is TaskType.RELATIVE_DISTANCE):
            cands = list(params["candidates"])
            cands[0] = params["anchor"]
            params["candidates"] = cands
            return params, corruption
        if corruption == "missing_role" and label_roles:
            return params, corruption
        return params, None  # menu entry does not apply to this task

    @staticmethod
    def _blank_one_label(text: str, params: dict) -> tuple[str, bool]:
        for value in params.values():
            if isinstance(value, str) and f"the {value}" in text:
                return text.replace(f"the {value}", "the", 1), True
        return text, False


# ---------------------------------------------------------------------------
# Scripted Solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskProfile:
    mode: str = "bernoulli"   # exact | bernoulli | scheduled | metric_noise
    q: float = 0.8            # correctness rate for (bernoulli, scheduled)
    sigma: float = 0.0        # relative noise std for metric_noise

    def __post_init__(self):
        if self.mode not in ("exact", "bernoulli", "scheduled", "metric_noise"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must be in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class ScriptedSolverConfig:
    rollouts_per_question: int = 4
    default_profile: TaskProfile = field(default_factory=TaskProfile)
    per_task: dict = field(default_factory=dict)  # TaskType -> TaskProfile
    explain_exact_prob: float = 0.8

    def profile(self, task: TaskType) -> TaskProfile:
        return self.per_task.get(task, self.default_profile)


class ScriptedSolver:
    """Answers with configurable per-task reliability; explains invalid
    questions from the diagnostics with configurable fidelity."""

    def __init__(self, config: ScriptedSolverConfig):
        self.config = config
        self._schedule_acc: dict[TaskType, float] = {}

    def _scheduled_correct(self, task: TaskType, q: float) -> bool:
        # Bresenham-style pacing: long-run correct rate is exactly q with
        # minimal variance, which keeps curriculum tests deterministic.
        acc = self._schedule_acc.get(task, 0.0) + q
        if acc >= 1.0 - 1e-12:
            self._schedule_acc[task] = acc - 1.0
            return True
        self._schedule_acc[task] = acc
        return False

    def answer(self, task: TaskType, verdict: Verdict,
               rng: random.Random) -> str:
        profile = self.config.profile(task)
        gt = verdict.ground_truth
        if profile.mode == "metric_noise" and gt.kind is GroundTruthKind.METRIC:
            noisy = float(gt.value) * (1.0 + rng.gauss(0.0, profile.sigma))
            return f"The measurement comes to <answer>{noisy!r} {gt.unit}</answer>"
        if profile.mode == "exact":
            correct = True
        elif profile.mode == "scheduled":
            correct = self._scheduled_correct(task, profile.q)
        else:
            correct = rng.random() < profile.q
        payload = _format_gt(gt) if correct else _corrupt_gt(gt, rng)
        return f"Working through the scene step by step. <answer>{payload}</answer>"

    def explain(self, verdict: Verdict, rng: random.Random) -> str:
        diagnostics = verdict_to_diagnostics(verdict)
        if rng.random() < self.config.explain_exact_prob:
            phrase = CANONICAL_FAILURE_PHRASES[diagnostics.error_code]
            return ("The validator rejected this question: the main issue is "
                    f"a {phrase}. <answer>The question is invalid: {phrase}.</answer>")
        return ("Something is off with this question. "
                "<answer>The question is invalid.</answer>")


def _format_gt(gt) -> str:
    kind = gt.kind
    if kind is GroundTruthKind.COUNT:
        return str(int(gt.value))
    if kind is GroundTruthKind.METRIC:
        unit = {"m": "meters", "cm": "centimeters", "m^2": "square meters"}[gt.unit]
        return f"{float(gt.value)!r} {unit}"
    if kind is GroundTruthKind.MOTION:
        words = {"front": "forward", "back": "backward"}
        return "-".join(words.get(t, t) for t in gt.value.ordered())
    if kind is GroundTruthKind.DIRECTION:
        return "-".join(gt.value.ordered())
    if kind is GroundTruthKind.TERNARY:
        if gt.value == "same":
            return "same"
        return gt.object_a if gt.value == "obj1" else gt.object_b
    if kind is GroundTruthKind.ELEVATION:
        return "same level" if gt.value == "same_level" else str(gt.value)
    if kind is GroundTruthKind.VISIBILITY:
        return {"image1": "Image 1", "image2": "Image 2"}.get(
            str(gt.value), str(gt.value))
    return str(gt.value)


_OPPOSITE_TOKEN = {"front": "back", "back": "front", "left": "right",
                   "right": "left", "up": "down", "down": "up"}


def _corrupt_gt(gt, rng: random.Random) -> str:
    """A wrong answer that scores exactly zero under the task's rule."""
    kind = gt.kind
    if kind is GroundTruthKind.COUNT:
        return str(int(gt.value) + rng.choice((3, 4, -3)))
    if kind is GroundTruthKind.METRIC:
        unit = {"m": "meters", "cm": "centimeters", "m^2": "square meters"}[gt.unit]
        return f"{float(gt.value) * 2.5!r} {unit}"
    if kind in (GroundTruthKind.DIRECTION, GroundTruthKind.MOTION):
        flipped = [_OPPOSITE_TOKEN[t] for t in gt.value.ordered()]
        if kind is GroundTruthKind.MOTION:
            words = {"front": "forward", "back": "backward"}
            return "-".join(words.get(t, t) for t in flipped)
        return "-".join(flipped)
    if kind is GroundTruthKind.TERNARY:
        if gt.value == "same":
            return gt.object_a
        return gt.object_b if gt.value == "obj1" else gt.object_a
    if kind is GroundTruthKind.ELEVATION:
        return "lower" if gt.value == "higher" else "higher"
    if kind is GroundTruthKind.VISIBILITY:
        return "Image 2" if gt.value == "image1" else "Image 1"
    return "not sure"


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

@dataclass
class IterationLog:
    record: dict

    def to_json_line(self) -> str:
        return jsonutil.dumps(self.record)


def run_iteration(iteration: int, sched_state: SchedulerState,
                  index: SceneIndex, contexts: list[ContextRef],
                  questioner: ScriptedQuestioner, solver: ScriptedSolver,
                  sched_cfg: SchedulerConfig, rng: random.Random,
                  judge: Judge | None = None
                  ) -> tuple[IterationLog, SchedulerState]:
    """One full Round-1/Round-2 cycle over a sampled context."""
    judge = judge or DeterministicJudge()
    context = contexts[rng.randrange(len(contexts))]
    pools = index.pools(context.scene_id)
    feasible = feasible_tasks(pools, context)
    task = sample_task(feasible, sched_state, sched_cfg, rng)
    distribution = sampling_distribution(feasible, sched_state, sched_cfg)

    outputs = questioner.emit(task, context, pools, rng)
    candidate_records = []
    verdicts: list[Verdict] = []
    questions: list[StructuredQuestion] = []
    r_q_list: list[float] = []
    for out in outputs:
        verdict = verify(out.question_text, task, context, index)
        f_fmt, severe = questioner_format(out.text)
        if verdict.valid:
            f_valid = validity_factor(task, verdict.ground_truth)
        else:
            f_valid = 0.0
        obs_clean = bool(out.observation.strip()) and \
            "<" not in out.observation and ">" not in out.observation
        eligible = verdict.valid and f_fmt == 1 and obs_clean
        judge_score = judge.score_observation(out.observation,
                                              out.question_text, task) \
            if eligible else None
        f_obs = observation_factor(judge_score, eligible)
        reward = QuestionerReward.compute(f_fmt, f_valid, f_obs, severe)
        r_q_list.append(reward.r_q)
        questions.append(StructuredQuestion(
            task=task, params=verdict.parsed, context=context,
            raw_text=out.question_text, observation=out.observation))
        verdicts.append(verdict)
        candidate_records.append({
            "question": out.question_text,
            "observation": out.observation,
            "corruption": out.corruption,
            "valid": verdict.valid,
            "error_code": verdict.failure.error_code.value if verdict.failure else None,
            "questioner_reward": reward.to_json(),
        })
    q_advantages = group_advantages(r_q_list)
    for rec, adv in zip(candidate_records, q_advantages):
        rec["advantage"] = adv

    # Intra-context dedup over the verified structured params.
    seen: dict[bytes, int] = {}
    weights: list[int] = []
    rep_indices: list[int] = []
    for i, q in enumerate(questions):
        sig = semantic_signature(q).normalized_params
        if sig in seen:
            weights[seen[sig]] += 1
        else:
            seen[sig] = len(rep_indices)
            rep_indices.append(i)
            weights.append(1)

    new_state = sched_state
    representative_records = []
    for rep_pos, cand_idx in enumerate(rep_indices):
        verdict = verdicts[cand_idx]
        weight = weights[rep_pos]
        sig_hex = semantic_signature(questions[cand_idx]).normalized_params.hex()
        solver_runs = []
        rewards_ra: list[float] = []
        if verdict.valid:
            accs = []
            for _ in range(solver.config.rollouts_per_question):
                text = solver.answer(task, verdict, rng)
                f_fmt_s = solver_format(text)
                pred = parse_answer(text, task, verdict.ground_truth.kind)
                f_acc = solver_accuracy(pred, verdict.ground_truth, task)
                reward = SolverReward.for_valid(f_fmt_s, f_acc)
                accs.append(f_acc)
                rewards_ra.append(reward.r_a)
                solver_runs.append({"answer": text, "reward": reward.to_json()})
            mean_acc = sum(accs) / len(accs)
            new_state = update(new_state, task, mean_acc, weight,
                               retained_invalid=False, cfg=sched_cfg)
        else:
            diagnostics = verdict_to_diagnostics(verdict)
            for _ in range(solver.config.rollouts_per_question):
                text = solver.explain(verdict, rng)
                f_fmt_s = solver_format(text)
                f_explain = judge.score_explanation(text, diagnostics)
                reward = SolverReward.for_invalid(f_fmt_s, f_explain)
                rewards_ra.append(reward.r_a)
                solver_runs.append({"answer": text, "reward": reward.to_json()})
            mean_acc = 0.0
            new_state = update(new_state, task, 0.0, weight,
                               retained_invalid=True, cfg=sched_cfg)
        representative_records.append({
            "signature": sig_hex,
            "weight": weight,
            "candidate_index": cand_idx,
            "valid": verdict.valid,
            "verdict": verdicts[cand_idx].to_json(),
            "mean_accuracy": mean_acc,
            "solver": solver_runs,
            "advantages": group_advantages(rewards_ra),
        })

    record = {
        "iteration": iteration,
        "context": context.context_id,
        "task": task.value,
        "distribution": {t.value: p for t, p in distribution.items()},
        "candidates": candidate_records,
        "representatives": representative_records,
        "scheduler_digest": snapshot_digest(new_state),
    }
    return IterationLog(record=record), new_state


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------

@dataclass
class RunSummary:
    iterations: int
    per_task: dict
    invalid_ratio: float
    mean_r_q: float
    mean_r_a: float
    chosen: list          # task id sampled at each iteration
    distributions: list   # sampling distribution used at each iteration
    series: dict = field(default_factory=dict)  # per-iteration scalars
    log_path: str | None = None

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "per_task": self.per_task,
            "invalid_ratio": self.invalid_ratio,
            "mean_r_q": self.mean_r_q,
            "mean_r_a": self.mean_r_a,
            "log_path": self.log_path,
        }


def build_contexts(index: SceneIndex, modalities=None) -> list[ContextRef]:
    """Every context with a non-empty feasible set, in a stable order."""
    wanted = {Modality(m) for m in modalities} if modalities else set(Modality)
    contexts: list[ContextRef] = []
    for scene_id in index.scene_ids():
        scene = index.scene(scene_id)
        pools = index.pools(scene_id)
        candidates = []
        if Modality.SCENE in wanted:
            candidates.append(ContextRef(scene_id=scene_id))
        if Modality.SINGLE_IMAGE in wanted:
            for fr in scene.frames:
                candidates.append(ContextRef(scene_id=scene_id,
                                             frame_ids=(fr.frame_id,)))
        if Modality.IMAGE_PAIR in wanted:
            fids = [fr.frame_id for fr in scene.frames]
            for i, f in enumerate(fids):
                for g in fids[i + 1:]:
                    candidates.append(ContextRef(scene_id=scene_id,
                                                 frame_ids=(f, g)))
        for ctx in candidates:
            try:
                if feasible_tasks(pools, ctx):
                    contexts.append(ctx)
            except Exception:
                continue
    return contexts


def _parse_solver_config(data: dict) -> ScriptedSolverConfig:
    per_task = {}
    for name, entry in (data.get("per_task") or {}).items():
        per_task[TaskType(name)] = TaskProfile(**entry)
    default = TaskProfile(**(data.get("default") or {}))
    return ScriptedSolverConfig(
        rollouts_per_question=int(data.get("rollouts_per_question", 4)),
        default_profile=default,
        per_task=per_task,
        explain_exact_prob=float(data.get("explain_exact_prob", 0.8)),
    )


def run_selfplay(config: dict, seed: int, iterations: int,
                 out_dir: str | None = None) -> RunSummary:
    """Run the loop for `iterations` steps; optionally persist the log and
    periodic scheduler snapshots under out_dir."""
    scenes_cfg = config.get("scenes") or {}
    spec = GeneratorSpec.from_dict(scenes_cfg.get("spec") or {})
    count = int(scenes_cfg.get("count", 2))
    base_seed = int(scenes_cfg.get("base_seed", 1000))
    v_min = float(config.get("v_min", 0.1))
    index = SceneIndex(v_min=v_min)
    for k in range(count):
        index.add(generate_synthetic_scene(spec, base_seed + k))

    contexts = build_contexts(index, config.get("modalities"))
    if not contexts:
        raise ValueError("no context offers a feasible task")

    questioner = ScriptedQuestioner(ScriptedQuestionerConfig(
        **(config.get("questioner") or {})))
    solver = ScriptedSolver(_parse_solver_config(config.get("solver") or {}))
    sched_cfg = SchedulerConfig(**(config.get("scheduler") or {}))
    rng = random.Random(seed)
    state = SchedulerState()

    log_fh = None
    log_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "run.log.jsonl")
        log_fh = open(log_path, "w", encoding="utf-8")

    chosen: list[str] = []
    distributions: list[dict] = []
    series = {"invalid_ratio": [], "mean_r_q": [], "mean_r_a": [],
              "mean_accuracy": []}
    totals = {t: {"samples": 0, "accuracy_sum": 0.0, "reps": 0} for t in TaskType}
    invalid = 0
    reps_total = 0
    r_q_sum, r_q_n = 0.0, 0
    r_a_sum, r_a_n = 0.0, 0
    try:
        for i in range(iterations):
            log, state = run_iteration(i, state, index, contexts, questioner,
                                       solver, sched_cfg, rng)
            record = log.record
            task = record["task"]
            chosen.append(task)
            distributions.append(record["distribution"])
            totals[TaskType(task)]["samples"] += 1
            it_invalid, it_reps = 0, 0
            it_acc, it_acc_n = 0.0, 0
            it_ra, it_ra_n = 0.0, 0
            for rep in record["representatives"]:
                reps_total += 1
                it_reps += 1
                totals[TaskType(task)]["reps"] += 1
                if rep["valid"]:
                    totals[TaskType(task)]["accuracy_sum"] += rep["mean_accuracy"]
                    it_acc += rep["mean_accuracy"]
                    it_acc_n += 1
                else:
                    invalid += 1
                    it_invalid += 1
                for run in rep["solver"]:
                    r_a_sum += run["reward"]["r_a"]
                    r_a_n += 1
                    it_ra += run["reward"]["r_a"]
                    it_ra_n += 1
            it_rq = [c["questioner_reward"]["r_q"]
                     for c in record["candidates"]]
            r_q_sum += sum(it_rq)
            r_q_n += len(it_rq)
            series["invalid_ratio"].append(it_invalid / it_reps if it_reps else 0.0)
            series["mean_r_q"].append(sum(it_rq) / len(it_rq) if it_rq else 0.0)
            series["mean_r_a"].append(it_ra / it_ra_n if it_ra_n else 0.0)
            series["mean_accuracy"].append(it_acc / it_acc_n if it_acc_n else 0.0)
            if log_fh:
                log_fh.write(log.to_json_line() + "\n")
                if (i + 1) % SNAPSHOT_EVERY == 0:
                    save_snapshot(state, os.path.join(
                        out_dir, f"scheduler-{i + 1:06d}.snapshot"))
    finally:
        if log_fh:
            log_fh.close()

    per_task = {}
    for t in TaskType:
        samples = totals[t]["samples"]
        if samples == 0:
            continue
        reps = totals[t]["reps"]
        per_task[t.value] = {
            "samples": samples,
            "share": samples / iterations if iterations else 0.0,
            "mean_accuracy": (totals[t]["accuracy_sum"] / reps) if reps else 0.0,
        }
    return RunSummary(
        iterations=iterations,
        per_task=per_task,
        invalid_ratio=(invalid / reps_total) if reps_total else 0.0,
        mean_r_q=(r_q_sum / r_q_n) if r_q_n else 0.0,
        mean_r_a=(r_a_sum / r_a_n) if r_a_n else 0.0,
        chosen=chosen,
        distributions=distributions,
        series=series,
        log_path=log_path,
    )


def replay_rewards_match(log_path: str) -> bool:
    """Re-score stored (question, answer) pairs and compare to the stored
    rewards at log precision."""
    from . import jsonutil as ju
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            record = ju.loads(line)
            task = TaskType(record["task"])
            for rep in record["representatives"]:
                if not rep["valid"]:
                    continue
                gt = GroundTruth.from_json(rep["verdict"]["ground_truth"])
                for run in rep["solver"]:
                    pred = parse_answer(run["answer"], task, gt.kind)
                    f_acc = solver_accuracy(pred, gt, task)
                    f_fmt = solver_format(run["answer"])
                    reward = SolverReward.for_valid(f_fmt, f_acc)
                    if ju.format_float(reward.r_a) != \
                            ju.format_float(float(run["reward"]["r_a"])):
                        return False
    return True
