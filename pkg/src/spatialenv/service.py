"""Newline-delimited JSON request/response service.

One request per line, one response per request, matched by the client's
`id`; responses may arrive out of order. Scenes are registered once
(load_scene / gen_scene) and referenced by id afterwards, so point clouds
never cross the wire. Scheduler state is per session: stdio serves a
single session, TCP gives each connection its own.
"""

from __future__ import annotations

import random
import socket
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from . import jsonutil
from .generator import GeneratorSpec, generate_synthetic_scene
from .pipeline import DiagnosticSummary, verify, _json_value
from .questions import StructuredQuestion
from .rewards import (DeterministicJudge, QuestionerReward, SolverReward,
                      extract_tag, observation_factor, parse_answer,
                      questioner_format, solver_accuracy, solver_format)
from .scene import SceneIndex, load_scene
from .scheduler import SchedulerConfig, SchedulerState, sample_task, update
from .solvers import DegeneratePremise, SceneContext, SolverUnavailable, solve
from .tasks import (ContextRef, GroundTruth, TaskType, feasible_tasks,
                    normalize_task_name, validity_factor)

ENGINE_VERSION = "0.1.0"

OPS = ("ping", "load_scene", "gen_scene", "verify", "solve",
       "score_questioner", "score_solver", "feasible", "sample_task",
       "update_stats")


class _BadRequest(Exception):
    pass


def default_v_min() -> float:
    """Session default visibility threshold; SPATIALENV_VMIN overrides."""
    import os
    try:
        return float(os.environ.get("SPATIALENV_VMIN", "0.1"))
    except ValueError:
        return 0.1


def _default_judge():
    import os
    if os.environ.get("SPATIALENV_JUDGE_URL"):
        from .rewards import ServiceJudge
        return ServiceJudge.from_env()
    return DeterministicJudge()


class EngineSession:
    """Per-session engine state: scene registry plus scheduler statistics."""

    def __init__(self, v_min: float | None = None, seed: int = 0,
                 ontology=None):
        self.index = SceneIndex(
            v_min=default_v_min() if v_min is None else v_min,
            ontology=ontology)
        self.sched_state = SchedulerState()
        self.sched_cfg = SchedulerConfig()
        self.rng = random.Random(seed)
        self.judge = _default_judge()
        # single-writer discipline for scheduler state
        self._sched_lock = threading.Lock()
        self._index_lock = threading.Lock()

    # -- helpers ----------------------------------------------------------

    def _context(self, payload: dict) -> ContextRef:
        scene_id = payload.get("scene_id")
        if not isinstance(scene_id, str) or not scene_id:
            raise _BadRequest("payload.scene_id must be a non-empty string")
        frame_ids = payload.get("frame_ids") or []
        if not isinstance(frame_ids, list):
            raise _BadRequest("payload.frame_ids must be a list")
        return ContextRef(scene_id=scene_id,
                          frame_ids=tuple(int(f) for f in frame_ids))

    def _task(self, payload: dict) -> TaskType:
        task = normalize_task_name(payload.get("task"))
        if task is None:
            raise _BadRequest(f"unknown task: {payload.get('task')!r}")
        return task

    def _scene_summary(self, scene_id: str) -> dict:
        scene = self.index.scene(scene_id)
        pools = self.index.pools(scene_id)
        return {
            "scene_id": scene_id,
            "labels": sorted(scene.labels()),
            "unique_scene": sorted(pools.unique_scene),
            "non_unique_scene": sorted(pools.non_unique_scene),
            "frames": [f.frame_id for f in scene.frames],
            "room_area": float(scene.metadata.room_area),
        }

    # -- op handlers ------------------------------------------------------

    def op_ping(self, payload: dict) -> dict:
        return {"version": ENGINE_VERSION}

    def op_load_scene(self, payload: dict) -> dict:
        path = payload.get("path")
        if not isinstance(path, str):
            raise _BadRequest("payload.path must be a string")
        scene = load_scene(path)
        with self._index_lock:
            self.index.add(scene)
        return self._scene_summary(scene.scene_id)

    def op_gen_scene(self, payload: dict) -> dict:
        seed = int(payload.get("seed", 0))
        spec = GeneratorSpec.from_dict(payload.get("spec") or {})
        scene = generate_synthetic_scene(spec, seed)
        with self._index_lock:
            self.index.add(scene)
        return self._scene_summary(scene.scene_id)

    def op_verify(self, payload: dict) -> dict:
        context = self._context(payload)
        task = payload.get("task")
        if context.scene_id not in self.index:
            raise _BadRequest(f"scene {context.scene_id!r} not loaded")
        if "text" in payload:
            question = payload["text"]
        elif "params" in payload:
            canonical = normalize_task_name(task)
            if canonical is None:
                raise _BadRequest(f"unknown task: {task!r}")
            question = StructuredQuestion(task=canonical,
                                          params=dict(payload["params"]),
                                          context=context)
        else:
            raise _BadRequest("payload needs `text` or `params`")
        verdict = verify(question, task, context, self.index)
        return {"verdict": verdict.to_json()}

    def op_solve(self, payload: dict) -> dict:
        context = self._context(payload)
        task = self._task(payload)
        if context.scene_id not in self.index:
            raise _BadRequest(f"scene {context.scene_id!r} not loaded")
        env = SceneContext(scene=self.index.scene(context.scene_id),
                           pools=self.index.pools(context.scene_id),
                           context=context)
        params = payload.get("params") or {}
        try:
            gt, intermediates = solve(task, params, env)
        except (DegeneratePremise, SolverUnavailable) as exc:
            return {"solved": False, "reason": str(exc),
                    "degenerate": isinstance(exc, DegeneratePremise)}
        return {"solved": True, "ground_truth": gt.to_json(),
                "intermediates": [{"name": n, "value": _json_value(v)}
                                  for n, v in intermediates]}

    def op_score_questioner(self, payload: dict) -> dict:
        text = payload.get("text", "")
        task = self._task(payload)
        valid = bool(payload.get("valid"))
        f_fmt, severe = questioner_format(text)
        f_valid = 0.0
        if valid:
            gt_json = payload.get("ground_truth")
            if gt_json:
                f_valid = validity_factor(task, GroundTruth.from_json(gt_json))
            else:
                f_valid = 1.0
        observation = extract_tag(text, "observation")
        question = extract_tag(text, "question") or ""
        obs_clean = bool(observation and observation.strip()
                         and "<" not in observation and ">" not in observation)
        eligible = valid and f_fmt == 1 and obs_clean
        if payload.get("judge_score") is not None:
            judge_score = float(payload["judge_score"])
        elif eligible:
            judge_score = self.judge.score_observation(observation, question, task)
        else:
            judge_score = None
        f_obs = observation_factor(judge_score, eligible)
        reward = QuestionerReward.compute(f_fmt, f_valid, f_obs, severe)
        return {"reward": reward.to_json()}

    def op_score_solver(self, payload: dict) -> dict:
        text = payload.get("text", "")
        task = self._task(payload)
        valid = bool(payload.get("valid"))
        f_fmt = solver_format(text)
        if valid:
            gt_json = payload.get("ground_truth")
            if not gt_json:
                raise _BadRequest("valid-branch scoring needs ground_truth")
            gt = GroundTruth.from_json(gt_json)
            pred = parse_answer(text, task, gt.kind)
            f_acc = solver_accuracy(pred, gt, task)
            reward = SolverReward.for_valid(f_fmt, f_acc)
        else:
            diag_json = payload.get("diagnostics")
            if not diag_json:
                raise _BadRequest("invalid-branch scoring needs diagnostics")
            diagnostics = DiagnosticSummary.from_json(diag_json)
            f_explain = self.judge.score_explanation(text, diagnostics)
            reward = SolverReward.for_invalid(f_fmt, f_explain)
        return {"reward": reward.to_json()}

    def op_feasible(self, payload: dict) -> dict:
        context = self._context(payload)
        if context.scene_id not in self.index:
            raise _BadRequest(f"scene {context.scene_id!r} not loaded")
        tasks = feasible_tasks(self.index.pools(context.scene_id), context)
        return {"tasks": sorted(t.value for t in tasks)}

    def op_sample_task(self, payload: dict) -> dict:
        context = self._context(payload)
        if context.scene_id not in self.index:
            raise _BadRequest(f"scene {context.scene_id!r} not loaded")
        tasks = feasible_tasks(self.index.pools(context.scene_id), context)
        with self._sched_lock:
            rng = self.rng
            if payload.get("seed") is not None:
                rng = random.Random(int(payload["seed"]))
            task = sample_task(tasks, self.sched_state, self.sched_cfg, rng)
        return {"task": task.value}

    def op_update_stats(self, payload: dict) -> dict:
        task = self._task(payload)
        accuracy = float(payload.get("accuracy", 0.0))
        weight = float(payload.get("weight", 1.0))
        retained_invalid = bool(payload.get("retained_invalid"))
        with self._sched_lock:
            self.sched_state = update(self.sched_state, task, accuracy,
                                      weight, retained_invalid, self.sched_cfg)
            st = self.sched_state.for_task(task)
        return {"stats": {"task": task.value, "n": st.n, "s": st.s,
                          "s_sched": st.s_sched}}

    # -- dispatch ---------------------------------------------------------

    def handle_line(self, line: str) -> str:
        try:
            request = jsonutil.loads(line)
        except Exception as exc:
            return jsonutil.dumps({"id": "", "ok": False,
                                   "error": {"code": "bad_request",
                                             "message": f"malformed JSON: {exc}"}})
        if not isinstance(request, dict):
            return jsonutil.dumps({"id": "", "ok": False,
                                   "error": {"code": "bad_request",
                                             "message": "request must be an object"}})
        req_id = request.get("id")
        if not isinstance(req_id, str) or not req_id:
            return jsonutil.dumps({"id": "", "ok": False,
                                   "error": {"code": "bad_request",
                                             "message": "id must be a non-empty string"}})
        op = request.get("op")
        handler = getattr(self, f"op_{op}", None)
        if op not in OPS or handler is None:
            return jsonutil.dumps({"id": req_id, "ok": False,
                                   "error": {"code": "unknown_op",
                                             "message": f"unknown op {op!r}"}})
        payload = request.get("payload") or {}
        try:
            result = handler(payload)
            return jsonutil.dumps({"id": req_id, "ok": True, "result": result})
        except _BadRequest as exc:
            return jsonutil.dumps({"id": req_id, "ok": False,
                                   "error": {"code": "bad_request",
                                             "message": str(exc)}})
        except Exception as exc:
            return jsonutil.dumps({"id": req_id, "ok": False,
                                   "error": {"code": "engine_error",
                                             "message": f"{type(exc).__name__}: {exc}"}})


def serve_streams(infile, outfile, session: EngineSession | None = None,
                  max_workers: int = 8) -> None:
    """Serve newline-delimited requests until end-of-stream."""
    session = session or EngineSession()
    write_lock = threading.Lock()

    def respond(line: str) -> None:
        response = session.handle_line(line)
        with write_lock:
            outfile.write(response + "\n")
            outfile.flush()

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = []
        for line in infile:
            line = line.strip()
            if not line:
                continue
            futures.append(pool.submit(respond, line))
        for fut in futures:
            fut.result()


def serve_tcp(host: str, port: int, v_min: float | None = None, seed: int = 0,
              max_workers: int = 8) -> None:
    """TCP transport: each connection gets an isolated session."""
    server = socket.create_server((host, port))
    print(f"listening on {host}:{port}", file=sys.stderr)

    def handle_conn(conn: socket.socket) -> None:
        session = EngineSession(v_min=v_min, seed=seed)
        with conn, conn.makefile("r", encoding="utf-8") as rf, \
                conn.makefile("w", encoding="utf-8") as wf:
            serve_streams(rf, wf, session, max_workers=max_workers)

    try:
        while True:
            conn, _ = server.accept()
            threading.Thread(target=handle_conn, args=(conn,),
                             daemon=True).start()
    finally:
        server.close()
