"""Command-line entry points.

Subcommands: gen-scene, verify, solve, score, selfplay, serve, sched.
Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import jsonutil
from .generator import GeneratorSpec, generate_synthetic_scene
from .scene import SceneIndex, load_scene, save_scene
from .scheduler import SchedulerState, load_snapshot, save_snapshot
from .service import EngineSession, serve_streams, serve_tcp
from .tasks import ContextRef, TaskType


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _cmd_gen_scene(args) -> int:
    spec = GeneratorSpec.from_dict(_load_json(args.spec) if args.spec else {})
    scene = generate_synthetic_scene(spec, args.seed)
    save_scene(scene, args.out)
    print(f"wrote {scene.scene_id} ({len(scene.instances)} instances, "
          f"{len(scene.frames)} frames) to {args.out}")
    return 0


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield n, jsonutil.loads(line)


def _load_tables(args):
    from .questions import AliasTable, RegionOntology
    ontology = RegionOntology.from_file(args.ontology) \
        if getattr(args, "ontology", None) else None
    aliases = AliasTable.from_file(args.aliases) \
        if getattr(args, "aliases", None) else None
    return ontology, aliases


def _cmd_verify(args) -> int:
    from .pipeline import verify
    from .service import default_v_min
    ontology, aliases = _load_tables(args)
    v_min = default_v_min() if args.v_min is None else args.v_min
    index = SceneIndex(v_min=v_min, ontology=ontology)
    scene = load_scene(args.scene)
    index.add(scene)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for n, record in _iter_jsonl(args.questions):
            context = ContextRef(
                scene_id=record.get("scene_id", scene.scene_id),
                frame_ids=tuple(record.get("frame_ids") or ()))
            question = record.get("text")
            if question is None and "params" in record:
                from .questions import StructuredQuestion
                from .tasks import normalize_task_name
                task = normalize_task_name(record.get("task"))
                if task is not None:
                    question = StructuredQuestion(task=task,
                                                  params=record["params"],
                                                  context=context)
                else:
                    question = ""
            verdict = verify(question, record.get("task"), context, index,
                             aliases=aliases, ontology=ontology)
            out.write(verdict.to_json_line() + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_solve(args) -> int:
    session = EngineSession(v_min=args.v_min)
    scene = load_scene(args.scene)
    session.index.add(scene)
    payload = {"scene_id": scene.scene_id,
               "frame_ids": [int(f) for f in args.frames or []],
               "task": args.task,
               "params": json.loads(args.params)}
    result = session.op_solve(payload)
    print(jsonutil.dumps(result))
    return 0 if result.get("solved") else 1


def _cmd_score(args) -> int:
    """Score records of the form {"kind": "questioner"|"solver", ...payload}."""
    session = EngineSession()
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for n, record in _iter_jsonl(args.records):
            kind = record.get("kind")
            if kind == "questioner":
                result = session.op_score_questioner(record)
            elif kind == "solver":
                result = session.op_score_solver(record)
            else:
                result = {"error": f"line {n}: unknown kind {kind!r}"}
            out.write(jsonutil.dumps(result) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _cmd_selfplay(args) -> int:
    from .selfplay import run_selfplay
    config = _load_json(args.config) if args.config else {}
    summary = run_selfplay(config, seed=args.seed, iterations=args.iters,
                           out_dir=args.out)
    print(jsonutil.dumps(summary.to_json()))
    return 0


def _cmd_serve(args) -> int:
    ontology, _ = _load_tables(args)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        serve_tcp(host or "127.0.0.1", int(port), v_min=args.v_min,
                  seed=args.seed)
        return 0
    session = EngineSession(v_min=args.v_min, seed=args.seed,
                            ontology=ontology)
    for path in args.scene or []:
        session.index.add(load_scene(path))
    serve_streams(sys.stdin, sys.stdout, session)
    return 0


def _cmd_sched(args) -> int:
    if args.action == "show":
        state = load_snapshot(args.file)
        for task in sorted(state.stats, key=lambda t: t.value):
            st = state.stats[task]
            print(f"{task.value:24s} n={st.n:10.3f} s={st.s:10.3f} "
                  f"s_sched={st.s_sched:10.3f}")
        if not state.stats:
            print("(empty)")
    else:
        save_snapshot(SchedulerState(), args.file)
        print(f"reset {args.file}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialenv",
        description="Deterministic geometric environment for spatial QA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic scene asset")
    p.add_argument("--spec", help="generator spec JSON file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output scene directory")
    p.set_defaults(fn=_cmd_gen_scene)

    p = sub.add_parser("verify", help="verify questions against a scene")
    p.add_argument("--scene", required=True, help="scene asset directory")
    p.add_argument("--questions", required=True, help="JSONL question file")
    p.add_argument("--out", help="JSONL verdict output (default stdout)")
    p.add_argument("--v-min", type=float, default=None,
                   help="visibility threshold (default SPATIALENV_VMIN or 0.1)")
    p.add_argument("--ontology", help="region ontology JSON file")
    p.add_argument("--aliases", help="label alias JSON file")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("solve", help="run one ground-truth solver")
    p.add_argument("--scene", required=True)
    p.add_argument("--task", required=True,
                   choices=sorted(t.value for t in TaskType))
    p.add_argument("--params", default="{}", help="role map as JSON")
    p.add_argument("--frames", nargs="*", help="frame ids for image tasks")
    p.add_argument("--v-min", type=float, default=None,
                   help="visibility threshold (default SPATIALENV_VMIN or 0.1)")
    p.set_defaults(fn=_cmd_solve)

    p = sub.add_parser("score", help="score questioner/solver records")
    p.add_argument("--records", required=True, help="JSONL input")
    p.add_argument("--out", help="JSONL output (default stdout)")
    p.set_defaults(fn=_cmd_score)

    p = sub.add_parser("selfplay", help="run the scripted self-play loop")
    p.add_argument("--config", help="run config JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", help="output directory for log + snapshots")
    p.set_defaults(fn=_cmd_selfplay)

    p = sub.add_parser("serve", help="serve the line protocol")
    p.add_argument("--tcp", help="host:port (default: stdio)")
    p.add_argument("--scene", nargs="*", help="scene directories to preload")
    p.add_argument("--v-min", type=float, default=None,
                   help="visibility threshold (default SPATIALENV_VMIN or 0.1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ontology", help="region ontology JSON file")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("sched", help="inspect or reset scheduler snapshots")
    p.add_argument("action", choices=("show", "reset"))
    p.add_argument("--file", required=True)
    p.set_defaults(fn=_cmd_sched)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 1
    except BrokenPipeError:
        return 0
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
