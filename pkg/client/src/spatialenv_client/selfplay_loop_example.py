"""Minimal environment loop driven entirely through the client.

Mirrors one engine iteration per step: pick a feasible task, pose a
structured question, verify it, answer from the returned ground truth,
score the answer, and feed the accuracy back into the scheduler. Run with
`selfplay-loop-example --steps 20`.
"""

from __future__ import annotations

import argparse
import random

from .client import EnvClient, connect


def _question_params(task: str, summary: dict, rng: random.Random):
    uniq = summary["unique_scene"]
    dup = summary["non_unique_scene"]
    if task == "object_counting" and dup:
        return {"target": rng.choice(dup)}
    if task == "object_size" and uniq:
        return {"target": rng.choice(uniq)}
    if task == "absolute_distance" and len(uniq) >= 2:
        a, b = rng.sample(uniq, 2)
        return {"object_a": a, "object_b": b}
    if task == "relative_distance" and len(uniq) >= 4:
        picks = rng.sample(uniq, 4)
        return {"anchor": picks[0], "candidates": picks[1:]}
    if task == "relative_direction" and len(uniq) >= 3:
        a, b, c = rng.sample(uniq, 3)
        return {"anchor": a, "facing": b, "target": c}
    if task == "room_size":
        return {}
    return None


def _answer_text(ground_truth: dict) -> str:
    kind = ground_truth["kind"]
    value = ground_truth["value"]
    if kind == "metric":
        unit = {"m": "meters", "cm": "centimeters",
                "m^2": "square meters"}[ground_truth["unit"]]
        return f"<answer>{value} {unit}</answer>"
    if kind in ("direction", "motion"):
        return "<answer>" + "-".join(value) + "</answer>"
    return f"<answer>{value}</answer>"


def run_loop(client: EnvClient, steps: int, seed: int) -> dict:
    rng = random.Random(seed)
    summary = client.gen_scene(seed=seed)
    scene_id = summary["scene_id"]
    counts = {"asked": 0, "valid": 0, "reward_sum": 0.0}
    for _ in range(steps):
        task = client.sample_task(scene_id)
        params = _question_params(task, summary, rng)
        if params is None:
            client.update_stats(task, 0.0, 1.0, retained_invalid=True)
            continue
        verdict = client.verify(scene_id, task, params=params)
        counts["asked"] += 1
        if not verdict["valid"]:
            client.update_stats(task, 0.0, 1.0, retained_invalid=True)
            continue
        counts["valid"] += 1
        answer = _answer_text(verdict["ground_truth"])
        reward = client.score_solver(task, answer, valid=True,
                                     ground_truth=verdict["ground_truth"])
        counts["reward_sum"] += reward["r_a"]
        client.update_stats(task, reward["f_acc"], 1.0)
    return counts


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--target", default=None,
                        help="engine command or tcp://host:port")
    args = parser.parse_args(argv)
    with connect(args.target) as client:
        client.ping()
        counts = run_loop(client, args.steps, args.seed)
    mean = counts["reward_sum"] / max(1, counts["valid"])
    print(f"asked {counts['asked']} questions, {counts['valid']} valid, "
          f"mean solver reward {mean:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
