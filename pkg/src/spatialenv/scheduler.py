"""Task-adaptive curriculum: calibrated accuracy statistics and the
sampling distribution that up-weights historically weak tasks.

Updates are pure and additive, so batches commute; the state snapshots to
a line-delimited text file for resumable runs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .errors import EmptyFeasibleSet
from .tasks import NUMERIC_TASKS, TaskType


@dataclass(frozen=True)
class SchedulerConfig:
    a0: float = 0.35          # pseudo-count prior mean
    n0: float = 2.0           # pseudo-count prior weight
    delta: float = 0.05       # sampling-weight floor
    tau_numeric: float = 0.50  # difficulty normalizer for numeric tasks
    tau_default: float = 1.00

    def __post_init__(self):
        if not 0 < self.a0 < 1:
            raise ValueError("a0 must be in (0, 1)")
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")

    def tau(self, task: TaskType) -> float:
        return self.tau_numeric if task in NUMERIC_TASKS else self.tau_default


@dataclass(frozen=True)
class TaskStats:
    n: float = 0.0        # cumulative sample weight
    s: float = 0.0        # cumulative raw accuracy (report-only)
    s_sched: float = 0.0  # cumulative calibrated accuracy (drives sampling)


@dataclass(frozen=True)
class SchedulerState:
    stats: dict = field(default_factory=dict)  # TaskType -> TaskStats

    def for_task(self, task: TaskType) -> TaskStats:
        return self.stats.get(task, TaskStats())


def calibrate(accuracy: float, task: TaskType,
              cfg: SchedulerConfig | None = None) -> float:
    """Difficulty-normalized accuracy: clip(a / tau_k, 0, 1)."""
    cfg = cfg or SchedulerConfig()
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy outside [0, 1]: {accuracy}")
    return min(1.0, max(0.0, accuracy / cfg.tau(task)))


def smoothed_accuracy(state: SchedulerState, task: TaskType,
                      cfg: SchedulerConfig | None = None) -> float:
    """Pseudo-count smoothed calibrated accuracy (prior mean a0, weight n0)."""
    cfg = cfg or SchedulerConfig()
    st = state.for_task(task)
    return (st.s_sched + cfg.a0 * cfg.n0) / (st.n + cfg.n0)


def sampling_distribution(feasible, state: SchedulerState,
                          cfg: SchedulerConfig | None = None) -> dict:
    """p_k proportional to max(delta, 1 - smoothed accuracy) over feasible."""
    cfg = cfg or SchedulerConfig()
    tasks = sorted(feasible, key=lambda t: t.value)
    if not tasks:
        raise EmptyFeasibleSet("no feasible tasks to sample from")
    weights = {t: max(cfg.delta, 1.0 - smoothed_accuracy(state, t, cfg))
               for t in tasks}
    total = sum(weights.values())
    return {t: w / total for t, w in weights.items()}


def update(state: SchedulerState, task: TaskType, raw_accuracy: float,
           duplicate_weight: float = 1.0, retained_invalid: bool = False,
           cfg: SchedulerConfig | None = None) -> SchedulerState:
    """Weight-carrying update; returns a new state.

    Retained-invalid questions contribute their duplicate weight to n but
    zero to both accuracy sums.
    """
    cfg = cfg or SchedulerConfig()
    if duplicate_weight < 1:
        raise ValueError(f"duplicate_weight must be >= 1, got {duplicate_weight}")
    if not retained_invalid and not 0.0 <= raw_accuracy <= 1.0:
        raise ValueError(f"raw_accuracy outside [0, 1]: {raw_accuracy}")
    st = state.for_task(task)
    if retained_invalid:
        new = replace(st, n=st.n + duplicate_weight)
    else:
        new = TaskStats(
            n=st.n + duplicate_weight,
            s=st.s + duplicate_weight * raw_accuracy,
            s_sched=st.s_sched + duplicate_weight * calibrate(raw_accuracy, task, cfg),
        )
    stats = dict(state.stats)
    stats[task] = new
    return SchedulerState(stats=stats)


def sample_task(feasible, state: SchedulerState, cfg: SchedulerConfig | None,
                rng: random.Random) -> TaskType:
    """Seeded draw from the sampling distribution (task-id order)."""
    dist = sampling_distribution(feasible, state, cfg)
    r = rng.random()
    acc = 0.0
    tasks = list(dist)
    for t in tasks:
        acc += dist[t]
        if r < acc:
            return t
    return tasks[-1]  # guard against accumulated rounding


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def save_snapshot(state: SchedulerState, path) -> None:
    """One `task n s s_sched` record per line, full float precision."""
    lines = []
    for task in sorted(state.stats, key=lambda t: t.value):
        st = state.stats[task]
        lines.append(f"{task.value} {st.n!r} {st.s!r} {st.s_sched!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_snapshot(path) -> SchedulerState:
    stats: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, n, s, s_sched = line.split()
            stats[TaskType(name)] = TaskStats(n=float(n), s=float(s),
                                              s_sched=float(s_sched))
    return SchedulerState(stats=stats)


def snapshot_digest(state: SchedulerState) -> str:
    """Stable hash of the state for log records."""
    import hashlib
    h = hashlib.sha256()
    for task in sorted(state.stats, key=lambda t: t.value):
        st = state.stats[task]
        h.update(f"{task.value}:{st.n!r}:{st.s!r}:{st.s_sched!r};".encode())
    return h.hexdigest()[:16]
