import random

import pytest

from spatialenv.errors import EmptyFeasibleSet
from spatialenv.scheduler import (SchedulerConfig, SchedulerState, TaskStats,
                                  calibrate, load_snapshot, sample_task,
                                  sampling_distribution, save_snapshot,
                                  smoothed_accuracy, snapshot_digest, update)
from spatialenv.tasks import TaskType

CFG = SchedulerConfig()


def test_config_constants():
    assert CFG.a0 == 0.35
    assert CFG.n0 == 2.0
    assert CFG.delta == 0.05
    assert CFG.tau(TaskType.OBJECT_SIZE) == 0.50
    assert CFG.tau(TaskType.OBJECT_COUNTING) == 0.50
    assert CFG.tau(TaskType.RELATIVE_DIRECTION) == 1.00


def test_calibrate_examples():
    assert calibrate(0.4, TaskType.OBJECT_SIZE) == 0.8
    assert calibrate(0.7, TaskType.OBJECT_COUNTING) == 1.0  # clipped
    assert calibrate(0.7, TaskType.RELATIVE_DIRECTION) == 0.7
    assert calibrate(0.0, TaskType.OBJECT_SIZE) == 0.0
    with pytest.raises(ValueError):
        calibrate(1.2, TaskType.OBJECT_SIZE)


def test_smoothed_accuracy_cold_start():
    state = SchedulerState()
    assert smoothed_accuracy(state, TaskType.ROOM_SIZE) == 0.35


def test_smoothed_accuracy_example():
    state = SchedulerState(stats={
        TaskType.ROOM_SIZE: TaskStats(n=8.0, s=8.0, s_sched=8.0)})
    assert smoothed_accuracy(state, TaskType.ROOM_SIZE) == (8 + 0.7) / 10


def test_smoothed_accuracy_limit_monotone():
    state = SchedulerState()
    prev = smoothed_accuracy(state, TaskType.ROOM_SIZE)
    for _ in range(60):
        state = update(state, TaskType.ROOM_SIZE, 1.0, 1.0)
        cur = smoothed_accuracy(state, TaskType.ROOM_SIZE)
        assert cur >= prev
        prev = cur
    assert prev > 0.97
    assert prev < 1.0  # strictly inside (0, 1) at finite n


def test_two_task_distribution_analytic():
    # smoothed accuracies 0.35 and 0.95 give weights 0.65 and 0.05
    state = SchedulerState(stats={
        # n=18, s_sched such that (s+0.7)/(18+2) = 0.95 -> s = 18.3
        TaskType.RELATIVE_DIRECTION: TaskStats(n=18.0, s=18.3, s_sched=18.3),
    })
    feasible = {TaskType.ROOM_SIZE, TaskType.RELATIVE_DIRECTION}
    dist = sampling_distribution(feasible, state, CFG)
    assert abs(dist[TaskType.ROOM_SIZE] - 0.9286) < 1e-4
    assert abs(dist[TaskType.RELATIVE_DIRECTION] - 0.0714) < 1e-4
    assert abs(sum(dist.values()) - 1.0) < 1e-12


def test_distribution_floor_gives_uniform():
    state = SchedulerState(stats={
        t: TaskStats(n=100.0, s=100.0, s_sched=100.0)
        for t in (TaskType.ROOM_SIZE, TaskType.OBJECT_SIZE,
                  TaskType.OBJECT_COUNTING)})
    dist = sampling_distribution(
        {TaskType.ROOM_SIZE, TaskType.OBJECT_SIZE, TaskType.OBJECT_COUNTING},
        state, CFG)
    for p in dist.values():
        assert p == pytest.approx(1 / 3)


def test_distribution_singleton_and_empty():
    state = SchedulerState()
    dist = sampling_distribution({TaskType.ROOM_SIZE}, state, CFG)
    assert dist == {TaskType.ROOM_SIZE: 1.0}
    with pytest.raises(EmptyFeasibleSet):
        sampling_distribution(set(), state, CFG)


def test_lower_accuracy_weakly_higher_probability():
    state = SchedulerState(stats={
        TaskType.ROOM_SIZE: TaskStats(n=10, s=2.0, s_sched=2.0),
        TaskType.RELATIVE_DIRECTION: TaskStats(n=10, s=9.0, s_sched=9.0),
        TaskType.RELATIVE_DISTANCE: TaskStats(n=10, s=5.0, s_sched=5.0),
    })
    feasible = {TaskType.ROOM_SIZE, TaskType.RELATIVE_DIRECTION,
                TaskType.RELATIVE_DISTANCE}
    dist = sampling_distribution(feasible, state, CFG)
    a = {t: smoothed_accuracy(state, t) for t in feasible}
    ordered = sorted(feasible, key=lambda t: a[t])
    assert dist[ordered[0]] >= dist[ordered[1]] >= dist[ordered[2]]


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def test_update_valid_and_retained_invalid():
    state = SchedulerState()
    state = update(state, TaskType.RELATIVE_DIRECTION, 1.0, 3.0)
    st = state.for_task(TaskType.RELATIVE_DIRECTION)
    assert (st.n, st.s, st.s_sched) == (3.0, 3.0, 3.0)
    state = update(state, TaskType.RELATIVE_DIRECTION, 0.9, 2.0,
                   retained_invalid=True)
    st = state.for_task(TaskType.RELATIVE_DIRECTION)
    assert st.n == 5.0
    assert st.s == 3.0 and st.s_sched == 3.0  # weight counted, accuracy not


def test_update_applies_calibration():
    state = update(SchedulerState(), TaskType.OBJECT_SIZE, 0.4, 2.0)
    st = state.for_task(TaskType.OBJECT_SIZE)
    assert st.s == pytest.approx(0.8)        # raw 0.4 * weight 2
    assert st.s_sched == pytest.approx(1.6)  # calibrated 0.8 * weight 2


def test_update_rejects_bad_weight():
    with pytest.raises(ValueError):
        update(SchedulerState(), TaskType.ROOM_SIZE, 0.5, 0.5)


def test_update_commutes():
    updates = [(TaskType.ROOM_SIZE, 0.2, 1.0, False),
               (TaskType.ROOM_SIZE, 0.9, 3.0, False),
               (TaskType.OBJECT_SIZE, 0.5, 2.0, False),
               (TaskType.ROOM_SIZE, 0.0, 2.0, True)]
    import itertools
    results = set()
    for perm in itertools.permutations(updates):
        state = SchedulerState()
        for task, acc, w, inv in perm:
            state = update(state, task, acc, w, retained_invalid=inv)
        key = tuple(sorted(
            (t.value, st.n, st.s, st.s_sched) for t, st in state.stats.items()))
        results.add(key)
    assert len(results) == 1


def test_dedup_weighting_equals_naive_updates():
    # a batch where duplicates share one accuracy must equal per-candidate
    # naive updates with weight 1
    rng = random.Random(9)
    for _ in range(30):
        groups = [(rng.choice((TaskType.ROOM_SIZE, TaskType.OBJECT_SIZE)),
                   rng.random(), rng.randint(1, 5)) for _ in range(4)]
        weighted = SchedulerState()
        naive = SchedulerState()
        for task, acc, w in groups:
            weighted = update(weighted, task, acc, float(w))
            for _ in range(w):
                naive = update(naive, task, acc, 1.0)
        for task in (TaskType.ROOM_SIZE, TaskType.OBJECT_SIZE):
            a, b = weighted.for_task(task), naive.for_task(task)
            assert a.n == pytest.approx(b.n)
            assert a.s == pytest.approx(b.s)
            assert a.s_sched == pytest.approx(b.s_sched)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_singleton_any_seed():
    for seed in range(5):
        task = sample_task({TaskType.ROOM_SIZE}, SchedulerState(), CFG,
                           random.Random(seed))
        assert task is TaskType.ROOM_SIZE


def test_sample_deterministic_sequence():
    feasible = {TaskType.ROOM_SIZE, TaskType.OBJECT_SIZE,
                TaskType.RELATIVE_DIRECTION}
    state = SchedulerState()
    seq1 = [sample_task(feasible, state, CFG, random.Random(42))
            for _ in range(10)]
    seq2 = [sample_task(feasible, state, CFG, random.Random(42))
            for _ in range(10)]
    assert seq1 == seq2
    rng1, rng2 = random.Random(7), random.Random(7)
    seq3 = [sample_task(feasible, state, CFG, rng1) for _ in range(50)]
    seq4 = [sample_task(feasible, state, CFG, rng2) for _ in range(50)]
    assert seq3 == seq4


def test_sample_monte_carlo_matches_analytic():
    state = SchedulerState(stats={
        TaskType.RELATIVE_DIRECTION: TaskStats(n=18.0, s=18.3, s_sched=18.3)})
    feasible = {TaskType.ROOM_SIZE, TaskType.RELATIVE_DIRECTION}
    rng = random.Random(123)
    n = 100_000
    hits = sum(
        1 for _ in range(n)
        if sample_task(feasible, state, CFG, rng) is TaskType.ROOM_SIZE)
    assert abs(hits / n - 0.928571) < 0.01


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def test_snapshot_roundtrip(tmp_path):
    state = SchedulerState()
    state = update(state, TaskType.ROOM_SIZE, 0.7, 4.0)
    state = update(state, TaskType.OBJECT_SIZE, 0.3, 2.0)
    path = tmp_path / "sched.snapshot"
    save_snapshot(state, path)
    loaded = load_snapshot(path)
    assert loaded.stats == state.stats
    assert snapshot_digest(loaded) == snapshot_digest(state)
