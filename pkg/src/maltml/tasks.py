"""Hierarchical sinusoid tasks.

A family fixes the phase j ~ U[0, pi]; tasks in the family draw an
amplitude a ~ U[0.1, 5.0] and map x ~ U[-5, 5] to y = a * sin(x + j).

Randomness is split by purpose. ``streams(seed, *key)`` returns three
independent generators (families, tasks, samples) derived from the master
seed and a key such as the training step or evaluation episode, so that
changing, say, the number of samples per task never shifts the phases or
amplitudes drawn elsewhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PHASE_RANGE = (0.0, float(np.pi))
AMPLITUDE_RANGE = (0.1, 5.0)
INPUT_RANGE = (-5.0, 5.0)

_PURPOSES = {"families": 0, "tasks": 1, "samples": 2}


class Streams(NamedTuple):
    families: np.random.Generator
    tasks: np.random.Generator
    samples: np.random.Generator


def streams(seed: int, *key: int) -> Streams:
    def gen(purpose: str) -> np.random.Generator:
        ss = np.random.SeedSequence(int(seed), spawn_key=(*map(int, key), _PURPOSES[purpose]))
        return np.random.default_rng(ss)

    return Streams(gen("families"), gen("tasks"), gen("samples"))


@dataclass(frozen=True)
class FamilyParams:
    phase: float

    def __post_init__(self):
        lo, hi = PHASE_RANGE
        if not lo <= self.phase <= hi:
            raise ValueError(f"phase {self.phase} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class Task:
    amplitude: float
    phase: float

    def __post_init__(self):
        lo, hi = AMPLITUDE_RANGE
        if not lo <= self.amplitude <= hi:
            raise ValueError(f"amplitude {self.amplitude} outside [{lo}, {hi}]")

    def __call__(self, x):
        return self.amplitude * np.sin(np.asarray(x, dtype=np.float64) + self.phase)


@dataclass(frozen=True)
class SampleSet:
    xs: np.ndarray
    ys: np.ndarray
    role: str = "support"

    def __post_init__(self):
        if self.xs.shape != self.ys.shape:
            raise ValueError("xs and ys must have the same shape")
        if self.role not in ("support", "query"):
            raise ValueError(f"unknown role {self.role!r}")

    def __len__(self) -> int:
        return len(self.xs)


@dataclass(frozen=True)
class ShotConfig:
    L: int = 5
    K: int = 5
    Q: int = 5
    validation_tasks: int = 2

    def __post_init__(self):
        for name in ("L", "K", "Q", "validation_tasks"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value}")


def sample_family(rng: np.random.Generator) -> FamilyParams:
    return FamilyParams(float(rng.uniform(*PHASE_RANGE)))


def sample_task(family: FamilyParams, rng: np.random.Generator) -> Task:
    return Task(float(rng.uniform(*AMPLITUDE_RANGE)), family.phase)


def draw_samples(task: Task, n: int, rng: np.random.Generator, role: str = "support") -> SampleSet:
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    xs = rng.uniform(*INPUT_RANGE, size=n)
    return SampleSet(xs, task(xs), role)


# -- batched episodes used by the training loops ------------------------------

@dataclass(frozen=True)
class TaskBatch:
    """Tasks stacked along leading axes; ``x`` arrays carry a trailing input axis of 1."""

    phases: np.ndarray       # batch
    amplitudes: np.ndarray   # batch
    support_x: np.ndarray    # batch + (K, 1)
    support_y: np.ndarray    # batch + (K,)
    query_x: np.ndarray      # batch + (Q, 1)
    query_y: np.ndarray      # batch + (Q,)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.amplitudes.shape


@dataclass(frozen=True)
class FamilyBatch:
    """Per family: L meta tasks (support K, query Q) and goal tasks (support K, validation Q)."""

    phases: np.ndarray  # (D,)
    meta: TaskBatch     # (D, L)
    goal: TaskBatch     # (D, C)

    def __len__(self) -> int:
        return len(self.phases)


def _stack(tasks: list[Task], n_support: int, n_query: int, rng: np.random.Generator,
           shape: tuple[int, ...]) -> TaskBatch:
    sup = [draw_samples(t, n_support, rng) for t in tasks]
    qry = [draw_samples(t, n_query, rng, "query") for t in tasks]
    return TaskBatch(
        phases=np.array([t.phase for t in tasks]).reshape(shape),
        amplitudes=np.array([t.amplitude for t in tasks]).reshape(shape),
        support_x=np.stack([s.xs for s in sup]).reshape(shape + (n_support, 1)),
        support_y=np.stack([s.ys for s in sup]).reshape(shape + (n_support,)),
        query_x=np.stack([s.xs for s in qry]).reshape(shape + (n_query, 1)),
        query_y=np.stack([s.ys for s in qry]).reshape(shape + (n_query,)),
    )


def sample_family_batch(st: Streams, n_families: int, shots: ShotConfig) -> FamilyBatch:
    families = [sample_family(st.families) for _ in range(n_families)]
    meta = [sample_task(f, st.tasks) for f in families for _ in range(shots.L)]
    goal = [sample_task(f, st.tasks) for f in families for _ in range(shots.validation_tasks)]
    return FamilyBatch(
        phases=np.array([f.phase for f in families]),
        meta=_stack(meta, shots.K, shots.Q, st.samples, (n_families, shots.L)),
        goal=_stack(goal, shots.K, shots.Q, st.samples, (n_families, shots.validation_tasks)),
    )


def sample_joint_tasks(st: Streams, n_tasks: int, n_support: int, n_query: int) -> TaskBatch:
    """Tasks from the flattened hierarchy: a fresh family for every task."""
    tasks = [sample_task(sample_family(st.families), st.tasks) for _ in range(n_tasks)]
    return _stack(tasks, n_support, n_query, st.samples, (n_tasks,))


EPISODE_COLUMNS = ("episode", "family_phase", "task_id", "amplitude", "role", "x", "y")


def write_episode_dump(path, episodes) -> None:
    """Write sampled episodes as CSV rows (see ``EPISODE_COLUMNS``).

    ``episodes`` yields ``(episode_index, family, [(task_id, task, [SampleSet, ...]), ...])``.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_COLUMNS)
        for index, family, tasks in episodes:
            for task_id, task, sets in tasks:
                for s in sets:
                    for x, y in zip(s.xs, s.ys):
                        writer.writerow([index, repr(family.phase), task_id,
                                         repr(task.amplitude), s.role, repr(float(x)), repr(float(y))])
