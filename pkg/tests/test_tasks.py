import csv

import numpy as np
import pytest

from maltml.tasks import (FamilyParams, ShotConfig, Task, draw_samples, sample_family,
                          sample_family_batch, sample_joint_tasks, sample_task, streams,
                          write_episode_dump)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_family_phase_statistics():
    g = rng(1)
    phases = np.array([sample_family(g).phase for _ in range(10_000)])
    assert phases.min() >= 0.0 and phases.max() <= np.pi
    assert abs(phases.mean() - np.pi / 2) < 0.05


def test_task_amplitude_statistics():
    g = rng(2)
    fam = FamilyParams(1.0)
    amps = np.array([sample_task(fam, g).amplitude for _ in range(10_000)])
    assert amps.min() >= 0.1 and amps.max() <= 5.0
    assert abs(amps.mean() - 2.55) < 0.05


def test_samplers_are_seeded():
    assert sample_family(rng(5)) == sample_family(rng(5))
    assert sample_family(rng(5)) != sample_family(rng(6))
    fam = FamilyParams(0.4)
    assert sample_task(fam, rng(3)) == sample_task(fam, rng(3))
    assert all(sample_task(fam, rng(s)).phase == 0.4 for s in range(20))


def test_draw_samples_values():
    s = draw_samples(Task(1.0, 0.0), 1, rng())
    assert s.ys[0] == np.sin(s.xs[0])
    assert Task(1.0, 0.0)(np.pi / 2) == 1.0
    assert Task(2.0, np.pi / 2)(0.0) == 2.0
    small = draw_samples(Task(0.1, 1.0), 500, rng(4))
    assert np.all(np.abs(small.ys) <= 0.1)
    assert np.all((small.xs >= -5) & (small.xs <= 5))


def test_draw_samples_needs_points():
    with pytest.raises(ValueError):
        draw_samples(Task(1.0, 0.0), 0, rng())


@pytest.mark.parametrize("bad", [lambda: FamilyParams(-0.1), lambda: FamilyParams(3.2),
                                 lambda: Task(0.05, 0.0), lambda: Task(5.1, 0.0),
                                 lambda: ShotConfig(L=0)])
def test_range_invariants(bad):
    with pytest.raises(ValueError):
        bad()


def test_family_batch_layout():
    shots = ShotConfig(L=5, K=5, Q=5, validation_tasks=2)
    b = sample_family_batch(streams(0, 0, 1), 10, shots)
    assert b.meta.support_x.shape == (10, 5, 5, 1)
    assert b.meta.query_y.shape == (10, 5, 5)
    assert b.goal.support_x.shape == (10, 2, 5, 1)
    assert b.goal.query_x.shape == (10, 2, 5, 1)
    np.testing.assert_array_equal(b.meta.phases, np.repeat(b.phases[:, None], 5, axis=1))
    np.testing.assert_array_equal(b.goal.phases, np.repeat(b.phases[:, None], 2, axis=1))
    expected = b.meta.amplitudes[..., None] * np.sin(b.meta.query_x[..., 0] + b.meta.phases[..., None])
    np.testing.assert_array_equal(b.meta.query_y, expected)


def test_support_and_query_are_fresh_draws():
    b = sample_family_batch(streams(3, 0, 1), 4, ShotConfig())
    assert not np.any(np.isin(b.meta.support_x, b.meta.query_x))
    assert not np.any(np.isin(b.goal.support_x, b.goal.query_x))


def test_stream_splitting_isolates_purposes():
    small = sample_family_batch(streams(9, 0, 4), 3, ShotConfig(K=2, Q=2))
    large = sample_family_batch(streams(9, 0, 4), 3, ShotConfig(K=20, Q=7))
    np.testing.assert_array_equal(small.phases, large.phases)
    np.testing.assert_array_equal(small.meta.amplitudes, large.meta.amplitudes)
    # a different step key gives different draws
    other = sample_family_batch(streams(9, 0, 5), 3, ShotConfig(K=2, Q=2))
    assert not np.array_equal(small.phases, other.phases)


def test_joint_tasks_have_their_own_families():
    tb = sample_joint_tasks(streams(0, 0, 1), 50, 5, 5)
    assert len(np.unique(tb.phases)) == 50
    assert tb.support_x.shape == (50, 5, 1)


def test_episode_dump_schema(tmp_path):
    g = rng(0)
    fam = sample_family(g)
    task = sample_task(fam, g)
    sets = [draw_samples(task, 2, g), draw_samples(task, 3, g, "query")]
    path = tmp_path / "episodes.csv"
    write_episode_dump(path, [(0, fam, [(0, task, sets)])])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["episode", "family_phase", "task_id", "amplitude", "role", "x", "y"]
    assert len(rows) == 6
    assert [r[4] for r in rows[1:]] == ["support"] * 2 + ["query"] * 3
    assert float(rows[1][6]) == task(float(rows[1][5]))
