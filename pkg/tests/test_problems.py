import numpy as np
import pytest

from hyperdistill.engine import Batch
from hyperdistill.errors import ConfigError, DivergenceError, TrajectoryError
from hyperdistill.problems import QuadraticTask, TaskSampler
from hyperdistill.trajectory import run_inner


def quad_sampler(seed=0, T=5, batch_size=4, **problem):
    kwargs = {"n": 3, "k": 1.0, "inner_lr": 0.5, "train_size": 16, "noise_scale": 0.1}
    kwargs.update(problem)
    return TaskSampler("quadratic", seed=seed, batch_size=batch_size, T=T, problem_kwargs=kwargs)


def test_sampler_determinism():
    s1, s2 = quad_sampler(seed=9), quad_sampler(seed=9)
    t1, t2 = s1.sample_task(3), s2.sample_task(3)
    assert np.array_equal(t1.val_target, t2.val_target)
    assert [b.indices for b in s1.batch_stream(t1)] == [b.indices for b in s2.batch_stream(t2)]
    # another index gives another task stream
    t3 = s1.sample_task(4)
    assert [b.indices for b in s1.batch_stream(t1)] != [b.indices for b in s1.batch_stream(t3)]


def test_sampler_splits_are_disjoint_streams():
    s = quad_sampler(target_spread=1.0)
    a = s.sample_task(0, "meta_train")
    b = s.sample_task(0, "meta_test")
    assert not np.array_equal(a.val_target, b.val_target)


def test_batch_stream_shapes_and_coverage():
    s = quad_sampler(T=10, batch_size=2)  # 10*2 >= 16
    task = s.sample_task(0)
    stream = s.batch_stream(task)
    assert len(stream) == 10
    union = set()
    for b in stream:
        assert b.size == 2
        assert len(set(b.indices)) == 2
        union.update(b.indices)
    assert len(union) > 0.9 * task.train_size


def test_batch_stream_rejects_foreign_task():
    s1, s2 = quad_sampler(seed=1), quad_sampler(seed=2)
    task = s1.sample_task(0)
    with pytest.raises(ConfigError):
        s2.batch_stream(task)


def test_batch_size_exceeds_dataset():
    s = quad_sampler(batch_size=32)  # train split is only 16
    with pytest.raises(ConfigError):
        s.sample_task(0)


def test_unknown_family_and_bad_args():
    with pytest.raises(ConfigError):
        TaskSampler("nope", seed=0, batch_size=2, T=3)
    with pytest.raises(ConfigError):
        TaskSampler("quadratic", seed=0, batch_size=0, T=3)
    with pytest.raises(ConfigError):
        quad_sampler().sample_task(0, split="bogus")


def test_sinusoid_task_ranges():
    s = TaskSampler("sinusoid", seed=3, batch_size=10, T=5,
                    problem_kwargs={"shots": 10, "val_points": 25})
    amps, phases = [], []
    for i in range(200):
        task = s.sample_task(i)
        amps.append(task.amplitude)
        phases.append(task.phase)
        if i < 5:
            assert np.all(np.abs(task.x_train) <= 5.0)
            assert np.allclose(
                task.y_train, task.amplitude * np.sin(task.x_train[:, 0] + task.phase)
            )
            assert task.train_size == 10 and task.val_size == 25
    assert 0.1 <= min(amps) and max(amps) <= 5.0
    assert 0.0 <= min(phases) and max(phases) <= np.pi
    assert max(amps) > 4.0 and min(amps) < 0.6  # spread fills the range


def test_reweight_flip_fraction():
    s = TaskSampler("reweight", seed=4, batch_size=32, T=5,
                    problem_kwargs={"train_size": 1000, "val_size": 100, "corruption_prob": 0.4})
    task = s.sample_task(0)
    frac = float(np.mean(task.flipped))
    assert abs(frac - 0.4) < 0.05


def test_reweight_val_ignores_lam():
    s = TaskSampler("reweight", seed=5, batch_size=16, T=5,
                    problem_kwargs={"train_size": 64, "val_size": 64})
    task = s.sample_task(0)
    rng = np.random.default_rng(0)
    w = task.init_weight(rng)
    vb = s.val_batch(task)
    l1 = task.val_loss(w, task.init_hyper(rng), vb)
    l2 = task.val_loss(w, task.init_hyper(rng) * 3.0, vb)
    assert l1 == l2
    assert np.all(task.grad_val_lam(w, task.init_hyper(rng), vb) == 0.0)


def test_reweight_weight_floor():
    s = TaskSampler("reweight", seed=6, batch_size=16, T=5,
                    problem_kwargs={"train_size": 64, "val_size": 64})
    task = s.sample_task(0)
    lam = np.zeros(task.hyper_dim)
    lam[-1] = -5.0  # raw output forced far below the floor
    weights = task.example_weights(lam, np.linspace(0.0, 3.0, 10))
    assert np.all(weights == task.weight_floor)


def test_run_inner_matches_closed_form():
    q = QuadraticTask(n=3, k=1.0, inner_lr=0.5, val_target=[1.0, 1.0, 1.0],
                      noise_scale=0.2, noise_seed=13)
    batches = [Batch((i % 4, i % 4 + 4)) for i in range(6)]
    lam = np.array([1.0, -1.0, 0.5])
    w0 = np.array([2.0, 2.0, 2.0])
    traj = run_inner(q, lam, w0, batches, record=True)
    assert traj.T == 6
    assert len(traj.intermediates) == 5
    for t in range(7):
        assert np.allclose(traj.weight_at(t), q.closed_form_wt(w0, lam, t, batches), atol=1e-12)


def test_run_inner_record_contract():
    q = QuadraticTask(n=2, inner_lr=0.5)
    batches = [Batch((0,)), Batch((1,))]
    bare = run_inner(q, np.zeros(2), np.ones(2), batches)
    assert bare.intermediates is None
    with pytest.raises(TrajectoryError):
        bare.weight_at(1)
    rec = run_inner(q, np.zeros(2), np.ones(2), batches, record=True)
    assert np.allclose(rec.wT, bare.wT)


def test_run_inner_replay_reproduces():
    s = quad_sampler(T=8)
    task = s.sample_task(0)
    batches = s.batch_stream(task)
    lam = np.array([0.3, -0.5, 0.8])
    w0 = np.array([1.0, 1.0, 1.0])
    first = run_inner(task, lam, w0, batches, record=True)
    again = run_inner(task, lam, w0, batches, record=True)
    assert np.array_equal(first.wT, again.wT)
    for a, b in zip(first.intermediates, again.intermediates):
        assert np.array_equal(a, b)


def test_run_inner_divergence_carries_step():
    q = QuadraticTask(n=2, k=1.0, inner_lr=1e200)
    batches = [Batch((0,))] * 5
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as info:
        run_inner(q, np.zeros(2), np.ones(2), batches)
    assert 1 <= info.value.step <= 5


def test_trajectory_prefix():
    s = quad_sampler(T=5)
    task = s.sample_task(0)
    traj = run_inner(task, np.zeros(3), np.ones(3), s.batch_stream(task), record=True)
    pre = traj.prefix(3)
    assert pre.T == 3
    assert np.array_equal(pre.wT, traj.weight_at(3))
    assert len(pre.intermediates) == 2


def test_val_batch_default_is_full_split():
    s = quad_sampler()
    task = s.sample_task(0)
    assert s.val_batch(task).indices == tuple(range(task.val_size))
    s2 = TaskSampler("sinusoid", seed=0, batch_size=5, T=3,
                     val_batch_size=7, problem_kwargs={"shots": 10, "val_points": 30})
    t2 = s2.sample_task(0)
    vb1, vb2 = s2.val_batch(t2, nonce=1), s2.val_batch(t2, nonce=2)
    assert vb1.size == 7 and vb2.size == 7
    assert vb1.indices != vb2.indices  # resampled per inner-optimization
