"""Deterministic task and batch sampling.

Every random draw is keyed by (sampler seed, stream tag, split, task
index), so identical (family, seed) pairs reproduce identical task and
batch sequences regardless of consumption order elsewhere.
"""

from __future__ import annotations

import numpy as np

from ..engine import Backend, Batch, InnerProblem
from ..errors import ConfigError
from .quadratic import LinearTask, QuadraticTask
from .reweight import ReweightTask
from .sinusoid import SinusoidTask

SPLITS = {"meta_train": 0, "meta_test": 1, "estimation": 2, "probe": 3}

_STREAM_TASK = 11
_STREAM_BATCH = 12
_STREAM_VAL = 13
_STREAM_DISTILL = 14

FAMILIES = ("quadratic", "linear", "sinusoid", "reweight")


def _build_quadratic(rng, kwargs):
    kw = dict(kwargs)
    center = kw.pop("target_center", 2.0)
    spread = kw.pop("target_spread", 0.0)
    n = int(kw.get("n", 5))
    target = np.full(n, float(center)) + float(spread) * rng.standard_normal(n)
    return QuadraticTask(val_target=target, noise_seed=int(rng.integers(2**31)), **kw)


def _build_linear(rng, kwargs):
    kw = dict(kwargs)
    n = int(kw.get("n", 5))
    target = float(kw.pop("target_scale", 1.0)) * rng.standard_normal(n)
    return LinearTask(val_target=target, noise_seed=int(rng.integers(2**31)), **kw)


_BUILDERS = {
    "quadratic": _build_quadratic,
    "linear": _build_linear,
    "sinusoid": lambda rng, kw: SinusoidTask.sample(rng, **kw),
    "reweight": lambda rng, kw: ReweightTask.sample(rng, **kw),
}


class TaskSampler:
    def __init__(
        self,
        family: str,
        seed: int,
        batch_size: int,
        T: int,
        val_batch_size: int | None = None,
        problem_kwargs: dict | None = None,
    ):
        if family not in FAMILIES:
            raise ConfigError(f"unknown task family {family!r}, expected one of {FAMILIES}")
        if batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {batch_size}")
        if T < 1:
            raise ConfigError(f"T must be positive, got {T}")
        self.family = family
        self.seed = int(seed)
        self.batch_size = int(batch_size)
        self.T = int(T)
        self.val_batch_size = None if val_batch_size is None else int(val_batch_size)
        self.problem_kwargs = dict(problem_kwargs or {})

    def _rng(self, stream: int, *tail: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream, *tail])

    def sample_task(self, index: int, split: str = "meta_train") -> InnerProblem:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        if index < 0:
            raise ConfigError(f"task index must be nonnegative, got {index}")
        rng = self._rng(_STREAM_TASK, SPLITS[split], index)
        task = _BUILDERS[self.family](rng, self.problem_kwargs)
        task.key = (SPLITS[split], index)
        task.sampler_seed = self.seed
        if self.batch_size > task.train_size:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds train split of {task.train_size}"
            )
        return task

    def _owned(self, task: InnerProblem) -> tuple[int, ...]:
        key = getattr(task, "key", None)
        if key is None or getattr(task, "sampler_seed", None) != self.seed:
            raise ConfigError("task was not drawn from this sampler")
        return key

    def batch_stream(self, task: InnerProblem) -> list[Batch]:
        """T batches of unique indices, consecutive slices of per-epoch shuffles."""
        key = self._owned(task)
        rng = self._rng(_STREAM_BATCH, *key)
        n, b = task.train_size, self.batch_size
        out: list[Batch] = []
        while len(out) < self.T:
            perm = rng.permutation(n)
            for i in range(n // b):
                out.append(Batch(tuple(sorted(int(j) for j in perm[i * b : (i + 1) * b]))))
                if len(out) == self.T:
                    break
        return out

    def val_batch(self, task: InnerProblem, nonce: int = 0) -> Batch:
        """Held-out validation batch, fixed within one inner-optimization."""
        key = self._owned(task)
        if self.val_batch_size is None or self.val_batch_size >= task.val_size:
            return Batch(tuple(range(task.val_size)))
        rng = self._rng(_STREAM_VAL, *key, nonce)
        idx = rng.choice(task.val_size, size=self.val_batch_size, replace=False)
        return Batch(tuple(sorted(int(j) for j in idx)))

    def subsample_rng(self, task: InnerProblem, nonce: int = 0) -> np.random.Generator:
        key = self._owned(task)
        return self._rng(_STREAM_DISTILL, *key, nonce)
