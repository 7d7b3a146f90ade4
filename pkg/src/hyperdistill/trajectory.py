"""Inner-optimization rollouts and their recorded trajectories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Batch, InnerProblem, sgd_step
from .errors import DivergenceError, TrajectoryError
from .vecmath import Vector, as_vector


@dataclass
class Trajectory:
    """A completed inner run under a fixed hyperparameter vector.

    ``intermediates`` holds w_1 .. w_{T-1} when the run was recorded and
    is None otherwise (only the endpoints are stored then).
    """

    w0: Vector
    wT: Vector
    batches: list[Batch]
    lam: Vector
    intermediates: list[Vector] | None = None

    @property
    def T(self) -> int:
        return len(self.batches)

    def weight_at(self, t: int) -> Vector:
        """w_t for t in [0, T]; requires a recorded trajectory for 0 < t < T."""
        if t < 0 or t > self.T:
            raise TrajectoryError(f"step {t} outside [0, {self.T}]")
        if t == 0:
            return self.w0
        if t == self.T:
            return self.wT
        if self.intermediates is None:
            raise TrajectoryError("trajectory was not recorded")
        return self.intermediates[t - 1]

    def prefix(self, t: int) -> "Trajectory":
        """The recorded sub-trajectory w_0 .. w_t over the first t batches."""
        if self.intermediates is None:
            raise TrajectoryError("trajectory was not recorded")
        if t < 1 or t > self.T:
            raise TrajectoryError(f"prefix length {t} outside [1, {self.T}]")
        return Trajectory(
            w0=self.w0,
            wT=self.weight_at(t),
            batches=self.batches[:t],
            lam=self.lam,
            intermediates=[self.intermediates[i] for i in range(t - 1)],
        )


def run_inner(
    problem: InnerProblem,
    lam,
    w0,
    batches: list[Batch],
    record: bool = False,
) -> Trajectory:
    """Roll T = len(batches) SGD steps from w0 under frozen lam.

    Raises DivergenceError (carrying the failing step index) as soon as
    the weights stop being finite.
    """
    lam = as_vector(lam, "lam")
    w = as_vector(w0, "w0")
    inters: list[Vector] = []
    for t, batch in enumerate(batches, start=1):
        w = sgd_step(problem, w, lam, batch)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t)
        if record and t < len(batches):
            inters.append(w)
    return Trajectory(
        w0=np.array(w0, dtype=np.float64),
        wT=w,
        batches=list(batches),
        lam=lam,
        intermediates=inters if record else None,
    )
