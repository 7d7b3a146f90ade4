"""Desk-scale bilevel task families."""

from .quadratic import LinearTask, QuadraticTask
from .reweight import ReweightTask
from .sampler import SPLITS, TaskSampler
from .sinusoid import SinusoidTask

__all__ = [
    "LinearTask",
    "QuadraticTask",
    "ReweightTask",
    "SinusoidTask",
    "TaskSampler",
    "SPLITS",
]
