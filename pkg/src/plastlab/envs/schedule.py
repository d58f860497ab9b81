"""Task scheduling across the three continual-learning protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, SpecError
from .gridworld import GridWorldEnv
from .pointmass import PointMassEnv

FAMILIES = ("gridworld", "pointmass", "probe")
LEVEL_OFFSET = 20


@dataclass(frozen=True)
class TaskSpec:
    family: str
    level_seed: int
    task_variant: str = ""
    horizon: int = 100

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise SpecError(f"unknown env family {self.family!r}")
        if self.horizon < 1:
            raise SpecError(f"horizon must be >= 1, got {self.horizon}")


@dataclass
class ScenarioSchedule:
    mode: str
    segment_length: int
    segments: tuple[TaskSpec, ...]

    def __post_init__(self) -> None:
        if self.mode not in ("standard", "level_shift", "task_chain"):
            raise SpecError(f"unknown scenario mode {self.mode!r}")
        if self.mode == "standard" and len(self.segments) != 1:
            raise SpecError("standard mode needs exactly one segment")
        if self.segment_length < 1:
            raise SpecError("segment_length must be >= 1")


def build_schedule(
    mode: str,
    family: str,
    base_seed: int,
    segment_length: int,
    n_segments: int,
    variants: tuple[str, ...] = (),
    horizon: int = 100,
    level_offset: int = LEVEL_OFFSET,
) -> ScenarioSchedule:
    """Expand a scenario description into explicit per-segment task specs.

    standard: one fixed task. level_shift: same variant, level_seed stepped
    by level_offset per segment. task_chain: cycles the variant sequence on
    a fixed level_seed.
    """
    if mode == "standard":
        variant = variants[0] if variants else ""
        segments = (TaskSpec(family, base_seed, variant, horizon),)
        return ScenarioSchedule(mode, segment_length, segments)
    if n_segments < 1:
        raise SpecError("continual scenarios need n_segments >= 1")
    if mode == "level_shift":
        variant = variants[0] if variants else ""
        segments = tuple(
            TaskSpec(family, base_seed + i * level_offset, variant, horizon)
            for i in range(n_segments)
        )
        return ScenarioSchedule(mode, segment_length, segments)
    if mode == "task_chain":
        if not variants:
            raise SpecError("task_chain needs a variant sequence")
        segments = tuple(
            TaskSpec(family, base_seed, variants[i % len(variants)], horizon)
            for i in range(n_segments)
        )
        return ScenarioSchedule(mode, segment_length, segments)
    raise SpecError(f"unknown scenario mode {mode!r}")


def schedule_shift(sched: ScenarioSchedule, global_step: int) -> tuple[TaskSpec, bool]:
    """Task spec active at global_step, plus a flag firing at each boundary.

    The flag is true at step 0 and whenever a new (unclamped) segment starts;
    once the schedule is exhausted the last segment holds and the flag stays
    false.
    """
    if not sched.segments:
        raise SpecError("schedule has no segments")
    if global_step < 0:
        raise InvalidInputError(f"global_step must be >= 0, got {global_step}")
    raw = global_step // sched.segment_length
    idx = min(raw, len(sched.segments) - 1)
    switched = global_step % sched.segment_length == 0 and raw < len(sched.segments)
    return sched.segments[idx], switched


def make_env(spec: TaskSpec):
    """Instantiate the environment for a task spec; returns (env, obs)."""
    if spec.family == "gridworld":
        env = GridWorldEnv(spec.level_seed, spec.horizon)
    elif spec.family == "pointmass":
        env = PointMassEnv(spec.level_seed, spec.horizon, spec.task_variant or "walk")
    else:
        raise SpecError(f"make_env has no environment for family {spec.family!r}")
    return env, env.reset()


def env_step(env, action) -> tuple[np.ndarray, float, bool]:
    return env.step(action)
