"""Kinematic desk-scale environments: cosine tracking, drum beats and duck scooping.

Every environment is position controlled: an action is the commanded next
position of the agent. States are immutable values; :func:`step_env` returns
a new state together with the observation of that state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..exceptions import EnvironmentFault, UnknownTaskError

# cosine
PERIOD = 32
COSINE_CLIP = 1.2

# drum
CONTACT_Z = 0.1
REARM_Z = 0.5
REST_Z = 1.0
BEAT_PERIOD = 16
BEAT_AMPLITUDES = (1.0, 0.85, 0.7)
DRUM_CLIP = (0.0, 1.2)

# scoop
MAX_STEP = 0.05
DRIFT_GAIN = 0.02
DRIFT_LENGTH = 0.3
CAPTURE_DEPTH = 0.05
CAPTURE_HALF_WIDTH = 0.08
LIFT_Z = 0.5
SURFACE_Z = 0.3
TANK_X = (0.0, 2.0)
SCOOP_BOUNDS = ((0.0, 2.0), (0.0, 1.0))
SCOOP_START_X = (0.05, 0.15)
DUCK_START_X = (0.9, 1.3)


@dataclass(frozen=True)
class TaskInfo:
    name: str
    task_id: int
    D: int
    obs_dim: int
    demo_length: int
    max_steps: int


TASKS = {
    "cosine": TaskInfo("cosine", 0, 1, 1, 160, 96),
    "drum": TaskInfo("drum", 1, 1, 2, 120, 132),
    "scoop": TaskInfo("scoop", 2, 2, 4, 96, 72),
}


def task_info(task) -> TaskInfo:
    try:
        return TASKS[task]
    except KeyError:
        raise UnknownTaskError(f"unknown task {task!r}; expected one of {sorted(TASKS)}") from None


@dataclass(frozen=True)
class Observation:
    sensor: np.ndarray
    valid: bool = True

    def occluded(self):
        return Observation(np.zeros_like(self.sensor), valid=False)


@dataclass(frozen=True)
class OcclusionPlan:
    """Consecutive replans whose observation is blanked out."""

    start_replan: int
    length: int

    def __post_init__(self):
        if self.start_replan < 1:
            raise ValueError("the bootstrap plan (replan 0) cannot be occluded")
        if self.length < 0:
            raise ValueError("occlusion length must be nonnegative")

    def covers(self, k):
        return self.start_replan <= k < self.start_replan + self.length

    @classmethod
    def parse(cls, text):
        """``"START:LEN"`` as used on the command line."""
        start, length = text.split(":")
        return cls(int(start), int(length))

    def __str__(self):
        return f"{self.start_replan}:{self.length}"


@dataclass(frozen=True)
class EnvState:
    task: str
    t: int
    agent: np.ndarray
    target: Optional[np.ndarray] = None
    captured: bool = False
    contact_count: int = 0
    armed: bool = True
    latched: bool = False
    phase: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)


def observe(state: EnvState) -> Observation:
    if state.task == "cosine":
        s = np.array([state.agent[0]])
    elif state.task == "drum":
        z = state.agent[0]
        s = np.array([z, 1.0 if z < CONTACT_Z else 0.0])
    elif state.task == "scoop":
        s = np.concatenate([state.agent, state.target])
    else:
        raise UnknownTaskError(state.task)
    return Observation(s.astype(np.float64), True)


def reset(task, rng: np.random.Generator | None = None) -> EnvState:
    """Random initial state; ``rng=None`` gives the nominal start."""
    task_info(task)
    if task == "cosine":
        phi = 0.0 if rng is None else float(rng.uniform(0.0, 2 * np.pi))
        return EnvState("cosine", 0, np.array([np.cos(phi)]), phase=phi)
    if task == "drum":
        return EnvState("drum", 0, np.array([REST_Z]))
    ax = np.mean(SCOOP_START_X) if rng is None else float(rng.uniform(*SCOOP_START_X))
    tx = np.mean(DUCK_START_X) if rng is None else float(rng.uniform(*DUCK_START_X))
    return EnvState("scoop", 0, np.array([ax, 0.9]), target=np.array([tx, SURFACE_Z]), armed=False)


def reset_from_observation(task, sensor) -> EnvState:
    """Initial state consistent with a demonstration's first observation."""
    s = np.asarray(sensor, dtype=np.float64)
    if task == "cosine":
        return EnvState("cosine", 0, s[:1].copy())
    if task == "drum":
        return EnvState("drum", 0, s[:1].copy(), armed=bool(s[0] >= CONTACT_Z))
    if task == "scoop":
        return EnvState("scoop", 0, s[:2].copy(), target=s[2:4].copy(), armed=False)
    raise UnknownTaskError(task)


def drift_speed(agent, target):
    return DRIFT_GAIN * np.exp(-np.linalg.norm(agent - target) / DRIFT_LENGTH)


def under_target(agent, target):
    return bool(agent[1] < target[1] - CAPTURE_DEPTH and abs(agent[0] - target[0]) < CAPTURE_HALF_WIDTH)


def step_env(state: EnvState, action) -> tuple[EnvState, Observation]:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise EnvironmentFault(f"non-finite action {a} at t={state.t}")
    if state.task == "cosine":
        new = replace(state, t=state.t + 1, agent=np.clip(a[:1], -COSINE_CLIP, COSINE_CLIP))
    elif state.task == "drum":
        z = float(np.clip(a[0], *DRUM_CLIP))
        count, armed = state.contact_count, state.armed
        if armed and z < CONTACT_Z:
            count += 1
            armed = False
        elif not armed and z > REARM_Z:
            armed = True
        new = replace(state, t=state.t + 1, agent=np.array([z]), contact_count=count, armed=armed)
    elif state.task == "scoop":
        new = _step_scoop(state, a)
    else:
        raise UnknownTaskError(state.task)
    return new, observe(new)


def _step_scoop(state, a):
    lo = np.array([b[0] for b in SCOOP_BOUNDS])
    hi = np.array([b[1] for b in SCOOP_BOUNDS])
    goal = np.clip(a[:2], lo, hi)
    delta = goal - state.agent
    n = np.linalg.norm(delta)
    if n > MAX_STEP:
        delta = delta * (MAX_STEP / n)
    agent = state.agent + delta
    target = state.target.copy()
    latched = state.latched
    if latched:
        # the duck rides in the ladle
        target = np.array([agent[0], max(agent[1] + CAPTURE_DEPTH, SURFACE_Z)])
    else:
        away = 1.0 if target[0] >= agent[0] else -1.0
        target[0] = float(np.clip(target[0] + away * drift_speed(agent, target), *TANK_X))
        latched = under_target(agent, target)
    captured = state.captured or (latched and agent[1] > LIFT_Z)
    return replace(state, t=state.t + 1, agent=agent, target=target, latched=latched, captured=captured)


def count_beats(z, threshold=CONTACT_Z, rearm=REARM_Z) -> int:
    """Number of armed downward crossings of ``threshold``.

    The counter re-arms only after the signal rises above ``rearm``. A
    signal that starts below the threshold is not counted until it re-arms.
    """
    if rearm <= threshold:
        raise ValueError("rearm level must lie above the contact threshold")
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size == 0:
        return 0
    armed = z[0] >= threshold
    count = 0
    for v in z:
        if armed and v < threshold:
            count += 1
            armed = False
        elif not armed and v > rearm:
            armed = True
    return count
