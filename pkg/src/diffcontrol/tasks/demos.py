"""Scripted experts and demonstration generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import envs
from .envs import EnvState, observe, reset, step_env, task_info

DRUM_REST_AFTER = 60
DRUM_REST_BEFORE = (4, 12)
SCOOP_LEAD = 0.06
SCOOP_DEPTH = 0.25
SCOOP_ENTRY = 0.25  # horizontal distance behind the duck at which the ladle reaches depth
SCOOP_LIFT_TO = 0.75
SCOOP_LIFT_RUN = 0.6  # forward travel per lift, so the rise is slanted


@dataclass
class Demonstration:
    task: str
    actions: np.ndarray
    observations: np.ndarray
    task_id: int

    def __len__(self):
        return len(self.actions)


def cosine_profile(phi, length):
    t = np.arange(length + 1)
    return np.cos(2 * np.pi * t / envs.PERIOD + phi)


def drum_profile(rest_before, rest_after=DRUM_REST_AFTER):
    """Heights ``z(0..L)`` for a three-beat demonstration.

    Beat ``k`` descends from its amplitude to the drum head in half a period
    and rises to the next beat's amplitude (back to rest after the last).
    """
    half = envs.BEAT_PERIOD // 2
    s = np.arange(1, half + 1)
    down = (1 + np.cos(np.pi * s / half)) / 2  # 1 -> 0
    up = (1 - np.cos(np.pi * s / half)) / 2  # 0 -> 1
    tops = list(envs.BEAT_AMPLITUDES) + [envs.REST_Z]
    z = [np.full(rest_before + 1, envs.REST_Z)]
    for k in range(len(envs.BEAT_AMPLITUDES)):
        z.append(tops[k] * down)
        z.append(tops[k + 1] * up)
    z.append(np.full(rest_after, envs.REST_Z))
    return np.concatenate(z)


def scoop_expert_action(state: EnvState):
    """Dive to depth behind the duck, run underneath it, then lift while still moving forward.

    Reaching depth well before the duck gives the latch a wide margin in both
    axes, and the slanted lift keeps the ladle under the duck for a few steps
    even if the lift starts early.
    """
    a, tgt = state.agent, state.target
    away = 1.0 if tgt[0] >= a[0] else -1.0
    depth = tgt[1] - SCOOP_DEPTH
    if state.latched or state.captured:
        goal = np.array([a[0] + away * SCOOP_LIFT_RUN, SCOOP_LIFT_TO])
    elif a[1] > depth + 0.01 and away * (tgt[0] - a[0]) > SCOOP_ENTRY:
        goal = np.array([tgt[0] - away * SCOOP_ENTRY, depth])
    else:
        goal = np.array([tgt[0] + away * SCOOP_LEAD, depth])
    lo = np.array([b[0] for b in envs.SCOOP_BOUNDS])
    hi = np.array([b[1] for b in envs.SCOOP_BOUNDS])
    delta = np.clip(goal, lo, hi) - a
    n = np.linalg.norm(delta)
    if n > envs.MAX_STEP:
        delta *= envs.MAX_STEP / n
    return a + delta


def _rollout_positions(state, positions):
    obs, acts = [], []
    for t in range(len(positions) - 1):
        obs.append(observe(state).sensor)
        a = np.array([positions[t + 1]])
        acts.append(a)
        state, _ = step_env(state, a)
    return np.array(acts), np.array(obs)


def gen_demos(task, n, rng: np.random.Generator) -> list[Demonstration]:
    info = task_info(task)
    if n < 1:
        raise ValueError("need at least one demonstration")
    demos = []
    for _ in range(n):
        if task == "cosine":
            phi = float(rng.uniform(0.0, 2 * np.pi))
            y = cosine_profile(phi, info.demo_length)
            acts, obs = y[1:, None], y[:-1, None]
        elif task == "drum":
            r = int(rng.integers(DRUM_REST_BEFORE[0], DRUM_REST_BEFORE[1] + 1))
            z = drum_profile(r, rest_after=info.demo_length - r - 3 * envs.BEAT_PERIOD)
            acts, obs = _rollout_positions(reset(task), z)
        else:
            state = reset(task, rng)
            acts, obs = [], []
            for _ in range(info.demo_length):
                obs.append(observe(state).sensor)
                a = scoop_expert_action(state)
                acts.append(a)
                state, _ = step_env(state, a)
            acts, obs = np.array(acts), np.array(obs)
        demos.append(Demonstration(task, np.asarray(acts, float), np.asarray(obs, float), info.task_id))
    return demos
