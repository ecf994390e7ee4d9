"""Per-task success verdicts computed from episode logs."""

from __future__ import annotations

import numpy as np

from . import envs
from .envs import count_beats

COSINE_HORIZON = 96
COSINE_MSE = 0.02
DRUM_BEATS = 3
DRUM_HOLD_STEPS = 24
DRUM_HOLD_Z = 0.9


def fit_cosine_phase(y):
    """Phase of the unit cosine (fixed period) closest to ``y`` in least squares.

    ``y[k]`` is compared with ``cos(2*pi*(k+1)/P + phi)``: the k-th executed
    action is the position after k+1 steps.
    """
    y = np.asarray(y, dtype=np.float64)
    k = np.arange(1, len(y) + 1)
    w = 2 * np.pi * k / envs.PERIOD
    # cos(w + phi) = cos(w)cos(phi) - sin(w)sin(phi): linear in (cos phi, sin phi)
    A = np.stack([np.cos(w), -np.sin(w)], axis=1)
    c, s = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(np.arctan2(s, c))


def cosine_mse(y, horizon=COSINE_HORIZON):
    y = np.asarray(y, dtype=np.float64)[:horizon]
    phi = fit_cosine_phase(y)
    ref = np.cos(2 * np.pi * np.arange(1, len(y) + 1) / envs.PERIOD + phi)
    return float(np.mean((y - ref) ** 2))


def check_success(task, log) -> bool:
    if log.aborted:
        return False
    executed = log.executed
    if task == "cosine":
        if len(executed) < COSINE_HORIZON:
            return False
        return cosine_mse(executed[:, 0]) < COSINE_MSE
    if task == "drum":
        z = np.array([p[0] for p in log.positions])
        if len(z) < DRUM_HOLD_STEPS + 1:
            return False
        return (
            count_beats(z) == DRUM_BEATS
            and log.final.get("contact_count") == DRUM_BEATS
            and bool(np.all(z[-DRUM_HOLD_STEPS:] >= DRUM_HOLD_Z))
        )
    if task == "scoop":
        return bool(log.final.get("captured", False))
    envs.task_info(task)
    return False
