"""Synthetic cosine, drum-beat and duck-scooping tasks."""

from .dataset import load_demos, replay_demo, save_demos
from .demos import Demonstration, drum_profile, gen_demos, scoop_expert_action
from .envs import (
    TASKS,
    EnvState,
    Observation,
    OcclusionPlan,
    count_beats,
    observe,
    reset,
    reset_from_observation,
    step_env,
    task_info,
)
from .success import check_success, cosine_mse, fit_cosine_phase

__all__ = [
    "TASKS",
    "Demonstration",
    "EnvState",
    "Observation",
    "OcclusionPlan",
    "check_success",
    "cosine_mse",
    "count_beats",
    "drum_profile",
    "fit_cosine_phase",
    "gen_demos",
    "load_demos",
    "observe",
    "replay_demo",
    "reset",
    "reset_from_observation",
    "save_demos",
    "scoop_expert_action",
    "step_env",
    "task_info",
]
