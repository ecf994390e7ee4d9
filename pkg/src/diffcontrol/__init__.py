"""Stateful diffusion policies on desk-scale synthetic tasks.

A base denoiser samples action windows from an observation. A transition
branch, wired in through zero-initialized connectors, lets each new window
condition on the one generated before it.
"""

from .config import RunConfig, load_config, tool_version
from .diffusion import NoiseSchedule, forward_diffuse, make_schedule, reverse_step, sample_loop
from .estimators import BCPolicy, DiffControlPolicy, DiffusionPolicy
from .eval import BenchmarkConfig, Report, execution_gap, mode_spread, run_benchmark
from .exceptions import DiffControlError
from .nets import DenoiserConfig, denoise_base, denoise_controlled, init_base, init_transition
from .policy import PolicyParams, PolicySpec, PolicyState, plan, rollout, rollout_batch
from .training import load_checkpoint, save_checkpoint, slice_windows, train_base, train_transition

__version__ = tool_version()

__all__ = [
    "BCPolicy",
    "BenchmarkConfig",
    "DenoiserConfig",
    "DiffControlError",
    "DiffControlPolicy",
    "DiffusionPolicy",
    "NoiseSchedule",
    "PolicyParams",
    "PolicySpec",
    "PolicyState",
    "Report",
    "RunConfig",
    "denoise_base",
    "denoise_controlled",
    "execution_gap",
    "forward_diffuse",
    "init_base",
    "init_transition",
    "load_checkpoint",
    "load_config",
    "make_schedule",
    "mode_spread",
    "plan",
    "reverse_step",
    "rollout",
    "rollout_batch",
    "run_benchmark",
    "sample_loop",
    "save_checkpoint",
    "slice_windows",
    "train_base",
    "train_transition",
]
