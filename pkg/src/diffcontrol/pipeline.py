"""End-to-end runs: demonstrations, the training stages and the benchmark.

Checkpoints live at ``<ckpt_dir>/<task>/<stage>.ckpt``, where ``stage`` is
one of ``base``, ``transition``, ``bc`` or ``bc_recurrent``.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import tasks as T
from .baselines import train_bc
from .config import RunConfig
from .eval import BenchmarkConfig, run_benchmark
from .exceptions import InvalidConfigError, MissingCheckpointError
from .nets import DenoiserConfig
from .policy import PolicyParams, PolicySpec
from .training import (
    TrainHyper,
    load_checkpoint,
    pairs_from_demos,
    save_checkpoint,
    train_base,
    train_transition,
    write_loss_trace,
)

log = logging.getLogger(__name__)

STAGES = ("base", "transition", "bc", "bc_recurrent")
_STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}

__all__ = [
    "STAGES",
    "data_rng",
    "train_rng",
    "make_demos",
    "denoiser_config",
    "train_stage",
    "train_task",
    "load_task",
    "policy_entry",
    "benchmark",
]


def data_rng(cfg: RunConfig, task):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed_data, T.task_info(task).task_id]))


def train_rng(cfg: RunConfig, task, stage):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed_train, T.task_info(task).task_id, _STAGE_INDEX[stage]]))


def make_demos(cfg: RunConfig, task):
    return T.gen_demos(task, cfg.n_demos, data_rng(cfg, task))


def denoiser_config(cfg: RunConfig, task) -> DenoiserConfig:
    info = T.task_info(task)
    return DenoiserConfig(
        W=cfg.W,
        D=info.D,
        obs_dim=info.obs_dim,
        cond_dim=cfg.cond_dim,
        levels=len(cfg.channels),
        channels=tuple(cfg.channels),
        kernel_size=cfg.kernel_size,
        n_groups=cfg.n_groups,
        prior_hidden=cfg.prior_hidden,
    )


def _hyper(cfg: RunConfig, epochs, obs_dropout=0.0):
    return TrainHyper(
        epochs=epochs,
        batches_per_epoch=cfg.batches_per_epoch,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        obs_dropout=obs_dropout,
        blank_prior=cfg.blank_prior,
        unfreeze_base=cfg.unfreeze_base,
    )


def train_stage(cfg: RunConfig, task, stage, demos, base=None):
    """Train one stage for one task and return its checkpoint."""
    from .diffusion import make_schedule

    rng = train_rng(cfg, task, stage)
    if stage == "base":
        return train_base(demos, denoiser_config(cfg, task), _hyper(cfg, cfg.epochs_base), rng, make_schedule(*cfg.schedule))
    if stage == "transition":
        if base is None:
            raise MissingCheckpointError("the transition stage needs a trained base checkpoint")
        pairs = pairs_from_demos(demos, cfg.W, cfg.h, blank_prior=cfg.blank_prior)
        return train_transition(pairs, base, _hyper(cfg, cfg.epochs_transition, cfg.obs_dropout), rng, shift=cfg.h)
    if stage in ("bc", "bc_recurrent"):
        return train_bc(demos, stage == "bc_recurrent", _hyper(cfg, cfg.epochs_bc), rng, W=cfg.W, h=cfg.h)
    raise InvalidConfigError(f"unknown stage {stage!r}")


def stages_for(policies):
    need = []
    for p in policies:
        need += {"stateless_diffusion": ["base"], "diff_control": ["base", "transition"]}.get(p, [p])
    return [s for s in STAGES if s in need]


def train_task(cfg: RunConfig, task, demos=None, out=None, stages=None):
    """Train every stage the configured policies need; save them if ``out`` is given."""
    demos = demos if demos is not None else make_demos(cfg, task)
    stages = stages or stages_for(cfg.policies)
    ckpts = {}
    for stage in stages:
        log.info("training %s/%s", task, stage)
        ck = train_stage(cfg, task, stage, demos, base=ckpts.get("base"))
        ckpts[stage] = ck
        if out is not None:
            d = Path(out) / task
            save_checkpoint(ck, d / f"{stage}.ckpt")
            write_loss_trace(ck, d / f"{stage}_loss.csv")
    return ckpts


def load_task(ckpt_dir, task, stages):
    d = Path(ckpt_dir) / task
    ckpts = {}
    for stage in stages:
        p = d / f"{stage}.ckpt"
        if not p.exists():
            raise MissingCheckpointError(f"checkpoint not found: {p}")
        ckpts[stage] = load_checkpoint(p, kind=stage, base=ckpts.get("base") if stage == "transition" else None)
    return ckpts


def policy_entry(cfg: RunConfig, name, ckpts):
    bootstrap = cfg.bootstrap if name == "diff_control" else "base"
    spec = PolicySpec(name, W=cfg.W, h=cfg.h, bootstrap=bootstrap)
    params = PolicyParams(
        base=ckpts.get("base"),
        transition=ckpts.get("transition"),
        bc=ckpts.get(name) if name in ("bc", "bc_recurrent") else None,
    )
    params.require(spec)
    return spec, params


def benchmark(cfg: RunConfig, ckpts_by_task, perturbations=None, batched=True):
    entries = {}
    for task in cfg.tasks:
        for name in cfg.policies:
            entries[(name, task)] = policy_entry(cfg, name, ckpts_by_task[task])
    suite = BenchmarkConfig(
        policies=list(cfg.policies),
        tasks=list(cfg.tasks),
        entries=entries,
        perturbations=perturbations if perturbations is not None else [None],
        n_episodes=cfg.episodes,
        seed=cfg.seed_eval,
        batched=batched,
    )
    return run_benchmark(suite)
