"""Stateful and stateless policies and the receding-horizon rollout loop.

Each replan samples a window of ``W`` actions, executes its first ``h`` and
stores the whole window as the policy state. A ``diff_control`` policy
conditions its next window on that stored window; the other kinds ignore it.
The belief normalizer of the recursion has no runtime counterpart: the
sampler draws from the normalized distribution directly.

Windows are kept in normalized action units; executed actions are mapped
back to environment units with the checkpoint's normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import tasks as T
from .baselines import plan_bc_batch
from .diffusion import sample_loop
from .exceptions import EnvironmentFault, InvalidConfigError, MissingCheckpointError, ShapeMismatchError
from .nets import denoise_base, denoise_controlled
from .normalize import Normalizer
from .records import EpisodeLog, ReplanRecord
from .tasks.demos import drum_profile, scoop_expert_action

KINDS = ("stateless_diffusion", "diff_control", "bc", "bc_recurrent", "expert")
BOOTSTRAPS = ("base", "blank")

__all__ = [
    "PolicySpec",
    "PolicyParams",
    "PolicyState",
    "plan",
    "plan_batch",
    "rollout",
    "rollout_batch",
    "resume_rollout",
    "replan_seed",
    "EpisodeLog",
]


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    W: int = 48
    h: int = 12
    bootstrap: str = "base"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown policy kind {self.kind!r}")
        if not 1 <= self.h <= self.W:
            raise InvalidConfigError(f"need 1 <= h <= W, got h={self.h}, W={self.W}")
        if self.bootstrap not in BOOTSTRAPS:
            raise InvalidConfigError(f"bootstrap must be one of {BOOTSTRAPS}")


@dataclass
class PolicyParams:
    """Checkpoints a policy kind needs; unused slots stay ``None``."""

    base: object = None
    transition: object = None
    bc: object = None
    action_norm: Optional[Normalizer] = None

    def norm(self):
        for c in (self.base, self.bc):
            if c is not None:
                return c.action_norm
        if self.action_norm is None:
            raise MissingCheckpointError("no checkpoint or normalizer supplied")
        return self.action_norm

    def require(self, spec: PolicySpec):
        need = {
            "stateless_diffusion": ["base"],
            "diff_control": ["base", "transition"],
            "bc": ["bc"],
            "bc_recurrent": ["bc"],
            "expert": [],
        }[spec.kind]
        for name in need:
            if getattr(self, name) is None:
                raise MissingCheckpointError(f"{spec.kind} policy needs a {name} checkpoint")


@dataclass
class PolicyState:
    prior_window: Optional[np.ndarray] = None
    replan_count: int = 0
    steps_since_replan: int = 0
    hidden: object = None


def replan_seed(episode_seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(episode_seed), int(k)]).generate_state(1)[0])


def env_rng(episode_seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(episode_seed), 2**32 - 1]))


def _expert_window(task, sensor, t, W, norm, h=12):
    if task == "drum":
        prof = drum_profile(8, rest_after=W + t + h)
        return norm.transform(prof[t + 1 : t + 1 + W, None])
    if task == "scoop":
        s = T.reset_from_observation("scoop", sensor)
        out = []
        for _ in range(W):
            a = scoop_expert_action(s)
            out.append(a)
            s, _ = T.step_env(s, a)
        return norm.transform(np.array(out))
    raise InvalidConfigError(f"no scripted expert for task {task!r}")


def plan_batch(spec: PolicySpec, params: PolicyParams, obs, task_id, states: Sequence[PolicyState], rngs, task=None,
               valid=None):
    """Plan one window for each of several independent episodes.

    ``obs`` holds raw sensor vectors, one row per episode. Rows flagged
    invalid in ``valid`` reach the networks as the all-zero normalized
    vector, the same null observation used by observation dropout during
    training. Returns the normalized windows ``(n, W, D)`` and whether each
    plan was a bootstrap.
    """
    params.require(spec)
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    n = len(states)
    if obs.shape[0] != n or len(rngs) != n:
        raise ShapeMismatchError("need one observation and one generator per state")
    boot = np.array([s.prior_window is None for s in states])
    if spec.kind == "expert":
        norm = params.norm()
        wins = [
            _expert_window(task, o, s.replan_count * spec.h, spec.W, norm, spec.h) for o, s in zip(obs, states)
        ]
        return np.stack(wins), boot
    if spec.kind in ("bc", "bc_recurrent"):
        ck = params.bc
        hidden = None
        if spec.kind == "bc_recurrent":
            import torch

            hidden = torch.cat([s.hidden if s.hidden is not None else ck.module.initial_hidden(1) for s in states])
        wins, hidden = plan_bc_batch(ck, obs, task_id, hidden, valid=valid)
        if spec.kind == "bc_recurrent":
            for i, s in enumerate(states):
                s.hidden = hidden[i : i + 1]
        return wins, boot

    base = params.base
    cfg = base.denoiser_config
    if obs.shape[1] != cfg.obs_dim:
        raise ShapeMismatchError(f"observation must have {cfg.obs_dim} entries, got {obs.shape[1]}")
    if spec.W != cfg.W:
        raise ShapeMismatchError(f"policy W={spec.W} but checkpoint W={cfg.W}")
    sched = base.noise_schedule()
    o = base.obs_norm.transform(obs)
    if valid is not None:
        o = o * np.asarray(valid, dtype=np.float64).reshape(-1, 1)
    out = np.empty((n, cfg.W, cfg.D))
    controlled = spec.kind == "diff_control"
    if controlled and spec.bootstrap == "blank":
        groups = [("ctrl", np.arange(n))]
    elif controlled:
        groups = [("base", np.flatnonzero(boot)), ("ctrl", np.flatnonzero(~boot))]
    else:
        groups = [("base", np.arange(n))]
    for mode, idx in groups:
        if len(idx) == 0:
            continue
        oi = o[idx]
        if mode == "base":
            den = lambda x, tau: denoise_base(base.module, x, tau, oi, task_id)  # noqa: E731
        else:
            prior = np.stack(
                [states[i].prior_window if states[i].prior_window is not None else np.zeros((cfg.W, cfg.D)) for i in idx]
            )
            valid = np.array([0.0 if states[i].prior_window is None else 1.0 for i in idx])
            trans = params.transition.module
            den = lambda x, tau: denoise_controlled(base.module, trans, x, tau, oi, task_id, prior, valid)  # noqa: E731
        out[idx] = sample_loop(den, cfg.W, cfg.D, sched, [rngs[i] for i in idx])
    return out, boot


def plan(spec: PolicySpec, params: PolicyParams, obs, task_id, state: PolicyState, rng, task=None) -> np.ndarray:
    """Plan a single window (normalized units) from one observation and policy state."""
    wins, _ = plan_batch(spec, params, np.asarray(obs)[None], task_id, [state], [rng], task=task)
    return wins[0]


@dataclass
class _Episode:
    seed: int
    env: T.EnvState
    pstate: PolicyState
    log: EpisodeLog
    k: int = 0
    steps: int = 0
    done: bool = False
    obs: Optional[T.Observation] = None


def _new_episode(task, spec, seed, initial=None):
    env = initial if initial is not None else T.reset(task, env_rng(seed))
    log = EpisodeLog(task, spec.kind, int(seed), spec.W, spec.h)
    log.positions.append(env.agent.copy())
    return _Episode(int(seed), env, PolicyState(), log, obs=T.observe(env))


def _finish(ep: _Episode, reason):
    ep.done = True
    ep.log.termination = reason
    if ep.log.records:
        ep.log.records[-1].termination = reason
    ep.log.final = {
        "contact_count": int(ep.env.contact_count),
        "captured": bool(ep.env.captured),
        "t": int(ep.env.t),
    }
    ep.log.success = T.check_success(ep.log.task, ep.log)


def _run(episodes, task, spec, params, max_steps, perturbation):
    if max_steps < spec.h:
        raise InvalidConfigError(f"max_steps={max_steps} must be at least h={spec.h}")
    tid = T.task_info(task).task_id
    norm = params.norm()
    while True:
        live = [e for e in episodes if not e.done]
        if not live:
            break
        observations = []
        for e in live:
            o = e.obs
            if perturbation is not None and perturbation.covers(e.k):
                o = o.occluded()
            observations.append(o)
        seeds = [replan_seed(e.seed, e.k) for e in live]
        wins, boot = plan_batch(
            spec,
            params,
            np.stack([o.sensor for o in observations]),
            tid,
            [e.pstate for e in live],
            [np.random.default_rng(s) for s in seeds],
            task=task,
            valid=np.array([o.valid for o in observations]),
        )
        for e, o, s, w, b in zip(live, observations, seeds, wins, boot):
            actions = norm.inverse_transform(w)
            executed = []
            reason = None
            e.pstate.steps_since_replan = 0
            for a in actions[: spec.h]:
                if e.steps >= max_steps:
                    break
                try:
                    e.env, e.obs = T.step_env(e.env, a)
                except EnvironmentFault as err:
                    reason = f"aborted: {err}"
                    e.log.aborted = True
                    break
                executed.append(a)
                e.log.positions.append(e.env.agent.copy())
                e.steps += 1
                e.pstate.steps_since_replan = (e.pstate.steps_since_replan + 1) % spec.h
                if task == "scoop" and e.env.captured:
                    reason = "captured"
                    break
            e.log.records.append(
                ReplanRecord(e.k, s, o.sensor.copy(), o.valid, w.copy(), np.array(executed).reshape(-1, w.shape[1]), bool(b))
            )
            e.pstate.prior_window = w.copy()
            e.pstate.replan_count += 1
            e.k += 1
            if reason is None and e.steps >= max_steps:
                reason = "max_steps"
            if reason is not None:
                _finish(e, reason)
    return [e.log for e in episodes]


def rollout_batch(task, spec, params, seeds, max_steps=None, perturbation=None):
    """Run several seeded episodes in lockstep, sharing denoiser calls.

    Each episode draws from its own generators, so results depend only on its
    seed up to float32 round-off from the batch grouping; use :func:`rollout`
    when bit-exact replay matters.
    """
    max_steps = max_steps or T.task_info(task).max_steps
    episodes = [_new_episode(task, spec, s) for s in seeds]
    return _run(episodes, task, spec, params, max_steps, perturbation)


def rollout(env, spec, params, max_steps=None, rng=0, perturbation=None) -> EpisodeLog:
    """One episode. ``env`` is a task name or an initial :class:`EnvState`."""
    if isinstance(env, str):
        task, initial = env, None
    else:
        task, initial = env.task, env
    max_steps = max_steps or T.task_info(task).max_steps
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(rng.integers(2**31))
    ep = _new_episode(task, spec, seed, initial)
    return _run([ep], task, spec, params, max_steps, perturbation)[0]


def resume_rollout(log: EpisodeLog, k: int, spec, params, max_steps=None, perturbation=None, initial=None):
    """Replay an episode from replan ``k`` using only the logged prefix.

    The environment is rebuilt by re-executing the logged actions; the policy
    state is the window logged at replan ``k - 1``.
    """
    task = log.task
    max_steps = max_steps or T.task_info(task).max_steps
    ep = _new_episode(task, spec, log.seed, initial)
    ep.log.records = [replace(r) for r in log.records[:k]]
    for r in ep.log.records:
        for a in r.executed:
            ep.env, ep.obs = T.step_env(ep.env, a)
            ep.log.positions.append(ep.env.agent.copy())
            ep.steps += 1
    ep.k = k
    if k > 0:
        ep.pstate = PolicyState(prior_window=log.records[k - 1].window.copy(), replan_count=k)
    if spec.kind == "bc_recurrent":
        raise InvalidConfigError("recurrent BC state is not recoverable from a window prefix")
    return _run([ep], task, spec, params, max_steps, perturbation)[0]

