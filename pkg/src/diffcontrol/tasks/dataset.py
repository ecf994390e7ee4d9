"""Demonstration sets on disk and open-loop replay."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..normalize import Normalizer
from ..records import EpisodeLog, ReplanRecord
from .demos import Demonstration
from .envs import reset_from_observation, step_env, task_info
from .success import check_success

DATASET_SCHEMA = "diffcontrol.dataset/1"


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def save_demos(demos, path, extra=None):
    """Write a manifest plus one ``demo_XXXX.json`` per demonstration."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    task = demos[0].task
    info = task_info(task)
    acts = np.concatenate([d.actions for d in demos])
    obs = np.concatenate([d.observations for d in demos])
    manifest = {
        "schema": DATASET_SCHEMA,
        "task": task,
        "task_id": info.task_id,
        "count": len(demos),
        "action_dim": int(acts.shape[1]),
        "obs_dim": int(obs.shape[1]),
        "lengths": [len(d) for d in demos],
        "normalization": {
            "actions": Normalizer.fit(acts).to_dict(),
            "observations": Normalizer.fit(obs).to_dict(),
        },
        **(extra or {}),
    }
    (path / "manifest.json").write_text(_dump(manifest))
    for i, d in enumerate(demos):
        rec = {
            "schema": DATASET_SCHEMA,
            "index": i,
            "task": d.task,
            "task_id": d.task_id,
            "length": len(d),
            "actions": d.actions.reshape(-1).tolist(),
            "observations": d.observations.reshape(-1).tolist(),
        }
        (path / f"demo_{i:04d}.json").write_text(_dump(rec))
    return manifest


def load_demos(path):
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("schema") != DATASET_SCHEMA:
        raise ValueError(f"unsupported dataset schema {manifest.get('schema')!r}")
    D, O = manifest["action_dim"], manifest["obs_dim"]
    demos = []
    for i in range(manifest["count"]):
        rec = json.loads((path / f"demo_{i:04d}.json").read_text())
        demos.append(
            Demonstration(
                rec["task"],
                np.array(rec["actions"], dtype=np.float64).reshape(-1, D),
                np.array(rec["observations"], dtype=np.float64).reshape(-1, O),
                rec["task_id"],
            )
        )
    return demos, manifest


def replay_demo(demo: Demonstration, max_steps=None) -> EpisodeLog:
    """Execute a demonstration's actions open loop and log the outcome."""
    state = reset_from_observation(demo.task, demo.observations[0])
    n = len(demo) if max_steps is None else min(max_steps, len(demo))
    log = EpisodeLog(demo.task, "replay", 0, W=n, h=n)
    log.positions.append(state.agent.copy())
    obs0 = demo.observations[0]
    for a in demo.actions[:n]:
        state, _ = step_env(state, a)
        log.positions.append(state.agent.copy())
    log.records.append(ReplanRecord(0, 0, obs0, True, demo.actions[:n], demo.actions[:n], termination="max_steps"))
    log.final = {"contact_count": state.contact_count, "captured": state.captured, "t": state.t}
    log.termination = "max_steps"
    log.success = check_success(demo.task, log)
    return log
