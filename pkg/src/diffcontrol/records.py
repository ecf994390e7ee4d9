"""Episode logs and their line-delimited JSON form.

A log file holds one ``header`` line, one ``replan`` line per generated
window and one ``summary`` line. Windows are stored in normalized action
units (the policy's native space); executed actions and agent positions
are in environment units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

LOG_SCHEMA = "diffcontrol.episode/1"


@dataclass
class ReplanRecord:
    index: int
    seed: int
    observation: np.ndarray
    valid: bool
    window: np.ndarray
    executed: np.ndarray
    bootstrap: bool = False
    termination: Optional[str] = None

    def to_dict(self):
        return {
            "type": "replan",
            "replan": self.index,
            "seed": self.seed,
            "observation": np.asarray(self.observation).tolist(),
            "valid": bool(self.valid),
            "window": np.asarray(self.window).tolist(),
            "executed": np.asarray(self.executed).tolist(),
            "bootstrap": bool(self.bootstrap),
            "termination": self.termination,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=d["replan"],
            seed=d["seed"],
            observation=np.array(d["observation"], dtype=float),
            valid=d["valid"],
            window=np.array(d["window"], dtype=float),
            executed=np.array(d["executed"], dtype=float).reshape(-1, len(d["window"][0])),
            bootstrap=d.get("bootstrap", False),
            termination=d.get("termination"),
        )


@dataclass
class EpisodeLog:
    task: str
    policy: str
    seed: int
    W: int
    h: int
    records: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    termination: Optional[str] = None
    aborted: bool = False
    success: Optional[bool] = None

    @property
    def replan_count(self):
        return len(self.records)

    @property
    def windows(self):
        return [r.window for r in self.records]

    @property
    def executed(self):
        parts = [r.executed for r in self.records if len(r.executed)]
        if not parts:
            return np.zeros((0, 1))
        return np.concatenate(parts, axis=0)

    @property
    def n_steps(self):
        return int(sum(len(r.executed) for r in self.records))

    def to_lines(self):
        header = {
            "type": "header",
            "schema": LOG_SCHEMA,
            "task": self.task,
            "policy": self.policy,
            "seed": self.seed,
            "W": self.W,
            "h": self.h,
        }
        summary = {
            "type": "summary",
            "positions": np.asarray(self.positions).tolist(),
            "final": self.final,
            "termination": self.termination,
            "aborted": self.aborted,
            "success": self.success,
        }
        return [json.dumps(x, sort_keys=True) for x in [header, *(r.to_dict() for r in self.records), summary]]

    def save(self, path):
        Path(path).write_text("\n".join(self.to_lines()) + "\n")

    @classmethod
    def from_lines(cls, lines):
        rows = [json.loads(line) for line in lines if line.strip()]
        head, summ = rows[0], rows[-1]
        if head.get("schema") != LOG_SCHEMA:
            raise ValueError(f"unsupported episode log schema {head.get('schema')!r}")
        log = cls(head["task"], head["policy"], head["seed"], head["W"], head["h"])
        log.records = [ReplanRecord.from_dict(r) for r in rows[1:-1]]
        log.positions = [np.array(p, dtype=float) for p in summ["positions"]]
        log.final = summ["final"]
        log.termination = summ["termination"]
        log.aborted = summ["aborted"]
        log.success = summ["success"]
        return log

    @classmethod
    def load(cls, path):
        return cls.from_lines(Path(path).read_text().splitlines())
