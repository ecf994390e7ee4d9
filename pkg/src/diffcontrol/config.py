"""Run configuration: defaults, optional YAML/JSON file, command-line overrides.

Precedence is flag > file > default. The resolved configuration is written
as ``run_config.json`` into every output directory, together with the
package version, so each artifact can be traced back to its settings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import InvalidConfigError
from .tasks import TASKS, OcclusionPlan

__all__ = ["RunConfig", "load_config", "write_resolved", "tool_version", "POLICIES"]

POLICIES = ("stateless_diffusion", "diff_control", "bc", "bc_recurrent")


def tool_version():
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


@dataclass
class RunConfig:
    tasks: list = field(default_factory=lambda: ["cosine", "drum", "scoop"])
    policies: list = field(default_factory=lambda: list(POLICIES))
    W: int = 48
    h: int = 12
    # diffusion schedule
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2
    # denoiser
    channels: list = field(default_factory=lambda: [16, 32, 64])
    cond_dim: int = 128
    kernel_size: int = 5
    n_groups: int = 8
    prior_hidden: int = 32
    # training
    n_demos: int = 200
    epochs_base: int = 40
    epochs_transition: int = 80
    epochs_bc: int = 40
    batches_per_epoch: int = 25
    batch_size: int = 64
    lr: float = 1e-3
    obs_dropout: float = 0.15  # transition stage only: chance of replacing the observation with the null token
    blank_prior: bool = True
    unfreeze_base: bool = False
    # rollout
    bootstrap: str = "blank"
    episodes: int = 50
    occlude: Optional[str] = None
    # seeds
    seed_data: int = 0
    seed_train: int = 0
    seed_eval: int = 0
    # paths
    data_dir: str = "runs/data"
    ckpt_dir: str = "runs/ckpt"
    report_dir: str = "runs/report"

    def validate(self):
        for t in self.tasks:
            if t not in TASKS:
                raise InvalidConfigError(f"unknown task {t!r}")
        for p in self.policies:
            if p not in POLICIES:
                raise InvalidConfigError(f"unknown policy {p!r}")
        if not 1 <= self.h <= self.W:
            raise InvalidConfigError(f"need 1 <= h <= W, got h={self.h}, W={self.W}")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise InvalidConfigError("need 0 < beta_start <= beta_end < 1")
        if self.episodes < 1:
            raise InvalidConfigError("episodes must be positive")
        if self.n_demos < 1:
            raise InvalidConfigError("n_demos must be positive")
        if self.bootstrap not in ("base", "blank"):
            raise InvalidConfigError("bootstrap must be 'base' or 'blank'")
        if self.occlude is not None:
            try:
                OcclusionPlan.parse(self.occlude)
            except ValueError as e:
                raise InvalidConfigError(f"bad occlusion {self.occlude!r}: {e}") from None
        return self

    @property
    def occlusion(self) -> Optional[OcclusionPlan]:
        return None if self.occlude is None else OcclusionPlan.parse(self.occlude)

    @property
    def schedule(self):
        return (self.T, self.beta_start, self.beta_end)

    def to_dict(self):
        return asdict(self)

    def merged(self, overrides: dict):
        """A copy with every non-``None`` entry of ``overrides`` applied."""
        known = {f.name for f in fields(self)}
        bad = set(overrides) - known
        if bad:
            raise InvalidConfigError(f"unknown config keys: {sorted(bad)}")
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**d)


def read_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InvalidConfigError(f"cannot parse {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path} must hold a mapping at top level")
    return data


def load_config(path=None, overrides=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.merged(read_file(path))
    if overrides:
        cfg = cfg.merged(overrides)
    return cfg.validate()


def write_resolved(cfg: RunConfig, outdir, command=None):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"tool": "diffcontrol", "version": tool_version(), "command": command, "config": cfg.to_dict()}
    (out / "run_config.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return out / "run_config.json"
