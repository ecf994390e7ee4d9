"""Evaluation: execution gaps, sampled-window mode statistics and benchmark reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from .exceptions import EmptyCellError, MissingCheckpointError, TooFewReplansError
from .policy import PolicyParams, PolicySpec, PolicyState, plan_batch, rollout, rollout_batch
from .tasks import OcclusionPlan, task_info

__all__ = [
    "GapStats",
    "ModeStats",
    "execution_gap",
    "two_means",
    "mode_spread",
    "BenchmarkConfig",
    "CellResult",
    "Report",
    "aggregate_cell",
    "run_benchmark",
]

SEPARATION = 4.0  # splitting one Gaussian in two already gives D ≈ 2.65
BIMODAL_MINORITY = 0.2


@dataclass
class GapStats:
    gaps: np.ndarray
    mean: float
    max: float
    count: int


def execution_gap(log) -> GapStats:
    """Distance between each new window's first action and the previous window's continuation."""
    if log.replan_count < 2:
        raise TooFewReplansError(f"need at least 2 replans, log has {log.replan_count}")
    h = log.h
    if h >= log.W:
        raise TooFewReplansError("windows do not overlap (h >= W); the gap is undefined")
    w = log.windows
    gaps = np.array([np.linalg.norm(w[k + 1][0] - w[k][h]) for k in range(len(w) - 1)])
    return GapStats(gaps, float(gaps.mean()), float(gaps.max()), len(gaps))


@dataclass
class ModeStats:
    n_samples: int
    spread: np.ndarray
    split: tuple
    bimodal: bool
    labels: np.ndarray = field(repr=False)
    centroids: np.ndarray = field(repr=False)
    separation: float = 0.0
    samples: Optional[np.ndarray] = field(default=None, repr=False)


def two_means(X, iters=100):
    """Deterministic 2-means on rows of ``X``.

    Seeds with the row farthest from the mean and the row farthest from that
    one. Returns labels (0 for the larger cluster), centroids and Ashman's D
    along the centroid axis; D is 0 when the rows cannot be split.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    a = X[np.argmax(((X - X.mean(0)) ** 2).sum(1))]
    b = X[np.argmax(((X - a) ** 2).sum(1))]
    C = np.stack([a, b])
    if np.allclose(a, b):
        return np.zeros(len(X), dtype=int), C, 0.0
    for _ in range(iters):
        lab = np.argmin(((X[:, None, :] - C[None]) ** 2).sum(-1), axis=1)
        newC = np.stack([X[lab == j].mean(0) if np.any(lab == j) else C[j] for j in range(2)])
        if np.allclose(newC, C):
            break
        C = newC
    if np.sum(lab == 1) > np.sum(lab == 0):
        lab, C = 1 - lab, C[::-1]
    dist = np.linalg.norm(C[1] - C[0])
    if dist == 0 or np.all(lab == 0):
        return np.zeros(len(X), dtype=int), C, 0.0
    # total variance is used instead of a projection on the centroid axis: with few
    # samples in many dimensions that axis is fitted to the noise and inflates D
    v0 = ((X[lab == 0] - C[0]) ** 2).sum(1).mean()
    v1 = ((X[lab == 1] - C[1]) ** 2).sum(1).mean()
    pooled = np.sqrt(v0 + v1)
    sep = np.inf if pooled == 0 else float(np.sqrt(2) * dist / pooled)
    return lab, C, sep


def mode_stats(samples) -> ModeStats:
    S = np.asarray(samples, dtype=np.float64)
    spread = np.sqrt(S.var(axis=0).sum(axis=-1))
    lab, C, sep = two_means(S)
    if sep < SEPARATION:
        lab = np.zeros(len(S), dtype=int)
    minority = float(np.mean(lab == 1))
    return ModeStats(
        n_samples=len(S),
        spread=spread,
        split=(1.0 - minority, minority),
        bimodal=minority >= BIMODAL_MINORITY,
        labels=lab,
        centroids=C,
        separation=float(sep),
        samples=S,
    )


def mode_spread(spec: PolicySpec, params: PolicyParams, obs, task_id, prior=None, n=100, rng=0) -> ModeStats:
    """Sample ``n`` windows under fixed conditioning, one seed each, and cluster them.

    Two clusters count only if they are well separated (Ashman's D of at
    least ``SEPARATION``); otherwise every sample is put in one cluster.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    seeds = rng.choice(2**31, size=n, replace=False)
    states = [PolicyState(prior_window=None if prior is None else np.asarray(prior, float)) for _ in range(n)]
    obs = np.broadcast_to(np.asarray(obs, dtype=np.float64).reshape(1, -1), (n, np.size(obs)))
    wins, _ = plan_batch(spec, params, obs, task_id, states, [np.random.default_rng(s) for s in seeds])
    return mode_stats(wins)


# --- benchmark -------------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    """Which (policy, task, perturbation) cells to run.

    ``entries`` maps ``(policy_name, task)`` to ``(PolicySpec, PolicyParams)``.
    """

    policies: list
    tasks: list
    entries: dict
    perturbations: list = field(default_factory=lambda: [None])
    n_episodes: int = 50
    seed: int = 0
    batched: bool = True
    max_steps: dict = field(default_factory=dict)


@dataclass
class CellResult:
    policy: str
    task: str
    perturbation: str
    n: int
    successes: int
    success_rate: float
    ci_low: float
    ci_high: float
    mean_steps: float
    mean_gap: float
    gaps: list
    n_aborted: int = 0
    partial: bool = False
    logs: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "policy": self.policy,
            "task": self.task,
            "perturbation": self.perturbation,
            "n": self.n,
            "successes": self.successes,
            "success_rate": self.success_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "mean_steps": self.mean_steps,
            "mean_gap": self.mean_gap,
            "gaps": [float(g) for g in self.gaps],
            "n_aborted": self.n_aborted,
            "partial": self.partial,
        }


def aggregate_cell(policy, task, perturbation, logs) -> CellResult:
    """Fold raw episode logs into one report cell."""
    if not logs:
        raise EmptyCellError(f"cell ({policy}, {task}, {perturbation}) has no episodes")
    n = len(logs)
    k = sum(bool(log.success) for log in logs)
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    gaps = []
    for log in logs:
        if log.replan_count >= 2 and log.h < log.W:
            gaps.extend(execution_gap(log).gaps.tolist())
    aborted = sum(bool(log.aborted) for log in logs)
    return CellResult(
        policy=policy,
        task=task,
        perturbation=perturbation,
        n=n,
        successes=k,
        success_rate=k / n,
        ci_low=float(ci.low),
        ci_high=float(ci.high),
        mean_steps=float(np.mean([log.n_steps for log in logs])),
        mean_gap=float(np.mean(gaps)) if gaps else float("nan"),
        gaps=gaps,
        n_aborted=aborted,
        partial=aborted > 0,
        logs=list(logs),
    )


@dataclass
class Report:
    cells: list

    def cell(self, policy, task, perturbation="none") -> CellResult:
        for c in self.cells:
            if (c.policy, c.task, c.perturbation) == (policy, task, perturbation):
                return c
        raise KeyError((policy, task, perturbation))

    def save(self, outdir):
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.jsonl", "w") as f:
            for c in self.cells:
                f.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
        with open(out / "report.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["policy", "task", "perturbation", "success_rate", "ci_low", "ci_high", "mean_gap", "mean_steps", "n"])
            for c in self.cells:
                w.writerow([c.policy, c.task, c.perturbation, c.success_rate, c.ci_low, c.ci_high, c.mean_gap, c.mean_steps, c.n])
        return out

    def save_logs(self, outdir):
        out = Path(outdir) / "episodes"
        out.mkdir(parents=True, exist_ok=True)
        for c in self.cells:
            name = f"{c.policy}__{c.task}__{c.perturbation.replace(':', '-')}.jsonl"
            with open(out / name, "w") as f:
                for log in c.logs:
                    f.write("\n".join(log.to_lines()) + "\n")
        return out


def pert_name(p: Optional[OcclusionPlan]):
    return "none" if p is None else f"occlude:{p}"


def run_benchmark(suite: BenchmarkConfig) -> Report:
    if suite.n_episodes < 1:
        raise EmptyCellError("n_episodes must be positive")
    for name in suite.policies:
        for task in suite.tasks:
            if (name, task) not in suite.entries:
                raise MissingCheckpointError(f"no checkpoints for policy {name!r} on task {task!r}")
            spec, params = suite.entries[(name, task)]
            params.require(spec)
    cells = []
    for name in suite.policies:
        for task in suite.tasks:
            spec, params = suite.entries[(name, task)]
            max_steps = suite.max_steps.get(task, task_info(task).max_steps)
            for pert in suite.perturbations:
                seeds = [suite.seed + i for i in range(suite.n_episodes)]
                if suite.batched:
                    logs = rollout_batch(task, spec, params, seeds, max_steps=max_steps, perturbation=pert)
                else:
                    logs = [rollout(task, spec, params, max_steps, s, pert) for s in seeds]
                cells.append(aggregate_cell(name, task, pert_name(pert), logs))
    return Report(cells)


def plot_samples(samples, path, title="", reference=None):
    """Median and 10-90 percentile band of sampled windows, plus every sample."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    S = np.asarray(samples)[..., 0]
    fig, ax = plt.subplots(figsize=(6, 3))
    k = np.arange(S.shape[1])
    for s in S:
        ax.plot(k, s, color="0.7", lw=0.5)
    lo, med, hi = np.percentile(S, [10, 50, 90], axis=0)
    ax.fill_between(k, lo, hi, alpha=0.3)
    ax.plot(k, med, lw=1.5, label="median")
    if reference is not None:
        ax.plot(k, reference, "k--", lw=1, label="reference")
    ax.set_title(title)
    ax.set_xlabel("step in window")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_gaps(report: Report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = [c for c in report.cells if c.gaps]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.boxplot([c.gaps for c in cells], showfliers=False)
    ax.set_xticks(range(1, len(cells) + 1))
    ax.set_xticklabels([f"{c.policy}\n{c.task}\n{c.perturbation}" for c in cells], fontsize=6)
    ax.set_ylabel("execution gap (normalized units)")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
