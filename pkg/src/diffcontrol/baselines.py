"""Behavior-cloning baselines: a feed-forward window regressor and a recurrent one.

Both map the current observation (plus a task embedding) straight to a full
action window. The recurrent variant also threads a GRU hidden state across
replans; it is reset at the start of every episode.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .exceptions import ShapeMismatchError
from .nets import torch_seed
from .training import Checkpoint, TrainHyper, _check_finite, _fit_norms, base_windows


@dataclass
class BCConfig:
    W: int = 48
    D: int = 1
    obs_dim: int = 1
    n_tasks: int = 3
    width: int = 256
    task_dim: int = 16
    recurrent: bool = False
    hidden: int = 128

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class BCNet(nn.Module):
    def __init__(self, cfg: BCConfig):
        super().__init__()
        self.config = cfg
        self.task_table = nn.Embedding(cfg.n_tasks, cfg.task_dim)
        inp = cfg.obs_dim + cfg.task_dim
        if cfg.recurrent:
            self.rnn = nn.GRUCell(inp, cfg.hidden)
            inp = cfg.hidden
        self.head = nn.Sequential(
            nn.Linear(inp, cfg.width),
            nn.Mish(),
            nn.Linear(cfg.width, cfg.width),
            nn.Mish(),
            nn.Linear(cfg.width, cfg.W * cfg.D),
        )

    def initial_hidden(self, batch=1):
        return torch.zeros(batch, self.config.hidden, dtype=next(self.parameters()).dtype)

    def step(self, obs, task_id, hidden=None):
        x = torch.cat([obs, self.task_table(task_id)], dim=-1)
        if self.config.recurrent:
            hidden = self.rnn(x, hidden if hidden is not None else self.initial_hidden(obs.shape[0]))
            x = hidden
        out = self.head(x).reshape(-1, self.config.W, self.config.D)
        return out, hidden


def build_bc(cfg: BCConfig, seed=0) -> BCNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = BCNet(cfg)
    net.frozen = False
    return net


def _sequences(demo, W, h):
    """Replan-time sequences (one per offset in ``[0, h)``) of (obs, target window)."""
    L = len(demo.actions)
    out = []
    for off in range(h):
        ts = list(range(off, L - W + 1, h))
        if ts:
            out.append(
                (np.stack([demo.observations[t] for t in ts]), np.stack([demo.actions[t : t + W] for t in ts]))
            )
    return out


def train_bc(demos, recurrent: bool, hyper: TrainHyper, rng, W=48, h=12) -> Checkpoint:
    """Fit a BC regressor by mean-squared error to expert windows."""
    if not demos:
        raise ValueError("no demonstrations")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    act_norm, obs_norm = _fit_norms(demos)
    d0 = demos[0]
    cfg = BCConfig(W=W, D=d0.actions.shape[1], obs_dim=d0.observations.shape[1], recurrent=recurrent)
    net = build_bc(cfg, torch_seed(rng))
    opt = torch.optim.Adam(net.parameters(), lr=hyper.lr)
    trace = []
    K_all = demos[0].task_id
    if recurrent:
        seqs = [
            (torch.as_tensor(obs_norm.transform(o), dtype=torch.float32),
             torch.as_tensor(act_norm.transform(a), dtype=torch.float32))
            for d in demos for o, a in _sequences(d, W, h)
        ]
        max_len = max(len(o) for o, _ in seqs)
    else:
        rows = [w for d in demos for w in base_windows(d, W)]
        A = torch.as_tensor(np.stack([act_norm.transform(a) for a, _, _ in rows]), dtype=torch.float32)
        O = torch.as_tensor(np.stack([obs_norm.transform(o) for _, o, _ in rows]), dtype=torch.float32)
    step = 0
    for _ in range(hyper.epochs):
        total = 0.0
        for _ in range(hyper.batches_per_epoch):
            if recurrent:
                pick = rng.integers(0, len(seqs), size=min(hyper.batch_size, len(seqs)))
                loss = _recurrent_loss(net, [seqs[i] for i in pick], K_all, max_len)
            else:
                idx = torch.as_tensor(rng.integers(0, len(A), size=hyper.batch_size))
                k = torch.full((len(idx),), K_all, dtype=torch.long)
                pred, _ = net.step(O[idx], k)
                loss = torch.mean((pred - A[idx]) ** 2)
            _check_finite(loss, "bc", step)
            opt.zero_grad()
            loss.backward()
            if hyper.grad_clip:
                torch.nn.utils.clip_grad_norm_(net.parameters(), hyper.grad_clip)
            opt.step()
            total += loss.item()
            step += 1
        trace.append(total / hyper.batches_per_epoch)
    return Checkpoint(
        kind="bc_recurrent" if recurrent else "bc",
        module=net,
        config=cfg.to_dict(),
        action_norm=act_norm,
        obs_norm=obs_norm,
        epoch=hyper.epochs,
        meta={"hyper": asdict(hyper), "task_id": int(K_all), "h": h},
        loss_trace=trace,
    )


def _recurrent_loss(net, batch, task_id, max_len):
    B = len(batch)
    lengths = torch.tensor([len(o) for o, _ in batch])
    T = int(lengths.max())
    cfg = net.config
    O = torch.zeros(B, T, cfg.obs_dim)
    A = torch.zeros(B, T, cfg.W, cfg.D)
    for i, (o, a) in enumerate(batch):
        O[i, : len(o)] = o
        A[i, : len(a)] = a
    k = torch.full((B,), task_id, dtype=torch.long)
    hidden = net.initial_hidden(B)
    sq, count = 0.0, 0
    for t in range(T):
        pred, hidden = net.step(O[:, t], k, hidden)
        m = (t < lengths).to(pred.dtype)[:, None, None]
        sq = sq + torch.sum(m * (pred - A[:, t]) ** 2)
        count = count + m.sum() * cfg.W * cfg.D
    return sq / count


def plan_bc(ckpt: Checkpoint, obs, task_id, hidden=None):
    """One deterministic forward pass; returns a normalized window and the new hidden state."""
    net = ckpt.module
    cfg = net.config
    o = np.asarray(obs, dtype=np.float64).reshape(-1)
    if o.shape[0] != cfg.obs_dim:
        raise ShapeMismatchError(f"observation must have {cfg.obs_dim} entries, got {o.shape[0]}")
    with torch.no_grad():
        x = torch.as_tensor(ckpt.obs_norm.transform(o)[None], dtype=torch.float32)
        out, hidden = net.step(x, torch.tensor([int(task_id)]), hidden)
    return out[0].double().numpy(), hidden


def plan_bc_batch(ckpt: Checkpoint, obs, task_id, hidden=None, valid=None):
    """Batched :func:`plan_bc`; rows flagged invalid are fed as the zero normalized observation."""
    net = ckpt.module
    o = np.asarray(obs, dtype=np.float64).reshape(-1, net.config.obs_dim)
    x = ckpt.obs_norm.transform(o)
    if valid is not None:
        x = x * np.asarray(valid, dtype=np.float64).reshape(-1, 1)
    with torch.no_grad():
        x = torch.as_tensor(x, dtype=torch.float32)
        out, hidden = net.step(x, torch.full((len(o),), int(task_id), dtype=torch.long), hidden)
    return out.double().numpy(), hidden


__all__ = ["BCConfig", "BCNet", "build_bc", "train_bc", "plan_bc", "plan_bc_batch"]
