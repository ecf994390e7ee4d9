"""Conditional 1D temporal U-net denoiser and its zero-connected transition branch.

The base network predicts the noise in a corrupted action window given the
diffusion step, an observation vector and a task id. The transition branch
is a trainable copy of the base stem, encoder and middle blocks. It reads
the previous action window through a small prior encoder and feeds the base
decoder through 1x1 connectors that start at exactly zero.

Tensors inside the networks are laid out ``(batch, channels, length)``;
the public helpers take and return numpy windows ``(W, D)`` or ``(n, W, D)``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import InvalidConfigError, ShapeMismatchError, UnknownTaskError

__all__ = [
    "DenoiserConfig",
    "ConditionEmbedding",
    "ConditionalUnet1D",
    "TransitionBranch",
    "init_base",
    "init_transition",
    "embed_condition",
    "denoise_base",
    "denoise_controlled",
    "freeze",
    "is_frozen",
    "encoder_names",
    "torch_seed",
]


@dataclass
class DenoiserConfig:
    W: int = 48
    D: int = 1
    obs_dim: int = 1
    n_tasks: int = 3
    cond_dim: int = 128
    levels: int = 3
    channels: tuple = (64, 128, 256)
    kernel_size: int = 5
    n_groups: int = 8
    prior_hidden: int = 32
    dtype: str = field(default="float32")

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.validate()

    def validate(self):
        if self.levels < 2:
            raise InvalidConfigError(f"levels must be >= 2, got {self.levels}")
        if len(self.channels) != self.levels:
            raise InvalidConfigError(
                f"{self.levels} levels need {self.levels} channel counts, got {self.channels}"
            )
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise InvalidConfigError(f"channels must be strictly increasing, got {self.channels}")
        stride = 2 ** (self.levels - 1)
        if self.W % stride:
            raise InvalidConfigError(f"W={self.W} is not divisible by 2^(levels-1)={stride}")
        if min(self.W, self.D, self.obs_dim, self.n_tasks) < 1:
            raise InvalidConfigError("W, D, obs_dim and n_tasks must be positive")
        if any(c % self.n_groups for c in self.channels):
            raise InvalidConfigError(f"channels must be multiples of n_groups={self.n_groups}")
        if self.cond_dim < 8 or self.cond_dim % 4:
            raise InvalidConfigError("cond_dim must be a multiple of 4 and at least 8")
        if self.kernel_size % 2 == 0:
            raise InvalidConfigError("kernel_size must be odd")

    @property
    def split(self):
        """Widths of the (step, observation, task) blocks of the fused embedding."""
        t = self.cond_dim // 2
        o = self.cond_dim // 4
        return t, o, self.cond_dim - t - o

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "channels": tuple(d["channels"])})


def torch_seed(rng):
    """Turn an int or numpy ``Generator`` into a deterministic torch seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def sinusoidal(tau, dim):
    """Interleaved ``[sin, cos]`` position encoding of the diffusion step."""
    tau = tau.to(torch.get_default_dtype()) if not tau.is_floating_point() else tau
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=tau.dtype) / half)
    ang = tau[:, None] * freqs[None, :]
    return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(tau.shape[0], 2 * half)


class ConditionEmbedding(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        t, o, c = cfg.split
        self.step_dim = t
        self.n_tasks = cfg.n_tasks
        self.obs_proj = nn.Linear(cfg.obs_dim, o)
        self.task_table = nn.Embedding(cfg.n_tasks, c)

    def forward(self, tau, obs, task_id):
        if torch.any(task_id < 0) or torch.any(task_id >= self.n_tasks):
            raise UnknownTaskError(f"task id outside [0, {self.n_tasks})")
        step = sinusoidal(tau.to(obs.dtype), self.step_dim)
        return torch.cat([step, self.obs_proj(obs), self.task_table(task_id)], dim=-1)


class Conv1dBlock(nn.Sequential):
    def __init__(self, cin, cout, k, groups):
        super().__init__(nn.Conv1d(cin, cout, k, padding=k // 2), nn.GroupNorm(groups, cout), nn.Mish())


class CondResBlock(nn.Module):
    """Two conv blocks with a feature-wise scale-and-shift between them."""

    def __init__(self, cin, cout, cond_dim, k, groups):
        super().__init__()
        self.block1 = Conv1dBlock(cin, cout, k, groups)
        self.block2 = Conv1dBlock(cout, cout, k, groups)
        self.film = nn.Sequential(nn.Mish(), nn.Linear(cond_dim, 2 * cout))
        self.residual = nn.Conv1d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.block1(x)
        scale, shift = self.film(emb).unsqueeze(-1).chunk(2, dim=1)
        h = self.block2(h * (1 + scale) + shift)
        return h + self.residual(x)


class Encoder(nn.Module):
    """Stem, down path and middle blocks; the part the transition branch copies."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        ch, k, g, cd = cfg.channels, cfg.kernel_size, cfg.n_groups, cfg.cond_dim
        self.stem = nn.Conv1d(cfg.D, ch[0], k, padding=k // 2)
        self.downs = nn.ModuleList()
        cin = ch[0]
        for i, c in enumerate(ch):
            last = i == len(ch) - 1
            self.downs.append(
                nn.ModuleList(
                    [
                        CondResBlock(cin, c, cd, k, g),
                        CondResBlock(c, c, cd, k, g),
                        nn.Identity() if last else nn.Conv1d(c, c, 3, stride=2, padding=1),
                    ]
                )
            )
            cin = c
        self.mids = nn.ModuleList([CondResBlock(ch[-1], ch[-1], cd, k, g) for _ in range(2)])

    def forward(self, x, emb, stem_add=None):
        h = self.stem(x)
        if stem_add is not None:
            h = h + stem_add
        skips = []
        for i, (r1, r2, down) in enumerate(self.downs):
            h = r2(r1(h, emb), emb)
            if i < len(self.downs) - 1:
                skips.append(h)
            h = down(h)
        for m in self.mids:
            h = m(h, emb)
        return h, skips


class ConditionalUnet1D(nn.Module):
    """Noise-prediction network for one task's action windows."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.config = cfg
        ch, k, g, cd = cfg.channels, cfg.kernel_size, cfg.n_groups, cfg.cond_dim
        self.cond = ConditionEmbedding(cfg)
        self.encoder = Encoder(cfg)
        self.ups = nn.ModuleList()
        for i in range(cfg.levels - 2, -1, -1):
            self.ups.append(
                nn.ModuleList(
                    [
                        nn.ConvTranspose1d(ch[i + 1], ch[i + 1], 4, stride=2, padding=1),
                        CondResBlock(ch[i + 1] + ch[i], ch[i], cd, k, g),
                        CondResBlock(ch[i], ch[i], cd, k, g),
                    ]
                )
            )
        self.final = nn.Sequential(Conv1dBlock(ch[0], ch[0], k, g), nn.Conv1d(ch[0], cfg.D, 1))

    def decode(self, h, skips, emb):
        for up, r1, r2 in self.ups:
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = r2(r1(h, emb), emb)
        return self.final(h)

    def forward(self, x, tau, obs, task_id, control=None):
        """``x`` is ``(B, W, D)``; returns predicted noise of the same shape.

        ``control`` is an optional ``(skip_residuals, mid_residual)`` pair
        produced by a :class:`TransitionBranch`; residuals are added to the
        encoder skips and the middle output before decoding.
        """
        emb = self.cond(tau, obs, task_id)
        h, skips = self.encoder(x.transpose(1, 2), emb)
        if control is not None:
            skip_res, mid_res = control
            skips = [s + r for s, r in zip(skips, skip_res)]
            h = h + mid_res
        return self.decode(h, skips, emb).transpose(1, 2)


def _zero(module):
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class TransitionBranch(nn.Module):
    """Trainable encoder replica wired to a frozen base through zero connectors."""

    def __init__(self, base: ConditionalUnet1D, shift: int = 0):
        super().__init__()
        cfg = base.config
        if not 0 <= shift < cfg.W:
            raise InvalidConfigError(f"prior shift must lie in [0, W), got {shift}")
        self.shift = int(shift)
        ch, k = cfg.channels, cfg.kernel_size
        self.config = cfg
        self.replica = copy.deepcopy(base.encoder)
        for p in self.replica.parameters():
            p.requires_grad_(True)
        self.prior_encoder = nn.Sequential(
            nn.Conv1d(cfg.D + 1, cfg.prior_hidden, k, padding=k // 2),
            nn.Mish(),
            nn.Conv1d(cfg.prior_hidden, cfg.prior_hidden, k, padding=k // 2),
            nn.Mish(),
            nn.Conv1d(cfg.prior_hidden, ch[0], k, padding=k // 2),
        )
        self.connectors = nn.ModuleList(
            [_zero(nn.Conv1d(c, c, 1)) for c in ch[:-1]] + [_zero(nn.Conv1d(ch[-1], ch[-1], 1))]
        )

    def forward(self, x, emb, prior, prior_mask):
        """Residuals for the base decoder.

        ``prior`` is ``(B, W, D)``; ``prior_mask`` is ``(B,)`` with 1 where a
        real previous window is supplied and 0 for a blank prior. The prior is
        first advanced by ``shift`` steps so that its entries line up with the
        window being denoised; the unknown tail is zero-filled and masked.
        """
        B, W, _ = prior.shape
        m = prior_mask.to(prior.dtype)[:, None, None].expand(-1, W, 1)
        if self.shift:
            prior = torch.cat([prior[:, self.shift :], prior.new_zeros(B, self.shift, prior.shape[2])], dim=1)
            tail = prior.new_ones(1, W, 1)
            tail[:, W - self.shift :] = 0
            m = m * tail
        p = torch.cat([prior * m, m], dim=-1).transpose(1, 2)
        h, skips = self.replica(x.transpose(1, 2), emb, stem_add=self.prior_encoder(p))
        skip_res = [conn(s) for conn, s in zip(self.connectors[:-1], skips)]
        return skip_res, self.connectors[-1](h)


def controlled_forward(base, trans, x, tau, obs, task_id, prior, prior_mask):
    emb = base.cond(tau, obs, task_id)
    h, skips = base.encoder(x.transpose(1, 2), emb)
    skip_res, mid_res = trans(x, emb, prior, prior_mask)
    skips = [s + r for s, r in zip(skips, skip_res)]
    return base.decode(h + mid_res, skips, emb).transpose(1, 2)


def freeze(module: nn.Module, frozen: bool = True) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(not frozen)
    module.frozen = frozen
    return module


def is_frozen(module: nn.Module) -> bool:
    return bool(getattr(module, "frozen", False))


def encoder_names(base: ConditionalUnet1D):
    """Parameter names of the base's stem, encoder and middle blocks, prefix stripped."""
    return [n[len("encoder."):] for n, _ in base.named_parameters() if n.startswith("encoder.")]


def init_base(config: DenoiserConfig, rng=0) -> ConditionalUnet1D:
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(rng))
        net = ConditionalUnet1D(config)
    net = net.to(getattr(torch, config.dtype))
    net.frozen = False
    return net


def init_transition(base: ConditionalUnet1D, config: DenoiserConfig | None = None, rng=0, shift=0):
    if config is not None and config != base.config:
        raise InvalidConfigError("transition config does not match the base network")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(rng))
        trans = TransitionBranch(base, shift)
    trans = trans.to(next(base.parameters()).dtype)
    freeze(base)
    trans.frozen = False
    return trans


# numpy-facing helpers ---------------------------------------------------------


def _as_batch(net, a_tau, tau, obs, task_id):
    cfg = net.config
    dt = next(net.parameters()).dtype
    a = np.asarray(a_tau, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.shape[1:] != (cfg.W, cfg.D):
        raise ShapeMismatchError(f"window shape {a.shape[1:]} != ({cfg.W}, {cfg.D})")
    B = a.shape[0]
    o = np.asarray(obs, dtype=np.float64)
    o = o.reshape(-1, o.shape[-1]) if o.ndim else o.reshape(1, 1)
    if o.shape[1] != cfg.obs_dim or o.shape[0] not in (1, B):
        raise ShapeMismatchError(f"observation must have {cfg.obs_dim} entries per window")
    o = np.broadcast_to(o, (B, cfg.obs_dim))
    tid = np.broadcast_to(np.asarray(task_id, dtype=np.int64).reshape(-1), (B,))
    steps = np.broadcast_to(np.asarray(tau, dtype=np.int64).reshape(-1), (B,))
    return (
        single,
        torch.as_tensor(a, dtype=dt),
        torch.as_tensor(steps.copy()),
        torch.as_tensor(o.copy(), dtype=dt),
        torch.as_tensor(tid.copy()),
    )


def embed_condition(net: ConditionalUnet1D, tau, obs, task_id) -> np.ndarray:
    """Fused embedding ``[sinusoid(tau) | obs_proj(obs) | task_table[task_id]]``."""
    dt = next(net.parameters()).dtype
    o = torch.as_tensor(np.asarray(obs, dtype=np.float64).reshape(1, -1), dtype=dt)
    if o.shape[1] != net.config.obs_dim:
        raise ShapeMismatchError(f"observation must have {net.config.obs_dim} entries")
    with torch.no_grad():
        e = net.cond(torch.tensor([int(tau)]), o, torch.tensor([int(task_id)]))
    return e[0].double().numpy()


def denoise_base(net: ConditionalUnet1D, a_tau, tau, obs, task_id) -> np.ndarray:
    single, a, t, o, k = _as_batch(net, a_tau, tau, obs, task_id)
    with torch.no_grad():
        out = net(a, t, o, k).double().numpy()
    return out[0] if single else out


def denoise_controlled(net, trans, a_tau, tau, obs, task_id, prior, prior_valid=True) -> np.ndarray:
    single, a, t, o, k = _as_batch(net, a_tau, tau, obs, task_id)
    p = np.asarray(prior, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    if p.shape[1:] != a.shape[1:] or p.shape[0] not in (1, a.shape[0]):
        raise ShapeMismatchError(f"prior shape {p.shape} does not match window shape {tuple(a.shape)}")
    p = torch.as_tensor(np.broadcast_to(p, a.shape).copy(), dtype=a.dtype)
    mask = torch.as_tensor(np.broadcast_to(np.asarray(prior_valid, dtype=np.float64).reshape(-1), (a.shape[0],)).copy())
    with torch.no_grad():
        out = controlled_forward(net, trans, a, t, o, k, p, mask).double().numpy()
    return out[0] if single else out
