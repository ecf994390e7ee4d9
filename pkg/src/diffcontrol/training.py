"""Window slicing, the two denoiser training stages and checkpoint files.

Stage one fits the base denoiser on single windows. Stage two freezes it and
fits the transition branch on (previous window, next window) pairs.

Checkpoint file layout (all integers little-endian)::

    magic     8 bytes   b"DIFFCTL\\0"
    version   uint32
    meta_len  uint64
    meta      meta_len bytes of UTF-8 JSON (sorted keys)
    payload   float32 tensors, in the order of meta["tensors"]
    digest    32 bytes, SHA-256 of everything above
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .diffusion import NoiseSchedule, make_schedule
from .exceptions import (
    CheckpointError,
    DemoTooShortError,
    DigestMismatchError,
    DivergenceError,
    KindMismatchError,
    TruncatedFileError,
    VersionMismatchError,
)
from .nets import (
    DenoiserConfig,
    TransitionBranch,
    controlled_forward,
    freeze,
    init_base,
    init_transition,
    torch_seed,
)
from .normalize import Normalizer

# Linear betas over 100 steps, ending high enough that the last step is
# close to pure noise (alpha_bar[T] ~ 2e-5).
DEFAULT_SCHEDULE = (100, 1e-4, 0.2)
MAGIC = b"DIFFCTL\0"
FORMAT_VERSION = 1
KINDS = ("base", "transition", "bc", "bc_recurrent")


@dataclass
class WindowPair:
    prior: Optional[np.ndarray]
    target: np.ndarray
    obs: np.ndarray
    task_id: int

    @property
    def blank(self):
        return self.prior is None


@dataclass
class TrainHyper:
    epochs: int = 60
    batches_per_epoch: int = 25
    batch_size: int = 64
    lr: float = 1e-3
    grad_clip: float = 1.0
    obs_dropout: float = 0.0
    blank_prior: bool = True
    unfreeze_base: bool = False

    @property
    def steps(self):
        return self.epochs * self.batches_per_epoch


def slice_windows(demo, W, h) -> list[WindowPair]:
    """Consecutive-window training pairs; the target starts ``h`` actions after the prior."""
    L = len(demo.actions)
    if L < W + h:
        raise DemoTooShortError(f"demonstration of length {L} is shorter than W+h={W + h}")
    return [
        WindowPair(
            demo.actions[t - h : t - h + W].copy(),
            demo.actions[t : t + W].copy(),
            demo.observations[t].copy(),
            demo.task_id,
        )
        for t in range(h, L - W + 1)
    ]


def blank_prior_pairs(demo, W, h) -> list[WindowPair]:
    """Episode-start windows that have no full previous window."""
    return [
        WindowPair(None, demo.actions[t : t + W].copy(), demo.observations[t].copy(), demo.task_id)
        for t in range(0, min(h, len(demo.actions) - W + 1))
    ]


def base_windows(demo, W):
    L = len(demo.actions)
    if L < W:
        raise DemoTooShortError(f"demonstration of length {L} is shorter than W={W}")
    return [(demo.actions[t : t + W], demo.observations[t], demo.task_id) for t in range(L - W + 1)]


# --- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    kind: str
    module: torch.nn.Module
    config: dict
    action_norm: Normalizer
    obs_norm: Normalizer
    schedule: dict = field(default_factory=dict)
    epoch: int = 0
    meta: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)
    base: Optional["Checkpoint"] = None
    digest: Optional[str] = None

    @property
    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig.from_dict(self.config)

    def noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return make_schedule(s["T"], s["beta_start"], s["beta_end"])

    def to_bytes(self) -> bytes:
        tensors = []
        payload = bytearray()
        for name, t in self.module.state_dict().items():
            arr = t.detach().cpu().numpy().astype("<f4", copy=False)
            tensors.append({"name": name, "shape": list(arr.shape)})
            payload += arr.tobytes(order="C")
        meta = {
            "kind": self.kind,
            "config": self.config,
            "normalization": {"actions": self.action_norm.to_dict(), "observations": self.obs_norm.to_dict()},
            "schedule": self.schedule,
            "epoch": self.epoch,
            "meta": self.meta,
            "loss_trace": self.loss_trace,
            "tensors": tensors,
        }
        mb = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(mb)) + mb + bytes(payload)
        return body + hashlib.sha256(body).digest()


def state_digest(module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().astype("<f4", copy=False).tobytes())
    return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    data = ckpt.to_bytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(data)
    ckpt.digest = data[-32:].hex()
    return ckpt.digest


def _parse(data: bytes):
    head = len(MAGIC) + 12
    if len(data) < head + 32:
        raise TruncatedFileError("checkpoint file is truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack("<IQ", data[len(MAGIC) : head])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if len(data) < head + mlen + 32:
        raise TruncatedFileError("checkpoint file is truncated")
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise DigestMismatchError("checkpoint digest does not match its content")
    try:
        meta = json.loads(data[head : head + mlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint metadata: {e}") from None
    payload = data[head + mlen : -32]
    arrays, off = {}, 0
    for t in meta["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        if off + 4 * n > len(payload):
            raise TruncatedFileError("tensor payload is truncated")
        arrays[t["name"]] = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(t["shape"])
        off += 4 * n
    if off != len(payload):
        raise CheckpointError("trailing bytes in tensor payload")
    return meta, arrays


def _build_module(kind, config, base_module=None, meta=None):
    if kind == "base":
        return init_base(DenoiserConfig.from_dict(config), 0)
    if kind == "transition":
        base = base_module if base_module is not None else init_base(DenoiserConfig.from_dict(config), 0)
        return TransitionBranch(base, int((meta or {}).get("prior_shift", 0)))
    from .baselines import BCConfig, build_bc

    return build_bc(BCConfig.from_dict(config))


def load_checkpoint(path, kind=None, base: Optional[Checkpoint] = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        from .exceptions import MissingCheckpointError

        raise MissingCheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    meta, arrays = _parse(data)
    if kind is not None and meta["kind"] != kind:
        raise KindMismatchError(f"{path} holds a {meta['kind']!r} checkpoint, expected {kind!r}")
    if meta["kind"] == "transition" and base is not None:
        want = meta["meta"].get("base_digest")
        if want and base.digest and want != base.digest:
            raise DigestMismatchError("transition checkpoint was trained on a different base")
    module = _build_module(meta["kind"], meta["config"], base.module if base is not None else None, meta["meta"])
    state = {k: torch.from_numpy(np.array(v, dtype=np.float32)) for k, v in arrays.items()}
    module.load_state_dict(state)
    module.frozen = False
    norms = meta["normalization"]
    ckpt = Checkpoint(
        kind=meta["kind"],
        module=module,
        config=meta["config"],
        action_norm=Normalizer.from_dict(norms["actions"]),
        obs_norm=Normalizer.from_dict(norms["observations"]),
        schedule=meta["schedule"],
        epoch=meta["epoch"],
        meta=meta["meta"],
        loss_trace=meta["loss_trace"],
        base=base,
        digest=data[-32:].hex(),
    )
    if ckpt.kind == "transition" and base is not None:
        freeze(base.module)
    return ckpt


def write_loss_trace(ckpt: Checkpoint, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(ckpt.loss_trace, start=1):
            w.writerow([i, repr(float(v))])


# --- training loops --------------------------------------------------------------


def _fit_norms(demos):
    acts = np.concatenate([d.actions for d in demos])
    obs = np.concatenate([d.observations for d in demos])
    return Normalizer.fit(acts), Normalizer.fit(obs)


def _noise_batch(rng, sched, n, shape, dtype):
    tau = rng.integers(1, sched.T + 1, size=n)
    z = rng.standard_normal((n, *shape))
    ab = sched.alpha_bar[tau - 1]
    return (
        torch.as_tensor(tau),
        torch.as_tensor(z, dtype=dtype),
        torch.as_tensor(np.sqrt(ab), dtype=dtype)[:, None, None],
        torch.as_tensor(np.sqrt(1 - ab), dtype=dtype)[:, None, None],
    )


def _drop_obs(rng, obs, p):
    if p <= 0:
        return obs
    keep = torch.as_tensor(rng.random(obs.shape[0]) >= p, dtype=obs.dtype)[:, None]
    return obs * keep


def _check_finite(loss, stage, step):
    if not torch.isfinite(loss):
        raise DivergenceError(f"{stage} training diverged at step {step} (loss={loss.item()})", step=step)


def train_base(demos, config: DenoiserConfig, hyper: TrainHyper, rng, sched: NoiseSchedule | None = None):
    """Fit the base noise-prediction network on single action windows."""
    if not demos:
        raise ValueError("no demonstrations")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sched = sched or make_schedule(*DEFAULT_SCHEDULE)
    act_norm, obs_norm = _fit_norms(demos)
    rows = [w for d in demos for w in base_windows(d, config.W)]
    net = init_base(config, torch_seed(rng))
    dt = next(net.parameters()).dtype
    A = torch.as_tensor(np.stack([act_norm.transform(a) for a, _, _ in rows]), dtype=dt)
    O = torch.as_tensor(np.stack([obs_norm.transform(o) for _, o, _ in rows]), dtype=dt)
    K = torch.as_tensor(np.array([k for _, _, k in rows]))
    opt = torch.optim.Adam(net.parameters(), lr=hyper.lr)
    trace = []
    step = 0
    for _ in range(hyper.epochs):
        total = 0.0
        for _ in range(hyper.batches_per_epoch):
            idx = torch.as_tensor(rng.integers(0, len(rows), size=hyper.batch_size))
            tau, z, sa, sb = _noise_batch(rng, sched, hyper.batch_size, A.shape[1:], dt)
            obs = _drop_obs(rng, O[idx], hyper.obs_dropout)
            x = sa * A[idx] + sb * z
            loss = torch.mean((net(x, tau, obs, K[idx]) - z) ** 2)
            _check_finite(loss, "base", step)
            opt.zero_grad()
            loss.backward()
            if hyper.grad_clip:
                torch.nn.utils.clip_grad_norm_(net.parameters(), hyper.grad_clip)
            opt.step()
            total += loss.item()
            step += 1
        trace.append(total / hyper.batches_per_epoch)
    return Checkpoint(
        kind="base",
        module=net,
        config=config.to_dict(),
        action_norm=act_norm,
        obs_norm=obs_norm,
        schedule={**sched.to_dict(), "fingerprint": sched.fingerprint()},
        epoch=hyper.epochs,
        meta={"hyper": asdict(hyper), "task_id": int(demos[0].task_id), "n_demos": len(demos)},
        loss_trace=trace,
    )


def pairs_from_demos(demos, W, h, blank_prior=True):
    pairs = []
    for d in demos:
        if blank_prior:
            pairs.extend(blank_prior_pairs(d, W, h))
        pairs.extend(slice_windows(d, W, h))
    return pairs


def train_transition(window_pairs, base_ckpt: Checkpoint, hyper: TrainHyper, rng, shift=0) -> Checkpoint:
    """Fit the transition branch against a frozen base; base tensors are untouched.

    ``shift`` is the execution horizon the pairs were sliced with; the branch
    advances each prior by that many steps before encoding it.
    """
    if base_ckpt.kind != "base":
        raise KindMismatchError(f"expected a base checkpoint, got {base_ckpt.kind!r}")
    if not window_pairs:
        raise ValueError("no window pairs")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if not hyper.blank_prior:
        window_pairs = [p for p in window_pairs if not p.blank]
    base = base_ckpt.module
    sched = base_ckpt.noise_schedule()
    if base_ckpt.digest is None:
        base_ckpt.digest = base_ckpt.to_bytes()[-32:].hex()
    base_digest_before = state_digest(base)
    trans = init_transition(base, rng=torch_seed(rng), shift=shift)
    if hyper.unfreeze_base:
        freeze(base, False)
    dt = next(base.parameters()).dtype
    an, on = base_ckpt.action_norm, base_ckpt.obs_norm
    W, D = window_pairs[0].target.shape
    A = torch.as_tensor(np.stack([an.transform(p.target) for p in window_pairs]), dtype=dt)
    P = torch.as_tensor(
        np.stack([np.zeros((W, D)) if p.blank else an.transform(p.prior) for p in window_pairs]), dtype=dt
    )
    M = torch.as_tensor(np.array([0.0 if p.blank else 1.0 for p in window_pairs]), dtype=dt)
    O = torch.as_tensor(np.stack([on.transform(p.obs) for p in window_pairs]), dtype=dt)
    K = torch.as_tensor(np.array([p.task_id for p in window_pairs]))
    params = list(trans.parameters()) + (list(base.parameters()) if hyper.unfreeze_base else [])
    opt = torch.optim.Adam(params, lr=hyper.lr)
    trace = []
    step = 0
    for _ in range(hyper.epochs):
        total = 0.0
        for _ in range(hyper.batches_per_epoch):
            idx = torch.as_tensor(rng.integers(0, len(window_pairs), size=hyper.batch_size))
            tau, z, sa, sb = _noise_batch(rng, sched, hyper.batch_size, (W, D), dt)
            obs = _drop_obs(rng, O[idx], hyper.obs_dropout)
            x = sa * A[idx] + sb * z
            pred = controlled_forward(base, trans, x, tau, obs, K[idx], P[idx], M[idx])
            loss = torch.mean((pred - z) ** 2)
            _check_finite(loss, "transition", step)
            opt.zero_grad()
            loss.backward()
            if hyper.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, hyper.grad_clip)
            opt.step()
            total += loss.item()
            step += 1
        trace.append(total / hyper.batches_per_epoch)
    if not hyper.unfreeze_base and state_digest(base) != base_digest_before:
        raise CheckpointError("frozen base parameters changed during transition training")
    return Checkpoint(
        kind="transition",
        module=trans,
        config=base_ckpt.config,
        action_norm=an,
        obs_norm=on,
        schedule=base_ckpt.schedule,
        epoch=hyper.epochs,
        meta={"hyper": asdict(hyper), "base_digest": base_ckpt.digest, "task_id": int(K[0]), "prior_shift": int(shift)},
        loss_trace=trace,
        base=base_ckpt,
    )
