"""Self-checks run by ``diffcontrol verify``: schedule math, zero-init
equivalence, slicing identities and finite-difference gradient checks."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from . import tasks as T
from .diffusion import forward_diffuse, make_schedule, reverse_step
from .nets import DenoiserConfig, controlled_forward, denoise_base, denoise_controlled, init_base, init_transition
from .training import DEFAULT_SCHEDULE, slice_windows

__all__ = ["Check", "gradcheck", "base_loss", "transition_loss", "run_invariants"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _exact_products(T_, b0, b1):
    f0, f1 = Fraction(b0), Fraction(b1)
    p, out = Fraction(1), []
    for i in range(T_):
        beta = f0 if T_ == 1 else f0 + (f1 - f0) * Fraction(i, T_ - 1)
        p *= 1 - beta
        out.append(float(p))
    return np.array(out)


def check_schedule(rng):
    worst = 0.0
    for _ in range(5):
        T_ = int(rng.integers(1, 200))
        b0 = float(rng.uniform(1e-5, 0.05))
        b1 = float(rng.uniform(b0, 0.3))
        s = make_schedule(T_, b0, b1)
        worst = max(worst, float(np.max(np.abs(s.alpha_bar - _exact_products(T_, b0, b1)))))
    s = make_schedule(1, 0.02, 0.02)
    a0 = rng.uniform(-1, 1, (48, 2))
    z = rng.standard_normal((48, 2))
    rt = float(np.max(np.abs(reverse_step(forward_diffuse(a0, 1, z, s), 1, z, np.zeros_like(z), s) - a0)))
    return [
        Check("alpha_bar product", worst <= 1e-12, f"max abs error {worst:.2e}"),
        Check("single-step round trip", rt <= 1e-9, f"max abs error {rt:.2e}"),
    ]


def check_zero_init(config: DenoiserConfig, rng, n=100):
    base = init_base(config, int(rng.integers(2**31)))
    trans = init_transition(base, rng=int(rng.integers(2**31)), shift=config.W // 4)
    bad = 0
    for _ in range(n):
        a = rng.standard_normal((config.W, config.D))
        tau = int(rng.integers(1, 101))
        obs = rng.standard_normal(config.obs_dim)
        k = int(rng.integers(config.n_tasks))
        prior = rng.standard_normal((config.W, config.D))
        x = denoise_base(base, a, tau, obs, k)
        y = denoise_controlled(base, trans, a, tau, obs, k, prior, True)
        bad += not np.array_equal(x, y)
    return Check("zero-init equivalence", bad == 0, f"{n - bad}/{n} inputs bit-identical")


def check_slicing(rng, W=48, h=12):
    bad = total = 0
    for task in T.TASKS:
        for d in T.gen_demos(task, 10, rng):
            for p in slice_windows(d, W, h):
                total += 1
                bad += not np.array_equal(p.target[: W - h], p.prior[h:])
    return Check("window overlap identity", bad == 0, f"{total - bad}/{total} pairs")


# --- gradient checks ---------------------------------------------------------------


def _batch(config, sched, rng, B):
    tau = rng.integers(1, sched.T + 1, size=B)
    ab = sched.alpha_bar[tau - 1][:, None, None]
    a0 = rng.uniform(-1, 1, (B, config.W, config.D))
    z = rng.standard_normal((B, config.W, config.D))
    x = np.sqrt(ab) * a0 + np.sqrt(1 - ab) * z
    return {
        "x": torch.as_tensor(x),
        "z": torch.as_tensor(z),
        "tau": torch.as_tensor(tau),
        "obs": torch.as_tensor(rng.uniform(-1, 1, (B, config.obs_dim))),
        "k": torch.as_tensor(rng.integers(0, config.n_tasks, size=B)),
        "prior": torch.as_tensor(rng.uniform(-1, 1, (B, config.W, config.D))),
        "mask": torch.as_tensor((rng.random(B) < 0.75).astype(np.float64)),
    }


def base_loss(base, batch):
    """Mean-squared noise-prediction error of the base network."""
    return torch.mean((base(batch["x"], batch["tau"], batch["obs"], batch["k"]) - batch["z"]) ** 2)


def transition_loss(base, trans, batch):
    """The same error with the transition branch conditioning on the prior window."""
    pred = controlled_forward(base, trans, batch["x"], batch["tau"], batch["obs"], batch["k"], batch["prior"], batch["mask"])
    return torch.mean((pred - batch["z"]) ** 2)


def gradcheck(loss_fn, params, rng, n_entries=12, step=1e-4):
    """Compare autograd against central differences at randomly chosen entries.

    Returns ``(max relative error, list of (name, index, analytic, numeric))``.
    Entries are drawn from tensors weighted by size.
    """
    named = [(n, p) for n, p in params if p.requires_grad]
    for _, p in named:
        p.grad = None
    loss_fn().backward()
    sizes = np.array([p.numel() for _, p in named], dtype=float)
    rows, worst = [], 0.0
    picks = rng.choice(len(named), size=n_entries, p=sizes / sizes.sum())
    for j in picks:
        name, p = named[j]
        i = int(rng.integers(p.numel()))
        flat = p.data.view(-1)
        analytic = float(p.grad.view(-1)[i])
        old = float(flat[i])
        with torch.no_grad():
            flat[i] = old + step
            up = float(loss_fn())
            flat[i] = old - step
            down = float(loss_fn())
            flat[i] = old
        numeric = (up - down) / (2 * step)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        rows.append((name, i, analytic, numeric))
    return worst, rows


def gradient_checks(rng, config=None, n_entries=12):
    config = config or DenoiserConfig(W=16, D=2, obs_dim=3, channels=(8, 16, 32), cond_dim=32, prior_hidden=8)
    sched = make_schedule(*DEFAULT_SCHEDULE)
    base = init_base(config, int(rng.integers(2**31))).double()
    batch = _batch(config, sched, rng, 4)
    err_b, _ = gradcheck(lambda: base_loss(base, batch), list(base.named_parameters()), rng, n_entries)
    frozen = copy.deepcopy(base)
    trans = init_transition(frozen, rng=int(rng.integers(2**31)), shift=config.W // 4).double()
    with torch.no_grad():
        # away from zero, so gradients reach the replica and prior encoder
        for c in trans.connectors:
            c.weight.normal_(0.0, 0.2)
            c.bias.normal_(0.0, 0.2)
    err_t, _ = gradcheck(lambda: transition_loss(frozen, trans, batch), list(trans.named_parameters()), rng, n_entries)
    return [
        Check("base loss gradient", err_b < 1e-3, f"max relative error {err_b:.2e} over {n_entries} entries"),
        Check("transition loss gradient", err_t < 1e-3, f"max relative error {err_t:.2e} over {n_entries} entries"),
    ]


def run_invariants(seed=0, config=None):
    """Every check, in a fixed order, from one seed."""
    rng = np.random.default_rng(seed)
    config = config or DenoiserConfig(W=48, D=1, obs_dim=1, channels=(16, 32, 64))
    checks = check_schedule(rng)
    checks.append(check_zero_init(config, rng))
    checks.append(check_slicing(rng))
    checks.extend(gradient_checks(rng))
    return checks
