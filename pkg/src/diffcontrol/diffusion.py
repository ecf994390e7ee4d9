"""DDPM noise schedules, forward corruption and ancestral sampling.

Step indices ``tau`` are 1-based throughout: ``tau=1`` is the last
denoising step and ``tau=T`` the first. Internally the schedule arrays are
stored 0-based, so ``beta[tau - 1]`` is the variance of step ``tau``.

Functions accept a single window of shape ``(W, D)`` or a stack of windows
``(n, W, D)``; the arithmetic is elementwise either way.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .exceptions import (
    ContractViolation,
    DivergenceError,
    InvalidRangeError,
    ShapeMismatchError,
    StepIndexError,
)

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_diffuse",
    "reverse_step",
    "sample_loop",
]

Denoiser = Callable[[np.ndarray, int], np.ndarray]
RNG = Union[np.random.Generator, Sequence[np.random.Generator]]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule with its cumulative signal fractions."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def _check_tau(self, tau):
        if not isinstance(tau, (int, np.integer)) or not 1 <= tau <= self.T:
            raise StepIndexError(f"tau must be an integer in [1, {self.T}], got {tau!r}")
        return int(tau)

    def fingerprint(self):
        """Short digest identifying the schedule, stored in checkpoints."""
        h = hashlib.sha256()
        h.update(np.int64(self.T).tobytes())
        h.update(np.ascontiguousarray(self.beta, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def to_dict(self):
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidRangeError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRangeError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(int(T), beta, alpha_bar)


def forward_diffuse(a0, tau, z, sched: NoiseSchedule) -> np.ndarray:
    """Corrupt a clean window to diffusion step ``tau`` using noise ``z``."""
    tau = sched._check_tau(tau)
    a0 = np.asarray(a0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if a0.shape != z.shape:
        raise ShapeMismatchError(f"noise shape {z.shape} != window shape {a0.shape}")
    ab = sched.alpha_bar[tau - 1]
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * z


def reverse_step(a_tau, tau, eps_pred, z, sched: NoiseSchedule) -> np.ndarray:
    """One ancestral step from ``tau`` to ``tau - 1``.

    Uses the posterior-mean parameterisation with step variance ``beta[tau]``.
    ``z`` must be all zeros at ``tau == 1``.
    """
    tau = sched._check_tau(tau)
    a_tau = np.asarray(a_tau, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if eps_pred.shape != a_tau.shape or z.shape != a_tau.shape:
        raise ShapeMismatchError(
            f"shapes differ: a_tau {a_tau.shape}, eps_pred {eps_pred.shape}, z {z.shape}"
        )
    if tau == 1 and np.any(z != 0.0):
        raise ContractViolation("the final step (tau=1) must not inject noise")
    beta = sched.beta[tau - 1]
    ab = sched.alpha_bar[tau - 1]
    mean = (a_tau - beta / np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(1.0 - beta)
    return mean + np.sqrt(beta) * z


def _normal(rng: RNG, W: int, D: int) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((W, D))
    return np.stack([g.standard_normal((W, D)) for g in rng])


def sample_loop(denoiser: Denoiser, W: int, D: int, sched: NoiseSchedule, rng: RNG) -> np.ndarray:
    """Generate a window by running the reverse chain from ``tau=T`` to 1.

    ``rng`` is either one generator (returns ``(W, D)``) or a sequence of
    generators, one per sample (returns ``(n, W, D)``). Each sample draws
    its initial noise and per-step noise from its own generator, in that
    order, so a batched call consumes randomness exactly like ``n`` single
    calls would.
    """
    x = _normal(rng, W, D)
    for tau in range(sched.T, 0, -1):
        eps = np.asarray(denoiser(x, tau), dtype=np.float64)
        if eps.shape != x.shape:
            raise ShapeMismatchError(f"denoiser returned {eps.shape}, expected {x.shape}")
        z = _normal(rng, W, D) if tau > 1 else np.zeros_like(x)
        x = reverse_step(x, tau, eps, z, sched)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite sample at diffusion step {tau}", step=tau)
    return x
