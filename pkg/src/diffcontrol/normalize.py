"""Per-dimension affine maps between environment units and [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Normalizer:
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, margin=0.0):
        """Map the per-column range of ``X`` (widened by ``margin``) onto [-1, 1]."""
        X = np.asarray(X, dtype=np.float64).reshape(-1, np.shape(X)[-1])
        lo, hi = X.min(axis=0), X.max(axis=0)
        center = (lo + hi) / 2
        half = (hi - lo) / 2 * (1 + margin)
        half = np.where(half > 1e-8, half, 1.0)
        return cls(center, half)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.center) / self.scale

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale + self.center

    def to_dict(self):
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["center"], dtype=np.float64), np.array(d["scale"], dtype=np.float64))
