"""Result containers shared by the estimator backends."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("H", "K", "Q", "Hchi", "G", "I", "Lambda")


@dataclass
class Estimate:
    value: float
    stderr: float
    n: int
    backend: str

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")


@dataclass
class HeatContentCurve:
    kind: str
    t: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    n: np.ndarray
    backend: str
    cov: Optional[np.ndarray] = None  # full covariance of `value` when known
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.value = np.asarray(self.value, dtype=float)
        self.stderr = np.broadcast_to(np.asarray(self.stderr, dtype=float), self.t.shape).copy()
        self.n = np.broadcast_to(np.asarray(self.n, dtype=np.int64), self.t.shape).copy()
        if self.kind not in KINDS:
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if len(self.t) == 0:
            raise ValueError("empty t-grid")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t-grid must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def estimates(self):
        return [Estimate(float(v), float(s), int(k), self.backend) for v, s, k in zip(self.value, self.stderr, self.n)]

    def rows(self):
        for t, v, s, k in zip(self.t, self.value, self.stderr, self.n):
            yield t, v, s, int(k), self.kind, self.backend


def geometric_ladder(t_min: float, t_max: float, count: int) -> np.ndarray:
    if not (0 < t_min < t_max) or count < 2:
        raise ValueError("ladder needs 0 < t_min < t_max and count >= 2")
    return np.geomspace(t_min, t_max, count)
