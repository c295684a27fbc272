"""Gauss-Legendre rules used throughout."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a: float, b: float, n: int):
    x, w = _leggauss(n)
    h = 0.5 * (b - a)
    return a + h * (x + 1.0), h * w


def composite(a: float, b: float, panels: int, n: int):
    edges = np.linspace(a, b, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(lo, hi, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def tensor(rules):
    """Tensor product of 1D rules [(x, w), ...] -> points (K, d), weights (K,)."""
    if not rules:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return pts, w


def abel_rule(t: float, n: int = 48):
    """Nodes/weights for int_0^t f(tau) (t - tau)^(-1/2) dtau.

    tau = t sin^2(theta) maps the integral to
    int_0^{pi/2} f(t sin^2 theta) 2 sqrt(t) sin(theta) dtheta, which is
    smooth for f with sqrt(tau) behavior at the origin.
    """
    th, w = gauss_legendre(0.0, 0.5 * np.pi, n)
    return t * np.sin(th) ** 2, w * 2.0 * np.sqrt(t) * np.sin(th)
