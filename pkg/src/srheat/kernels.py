"""Heat kernels of e^{t Lap} and exact temperature profiles.

Normalization: the generator is the sub-Laplacian itself (not half of it),
so Gaussians carry 4t in the exponent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import erf, erfc, i0e

from .curves import HeatContentCurve
from .models import ModelSpace
from .quadrature import composite, gauss_legendre, tensor

SQPI = math.sqrt(math.pi)


class KernelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Heisenberg

def heis_group_mul(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    z = p[..., 2] + q[..., 2] + 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
    return np.stack([p[..., 0] + q[..., 0], p[..., 1] + q[..., 1], z], axis=-1)


def heis_group_inv(p):
    return -np.asarray(p, dtype=float)


def _mu_over_sinh(mu):
    e = np.exp(-mu)
    return 2.0 * mu * e / (1.0 - e * e)


def _mu_coth(mu):
    e2 = np.exp(-2.0 * mu)
    return mu * (1.0 + e2) / (1.0 - e2)


def heis_kernel_origin(t, r2, z, nodes: int = 16, tol_exp: float = 40.0):
    """p_t(0, (x, y, z)) with r2 = x^2 + y^2.

    (4 pi^2 t^2)^-1 int_0^inf cos(mu z / t) (mu / sinh mu) exp(-(r2 / 4t) mu coth mu) dmu
    by composite Gauss-Legendre; panel count follows the oscillation frequency.
    """
    t, r2, z = np.broadcast_arrays(np.asarray(t, float), np.asarray(r2, float), np.asarray(z, float))
    if np.any(t <= 0):
        raise KernelError("t must be positive")
    shape = t.shape
    t, r2, z = t.ravel(), r2.ravel(), z.ravel()
    a = r2 / (4.0 * t)
    w = np.abs(z) / t
    mu_max = (tol_exp + 4.0) / (1.0 + a)
    panels = np.ceil(mu_max * w / (2 * math.pi) + mu_max / 4.0).astype(int) + 2
    out = np.empty_like(t)
    x0, w0 = gauss_legendre(0.0, 1.0, nodes)
    for p in np.unique(panels):
        sel = panels == p
        s = (np.arange(p)[:, None] + x0[None, :]).ravel() / p
        ws = np.tile(w0, p) / p
        mu = mu_max[sel, None] * s[None, :]
        f = np.cos(mu * w[sel, None]) * _mu_over_sinh(mu) * np.exp(-a[sel, None] * (_mu_coth(mu) - 1.0))
        out[sel] = np.sum(f * ws, axis=1) * mu_max[sel] * np.exp(-a[sel])
    return (out / (4 * math.pi ** 2 * t * t)).reshape(shape)


def heis_kernel_origin_quad(t: float, r2: float, z: float) -> float:
    """Cross-check of heis_kernel_origin with QUADPACK's cosine-weighted rule."""
    a = r2 / (4 * t)
    w = z / t
    f = lambda mu: (_mu_over_sinh(mu) * math.exp(-a * _mu_coth(mu))) if mu > 0 else math.exp(-a)
    top = 60.0 / (1.0 + a)
    if w == 0:
        val = integrate.quad(f, 0, top, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    else:
        val = integrate.quad(f, 0, top, weight="cos", wvar=w, epsabs=1e-13, epsrel=1e-11, limit=400)[0]
    return val / (4 * math.pi ** 2 * t * t)


def heat_kernel(m: ModelSpace, t, x, y):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise KernelError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if m.name.startswith("euclid"):
        n = m.dim
        d2 = np.sum((x - y) ** 2, axis=-1)
        return (4 * math.pi * t) ** (-n / 2) * np.exp(-d2 / (4 * t))
    if m.name == "heisenberg":
        q = heis_group_mul(heis_group_inv(x), y)
        return heis_kernel_origin(t, q[..., 0] ** 2 + q[..., 1] ** 2, q[..., 2])
    raise KernelError(f"no heat kernel for model {m.name}")


def heis_mass(t: float, n_xy: int = 24, n_z: int = 16) -> float:
    """int p_t(0, y) dy over the box |x|,|y| <= 8 sqrt(t), |z| <= 64 t."""
    hx = 8 * math.sqrt(t)
    rx = gauss_legendre(0.0, hx, n_xy)
    edges = np.array([0, 2, 4, 8, 16, 32, 64]) * t
    zs, zw = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(lo, hi, n_z)
        zs.append(x)
        zw.append(w)
    rz = (np.concatenate(zs), np.concatenate(zw))
    pts, w = tensor([rx, rx, rz])
    total = 0.0
    for chunk in np.array_split(np.arange(len(w)), max(1, len(w) // 2000)):
        p = pts[chunk]
        total += np.sum(w[chunk] * heis_kernel_origin(t, p[:, 0] ** 2 + p[:, 1] ** 2, p[:, 2]))
    return 8.0 * total


# ---------------------------------------------------------------------------
# half-spaces and 1D kernels

def neumann_halfline_kernel(t, r, s):
    t = np.asarray(t, dtype=float)
    return (np.exp(-(r - s) ** 2 / (4 * t)) + np.exp(-(r + s) ** 2 / (4 * t))) / np.sqrt(4 * math.pi * t)


def halfspace_temperature(m: ModelSpace, t, x, method: str = "exact"):
    """u(t, x) for Omega = {z_1 > 0}.

    Heisenberg: "exact" uses that the x-coordinate of horizontal Brownian
    motion is itself a 1D Brownian motion with generator d^2/dx^2;
    "quadrature" integrates the kernel over a box.
    """
    if np.any(np.asarray(t) <= 0):
        raise KernelError("t must be positive")
    x = np.asarray(x, dtype=float)
    if m.name.startswith("euclid") or (m.name == "heisenberg" and method == "exact"):
        return 0.5 * erfc(-x[..., 0] / (2 * np.sqrt(t)))
    if m.name == "heisenberg" and method == "quadrature":
        return _heis_halfspace_quad(float(t), x)
    raise KernelError(f"half-space temperature unsupported for {m.name} ({method})")


def _heis_halfspace_quad(t: float, q, n: int = 20) -> float:
    s = math.sqrt(t)
    rx = composite(0.0, max(q[0] + 8 * s, 0.0) if q[0] + 8 * s > 0 else 0.0, 2, n)
    ry = composite(q[1] - 8 * s, q[1] + 8 * s, 2, n)
    # z extent grows with |x| via the group law
    span = 64 * t + 0.5 * 8 * s * (abs(q[0]) + 8 * s + abs(q[1]) + 8 * s)
    rz = composite(q[2] - span, q[2] + span, 8, n)
    pts, w = tensor([rx, ry, rz])
    qi = heis_group_inv(q)
    tot = 0.0
    for chunk in np.array_split(np.arange(len(w)), max(1, len(w) // 4000)):
        rel = heis_group_mul(qi, pts[chunk])
        tot += np.sum(w[chunk] * heis_kernel_origin(t, rel[:, 0] ** 2 + rel[:, 1] ** 2, rel[:, 2]))
    return float(tot)


# ---------------------------------------------------------------------------
# exact temperatures on built-in domains

def interval_u(t, x, a, b):
    s = 2 * np.sqrt(t)
    return 0.5 * (erfc((a - x) / s) - erfc((b - x) / s))


def interval_deficit_u(t, x, a, b):
    """1 - u for points inside (a, b), without cancellation."""
    s = 2 * np.sqrt(t)
    return 0.5 * (erfc((x - a) / s) + erfc((b - x) / s))


def _radial2_outside_mass(t, rho, R, n=96, width=16.0):
    """Mass of the 2D kernel from radius rho that lies outside the disc of radius R."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    st = math.sqrt(t)
    out = np.zeros_like(rho)
    s, w = gauss_legendre(0.0, 1.0, n)
    for i, r in enumerate(rho):
        lo = max(R, r - width * st)
        hi = max(lo, r + width * st)
        if hi <= lo:
            continue
        ss = lo + (hi - lo) * s
        x = r * ss / (2 * t)
        f = ss / (2 * t) * np.exp(-(r - ss) ** 2 / (4 * t)) * i0e(x)
        out[i] = np.sum(f * w) * (hi - lo)
    return out


def disc_u(t, rho, R=1.0):
    return 1.0 - _radial2_outside_mass(t, rho, R)


def ball_u(t, rho, R=1.0):
    rho = np.asarray(rho, dtype=float)
    st = np.sqrt(t)
    a, b = (R - rho) / (2 * st), (R + rho) / (2 * st)
    safe = np.where(rho > 1e-8, rho, 1.0)
    core = 0.5 * (erf(a) + erf(b))
    corr = st / (safe * SQPI) * (np.exp(-b * b) - np.exp(-a * a))
    centre = erf(R / (2 * st)) - R / np.sqrt(math.pi * t) * np.exp(-R * R / (4 * t))
    return np.where(rho > 1e-8, core + corr, centre)


def exact_u(dom, t, pts):
    """u(t, x) from the exact kernel on built-in domains."""
    pts = np.asarray(pts, dtype=float)
    name = dom.name
    if name == "interval":
        return interval_u(t, pts[..., 0], dom.lo[0], dom.hi[0])
    if name in ("heis_slab", "grushin_strip"):
        if np.any(np.isfinite(dom.lo[1:])):
            raise KernelError("exact profile needs an unbounded slab")
        return interval_u(t, pts[..., 0], dom.lo[0], dom.hi[0])
    if name == "disc":
        rho = np.linalg.norm(pts, axis=-1)
        return disc_u(t, rho.ravel(), dom.radius).reshape(rho.shape)
    if name == "ball":
        return ball_u(t, np.linalg.norm(pts, axis=-1), dom.radius)
    raise KernelError(f"no exact temperature for domain {name}")


def exact_deficit(dom, t: float, weight=None, n: int = 160) -> float:
    """int_Omega chi (1 - u) domega, computed from the exact kernel."""
    st = math.sqrt(t)
    name = dom.name
    if weight is None and name == "interval":
        L = dom.hi[0] - dom.lo[0]
        return L - (L * erf(L / (2 * st)) + 2 * st / SQPI * (math.exp(-L * L / (4 * t)) - 1.0))
    if weight is None and name == "disc":
        R = dom.radius
        lo = max(0.0, R - 16 * st)
        r, wr = gauss_legendre(lo, R, n)
        return float(2 * math.pi * np.sum(wr * r * _radial2_outside_mass(t, r, R, n)))
    if weight is None and name == "ball":
        R = dom.radius
        lo = max(0.0, R - 16 * st)
        r, wr = composite(lo, R, 4, n // 4)
        return float(4 * math.pi * np.sum(wr * r * r * (1.0 - ball_u(t, r, R))))
    if weight is not None:
        band = weight.band if np.isfinite(weight.band) else dom.delta_max
        top = min(band, dom.delta_max, 16 * st) if name != "interval" else min(band, dom.delta_max)
        pts, w = dom.tube_nodes(0.0, top, ns=64, order=64, panels=4)
        chi = weight.chi.values(pts)
        keep = chi != 0
        if name in ("interval", "heis_slab", "grushin_strip"):
            d = interval_deficit_u(t, pts[keep, 0], dom.lo[0], dom.hi[0])
        else:
            d = 1.0 - exact_u(dom, t, pts[keep])
        return float(np.sum(w[keep] * chi[keep] * d))
    raise KernelError(f"no exact heat content for domain {name}")


def exact_curve(dom, ts, kind: str = "H", weight=None, c0: Optional[float] = None) -> HeatContentCurve:
    """H, K or Hchi on a t-grid from the exact kernel (stderr 0)."""
    ts = np.asarray(ts, dtype=float)
    d = np.array([exact_deficit(dom, t, weight) for t in ts])
    if kind == "K":
        vals = d
    elif kind in ("H", "Hchi"):
        if c0 is None:
            from .domains import predict_coefficients

            c0 = dom.volume if weight is None else predict_coefficients(dom, weight)[0]
        vals = c0 - d
    else:
        raise KernelError(f"exact curve kind {kind} unsupported")
    return HeatContentCurve(kind, ts, vals, 0.0, 0, "kernel-exact", meta={"domain": dom.name})
