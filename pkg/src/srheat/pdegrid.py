"""Finite-difference heat solver on vertex grids (Euclid1, Euclid2, Grushin).

Divergence-form second differences, Dirichlet zero on the padded outer box,
cell-average initial data.  Backward Euler with either a full sparse solve
or direction splitting; forward Euler is available for checks.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .curves import HeatContentCurve
from .domains import DomainSpec, WeightSpec
from .models import ModelSpace


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lo: tuple
    hi: tuple
    shape: tuple  # interior vertices per axis
    dt: float
    scheme: str = "adi"  # "adi", "implicit" or "explicit"
    padding: float = 0.0

    @property
    def h(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / (np.array(self.shape) + 1)

    def axes(self):
        return [np.linspace(a, b, n + 2)[1:-1] for a, b, n in zip(self.lo, self.hi, self.shape)]

    def points(self) -> np.ndarray:
        g = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([x.ravel() for x in g], axis=-1)


def _supported(m: ModelSpace):
    if m.name not in ("euclid1", "euclid2", "grushin"):
        raise GridError(f"grid backend supports euclid1, euclid2, grushin (got {m.name})")
    if m.density is not None:
        raise GridError("grid backend assumes Lebesgue measure")


def _diff_coeffs(m: ModelSpace, axes):
    """Per-axis diffusion coefficient arrays (varying along axis 0 only)."""
    if m.name == "grushin":
        return [np.ones_like(axes[0]), axes[0] ** 2]
    return [np.ones_like(a) for a in axes]


def make_grid(m: ModelSpace, dom: DomainSpec, T: float, h: float, dt: float, scheme: str = "adi",
              pad: float = 10.0) -> GridSpec:
    """Box around the domain, padded by pad * sqrt(T) times the largest frame norm."""
    _supported(m)
    if dom.kind == "ball":
        lo0, hi0 = -np.full(dom.dim, dom.radius), np.full(dom.dim, dom.radius)
    else:
        lo0, hi0 = np.array(dom.lo, float), np.array(dom.hi, float)
    if not (np.all(np.isfinite(lo0)) and np.all(np.isfinite(hi0))):
        raise GridError("grid backend needs a bounded domain")
    w = pad * math.sqrt(T)
    lo, hi = lo0 - w, hi0 + w
    if m.name == "grushin":
        # y-speed is |x|; pad y by the largest |x| on the box
        xm = max(abs(lo[0]), abs(hi[0]))
        lo[1] -= w * max(xm - 1.0, 0.0)
        hi[1] += w * max(xm - 1.0, 0.0)
    # snap the box so that lo0 sits on a vertex: boundary cells then look alike under refinement
    k = np.ceil((lo0 - lo) / h)
    lo = lo0 - k * h
    n = np.ceil((hi - lo) / h).astype(int) - 1
    hi = lo + (n + 1) * h
    return GridSpec(tuple(lo), tuple(hi), tuple(int(k) for k in n), dt, scheme, w)


def _second_diff(n: int, h: float):
    e = np.ones(n)
    return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="csr") / (h * h)


def axis_operators(m: ModelSpace, grid: GridSpec) -> list:
    _supported(m)
    axes = grid.axes()
    coef = _diff_coeffs(m, axes)
    h = grid.h
    ops = []
    nd = len(axes)
    for d in range(nd):
        mats = []
        for e in range(nd):
            n = len(axes[e])
            if e == d:
                mats.append(_second_diff(n, h[e]))
            elif e == 0 and m.name == "grushin" and d == 1:
                mats.append(sp.diags(coef[1]))
            else:
                mats.append(sp.identity(n, format="csr"))
        A = mats[0]
        for B in mats[1:]:
            A = sp.kron(A, B, format="csr")
        ops.append(A)
    return ops


def assemble_operator(m: ModelSpace, grid: GridSpec):
    ops = axis_operators(m, grid)
    A = ops[0]
    for B in ops[1:]:
        A = A + B
    if grid.scheme == "explicit":
        lim = stable_dt(m, grid)
        if grid.dt > lim:
            raise GridError(f"explicit step dt={grid.dt:g} violates the stability bound; use dt <= {lim:.3g}")
    return A.tocsr()


def stable_dt(m: ModelSpace, grid: GridSpec) -> float:
    axes = grid.axes()
    coef = _diff_coeffs(m, axes)
    rate = sum(2.0 * np.max(c) / hh ** 2 for c, hh in zip(coef, grid.h))
    return 1.0 / rate


# ---------------------------------------------------------------------------
# initial data

def _disc_rect_area(R, x0, x1, y0, y1):
    def S(x):
        x = min(max(x, -R), R)
        return 0.5 * (x * math.sqrt(max(R * R - x * x, 0.0)) + R * R * math.asin(x / R))

    cuts = {x0, x1}
    for y in (y0, y1):
        if abs(y) < R:
            c = math.sqrt(R * R - y * y)
            cuts.update((c, -c))
    cuts.update((R, -R))
    cuts = sorted(c for c in cuts if x0 <= c <= x1)
    area = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        xm = 0.5 * (a + b)
        if abs(xm) >= R or b <= a:
            continue
        s = math.sqrt(R * R - xm * xm)
        top_s = s < y1
        bot_s = -s > y0
        top = s if top_s else y1
        bot = -s if bot_s else y0
        if top <= bot:
            continue
        it = (S(b) - S(a)) if top_s else y1 * (b - a)
        ib = -(S(b) - S(a)) if bot_s else y0 * (b - a)
        area += it - ib
    return area


def cell_fractions(dom: DomainSpec, grid: GridSpec, sub: int = 16) -> np.ndarray:
    """Fraction of each dual cell [x - h/2, x + h/2]^n inside the domain."""
    axes = grid.axes()
    h = grid.h
    if dom.kind == "box":
        fr = []
        for d, a in enumerate(axes):
            lo, hi = a - h[d] / 2, a + h[d] / 2
            ov = np.clip(np.minimum(hi, dom.hi[d]) - np.maximum(lo, dom.lo[d]), 0.0, None) / h[d]
            fr.append(ov)
        out = fr[0]
        for f in fr[1:]:
            out = np.multiply.outer(out, f)
        return out.ravel()
    pts = grid.points()
    r = np.linalg.norm(pts, axis=-1)
    half_diag = 0.5 * np.linalg.norm(h)
    frac = (r < dom.radius).astype(float)
    edge = np.abs(r - dom.radius) <= half_diag
    if dom.dim == 2:
        for i in np.nonzero(edge)[0]:
            x, y = pts[i]
            frac[i] = _disc_rect_area(dom.radius, x - h[0] / 2, x + h[0] / 2, y - h[1] / 2, y + h[1] / 2) / (h[0] * h[1])
    else:
        off = (np.arange(sub) + 0.5) / sub - 0.5
        sub_pts = np.stack(np.meshgrid(*[off * hh for hh in h], indexing="ij"), -1).reshape(-1, dom.dim)
        for i in np.nonzero(edge)[0]:
            frac[i] = np.mean(dom.contains(pts[i] + sub_pts))
    return frac


# ---------------------------------------------------------------------------
# time stepping

class _Stepper:
    def __init__(self, m: ModelSpace, grid: GridSpec):
        self.grid = grid
        self.ops = axis_operators(m, grid)
        self.A = assemble_operator(m, grid)
        self._cache = {}
        self.N = self.A.shape[0]

    def _factors(self, dt):
        key = round(dt, 18)
        if key not in self._cache:
            I = sp.identity(self.N, format="csc")
            if self.grid.scheme == "implicit" or len(self.ops) == 1:
                self._cache[key] = [splu((I - dt * self.A).tocsc())]
            else:
                self._cache[key] = [splu((I - dt * B).tocsc()) for B in self.ops]
        return self._cache[key]

    def step(self, u, dt):
        if self.grid.scheme == "explicit":
            return u + dt * (self.A @ u)
        for lu in self._factors(dt):
            u = lu.solve(u)
        return u


def solve_heat(m: ModelSpace, dom: DomainSpec, grid: GridSpec, ts, weight: Optional[WeightSpec] = None,
               dump_dir: Optional[str] = None):
    """Returns {"H": curve, "K": curve, "mass": array[, "Hchi": curve]}."""
    _supported(m)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(np.diff(ts) <= 0) or ts[0] <= 0:
        raise GridError("t-grid must be positive and increasing")
    horizon = (grid.padding / 6.0) ** 2 if grid.padding > 0 else np.inf
    if ts[-1] > horizon * (1 + 1e-12):
        raise GridError(f"t = {ts[-1]:g} exceeds the padding horizon {horizon:g}")
    stepper = _Stepper(m, grid)
    frac = cell_fractions(dom, grid)
    cell = float(np.prod(grid.h))
    u = frac.copy()
    mass0 = u.sum() * cell
    chi = weight.chi.values(grid.points()) if weight is not None else None
    H, K, Hc, mass = [], [], [], []
    t = 0.0
    for k, tk in enumerate(ts):
        while tk - t > 1e-14 * tk:
            h = min(grid.dt, tk - t)
            u = stepper.step(u, h)
            t = t + h if tk - (t + h) > 1e-14 * tk else tk
        H.append(np.sum(u * frac) * cell)
        K.append(np.sum(u * (1 - frac)) * cell)
        mass.append(u.sum() * cell)
        if chi is not None:
            Hc.append(np.sum(u * frac * chi) * cell)
        if dump_dir is not None:
            dump_snapshot(dump_dir, f"u_{k:03d}", u, grid, tk)
    meta = {"model": m.name, "domain": dom.name, "mass0": mass0, "h": grid.h.tolist(), "dt": grid.dt,
            "scheme": grid.scheme}
    out = {"H": HeatContentCurve("H", ts, H, 0.0, u.size, "grid", meta=meta),
           "K": HeatContentCurve("K", ts, K, 0.0, u.size, "grid", meta=meta),
           "mass": np.array(mass), "mass0": mass0, "u": u}
    if chi is not None:
        out["Hchi"] = HeatContentCurve("Hchi", ts, Hc, 0.0, u.size, "grid", meta=meta)
    return out


def dump_snapshot(directory: str, stem: str, u: np.ndarray, grid: GridSpec, t: float):
    os.makedirs(directory, exist_ok=True)
    u.astype("<f8").tofile(os.path.join(directory, stem + ".bin"))
    with open(os.path.join(directory, stem + ".txt"), "w") as f:
        f.write(f"dims {' '.join(str(n) for n in grid.shape)}\n")
        f.write(f"lo {' '.join(repr(float(x)) for x in grid.lo)}\n")
        f.write(f"hi {' '.join(repr(float(x)) for x in grid.hi)}\n")
        f.write(f"t {t!r}\ndtype float64-le\norder C\n")
