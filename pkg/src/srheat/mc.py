"""Monte Carlo estimators driven by horizontal Brownian motion.

The simulated process solves dX = sqrt(2) sum_i X_i(X) o dB^i, whose
generator is the sub-Laplacian.  Every path owns a counter-based random
stream keyed by (seed, pair index), so results do not depend on how paths
are split between workers.  Antithetic pairs share a key and use opposite
Gaussian increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba as nb
import numpy as np

from . import domains as Dm
from .curves import Estimate, HeatContentCurve
from .domains import DomainSpec, WeightSpec
from .models import ModelSpace
from .quadrature import abel_rule

MODEL_CODES = {"euclid": 0, "heisenberg": 1, "grushin": 2}
SQPI = math.sqrt(math.pi)


class McError(ValueError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    dt: Optional[float] = None  # absolute step
    dt_rel: Optional[float] = 1.0 / 400  # step as a fraction of the checkpoint time
    scheme: str = "heun"  # "heun" (Stratonovich) or "euler"
    n_paths: int = 100_000
    seed: int = 12345
    antithetic: bool = True
    n_batches: int = 20
    merge_constant: bool = True  # exact-in-law single steps for constant frames

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise McError("dt must be positive")
        if self.dt is None and (self.dt_rel is None or self.dt_rel <= 0):
            raise McError("need dt or dt_rel > 0")
        if self.n_paths < 100:
            raise McError("n_paths must be >= 100")
        if self.scheme not in ("heun", "euler"):
            raise McError(f"unknown scheme {self.scheme!r}")


# ---------------------------------------------------------------------------
# counter-based RNG

@nb.njit(cache=True, inline="always")
def _splitmix(x):
    z = x + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _uniform(key, ctr):
    v = _splitmix(key ^ _splitmix(ctr))
    return ((v >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _path_key(seed, index):
    return _splitmix(_splitmix(np.uint64(seed)) + np.uint64(index) * np.uint64(0xD1B54A32D192ED03))


@nb.njit(cache=True)
def _normal_pair(key, ctr):
    u1 = _uniform(key, ctr)
    u2 = _uniform(key, ctr + np.uint64(1))
    r = math.sqrt(-2.0 * math.log(u1))
    return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)


def path_normals(seed: int, index: int, count: int) -> np.ndarray:
    """Reference draw of a path's first `count` normals (for testing)."""
    return _path_normals(np.uint64(seed), np.uint64(index), count)


@nb.njit(cache=True)
def _path_normals(seed, index, count):
    key = _path_key(seed, index)
    out = np.empty(count)
    ctr = np.uint64(0)
    i = 0
    while i < count:
        a, b = _normal_pair(key, ctr)
        ctr += np.uint64(2)
        out[i] = a
        if i + 1 < count:
            out[i + 1] = b
        i += 2
    return out


# ---------------------------------------------------------------------------
# path kernel

@nb.njit(cache=True, inline="always")
def _frame_apply(model, x, dB, out):
    if model == 0:
        for j in range(x.shape[0]):
            out[j] = dB[j]
    elif model == 1:
        out[0] = dB[0]
        out[1] = dB[1]
        out[2] = -0.5 * x[1] * dB[0] + 0.5 * x[0] * dB[1]
    else:
        out[0] = dB[0]
        out[1] = x[0] * dB[1]


@nb.njit(cache=True, inline="always")
def _inside(kind, x, lo, hi, R):
    if kind == 1:
        s = 0.0
        for j in range(x.shape[0]):
            s += x[j] * x[j]
        return s < R * R
    for j in range(x.shape[0]):
        if not (x[j] > lo[j] and x[j] < hi[j]):
            return False
    return True


@nb.njit(cache=True, parallel=True)
def _run(model, nfields, x0, seg_n, seg_dt, seg_rem, seed, first_pair, antithetic, scheme, killed,
         kind, lo, hi, R, keep_x, out_in, out_alive, out_x):
    P, n = x0.shape
    T = seg_n.shape[0]
    for p in nb.prange(P):
        pair = p // 2 if antithetic else p
        sign = -1.0 if (antithetic and (p % 2 == 1)) else 1.0
        key = _path_key(seed, first_pair + pair)
        ctr = np.uint64(0)
        x = x0[p].copy()
        xt = np.empty(n)
        f1 = np.empty(n)
        f2 = np.empty(n)
        dB = np.empty(nfields + 1)
        alive = _inside(kind, x, lo, hi, R)
        for k in range(T):
            nsteps = seg_n[k] + (1 if seg_rem[k] > 0.0 else 0)
            for s in range(nsteps):
                h = seg_dt[k] if s < seg_n[k] else seg_rem[k]
                sc = math.sqrt(2.0 * h) * sign
                j = 0
                while j < nfields:
                    a, b = _normal_pair(key, ctr)
                    ctr += np.uint64(2)
                    dB[j] = a * sc
                    if j + 1 < nfields:
                        dB[j + 1] = b * sc
                    j += 2
                _frame_apply(model, x, dB, f1)
                if scheme == 0:
                    for i in range(n):
                        xt[i] = x[i] + f1[i]
                    _frame_apply(model, xt, dB, f2)
                    for i in range(n):
                        x[i] += 0.5 * (f1[i] + f2[i])
                else:
                    for i in range(n):
                        x[i] += f1[i]
                if killed and alive:
                    if not _inside(kind, x, lo, hi, R):
                        alive = False
            ins = _inside(kind, x, lo, hi, R)
            out_in[p, k] = ins
            out_alive[p, k] = alive and ins
            if keep_x:
                for i in range(n):
                    out_x[p, k, i] = x[i]


def _model_code(m: ModelSpace) -> int:
    if m.density is not None:
        raise McError("simulator supports Lebesgue measure only")
    if m.name.startswith("euclid"):
        return 0
    try:
        return MODEL_CODES[m.name]
    except KeyError:
        raise McError(f"no simulator for model {m.name}") from None


def _segments(ts, cfg: SdeConfig, m: ModelSpace, killed: bool):
    ts = np.asarray(ts, dtype=float)
    prev = np.concatenate([[0.0], ts[:-1]])
    seg = ts - prev
    if cfg.merge_constant and m.constant_frame and not killed:
        return np.zeros(len(ts), dtype=np.int64), np.zeros(len(ts)), seg.copy()
    dt = np.full(len(ts), cfg.dt) if cfg.dt is not None else cfg.dt_rel * ts
    n = np.floor(seg / dt * (1 + 1e-12)).astype(np.int64)
    rem = seg - n * dt
    rem[rem < 1e-12 * seg] = 0.0
    return n, dt, rem


def _dom_arrays(dom: Optional[DomainSpec], n: int):
    if dom is None:
        return 0, np.full(n, -np.inf), np.full(n, np.inf), 0.0
    if dom.kind == "ball":
        return 1, np.zeros(n), np.zeros(n), float(dom.radius)
    return 0, np.asarray(dom.lo, dtype=float), np.asarray(dom.hi, dtype=float), 0.0


def run_paths(m: ModelSpace, x0, ts, cfg: SdeConfig, dom: Optional[DomainSpec] = None, first_pair: int = 0,
              killed: bool = False, keep_x: bool = False):
    """Simulate len(x0) paths, checkpointed at ts.

    Returns (inside[P, T], alive[P, T], x[P, T, n] or None).
    """
    x0 = np.ascontiguousarray(np.atleast_2d(np.asarray(x0, dtype=float)))
    P, n = x0.shape
    if n != m.dim:
        raise McError("start points have wrong dimension")
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0) or np.any(np.diff(ts) <= 0):
        raise McError("checkpoint times must be positive and increasing")
    seg_n, seg_dt, seg_rem = _segments(ts, cfg, m, killed)
    kind, lo, hi, R = _dom_arrays(dom, n)
    out_in = np.zeros((P, len(ts)), dtype=np.bool_)
    out_alive = np.zeros((P, len(ts)), dtype=np.bool_)
    out_x = np.zeros((P, len(ts), n) if keep_x else (1, 1, n))
    _run(_model_code(m), m.n_fields, x0, seg_n, seg_dt, seg_rem, np.uint64(cfg.seed), np.int64(first_pair),
         cfg.antithetic, 0 if cfg.scheme == "heun" else 1, killed, kind, lo, hi, R, keep_x,
         out_in, out_alive, out_x)
    return out_in, out_alive, (out_x if keep_x else None)


def simulate_path(m: ModelSpace, x0, t: float, cfg: SdeConfig, index: int = 0, dom: Optional[DomainSpec] = None):
    """Endpoint of path `index` (and whether it stayed inside dom, if given)."""
    c = SdeConfig(**{**cfg.__dict__, "antithetic": False})
    ins, alive, x = run_paths(m, x0, [t], c, dom, first_pair=index, killed=dom is not None, keep_x=True)
    return x[0, 0], bool(alive[0, 0])


def simulate_endpoints(m: ModelSpace, x0, t: float, n: int, cfg: SdeConfig) -> np.ndarray:
    starts = np.broadcast_to(np.asarray(x0, dtype=float), (n, m.dim))
    return run_paths(m, starts, [t], cfg, keep_x=True)[2][:, 0, :]


# ---------------------------------------------------------------------------
# start-point samplers

def _bbox(dom: DomainSpec, weight: Optional[WeightSpec], band: Optional[float]):
    if weight is not None and weight.box_lo is not None:
        lo, hi = np.array(weight.box_lo, float), np.array(weight.box_hi, float)
    elif dom.kind == "ball":
        pad = 0.0
        if weight is not None and np.isfinite(weight.band):
            pad = weight.band
        lo, hi = -np.full(dom.dim, dom.radius + pad), np.full(dom.dim, dom.radius + pad)
    else:
        lo, hi = np.array(dom.lo, float), np.array(dom.hi, float)
        if weight is not None and np.isfinite(weight.band):
            lo[0] -= weight.band
            hi[0] += weight.band
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise McError("sampling region is unbounded; supply a weight with a support box")
    return lo, hi


def _rejection(rng, lo, hi, n, accept_fn, chunk=None):
    out = []
    got = 0
    chunk = chunk or max(4 * n, 1024)
    while got < n:
        pts = rng.uniform(lo, hi, size=(chunk, len(lo)))
        acc = accept_fn(pts, rng)
        pts = pts[acc]
        out.append(pts)
        got += len(pts)
    return np.concatenate(out)[:n]


@dataclass
class _Sampler:
    """Start-point law plus the constants that turn indicator means into contents."""

    draw: Callable
    mass: float  # total mass of the sampling law (|chi| omega or omega restricted)
    sign: Optional[Callable]  # sign of chi at sampled points, None if positive
    c0: float  # exact int chi over Omega (or omega(Omega))
    rest: float  # mass in the localized-out region where u = 1 up to O(t^inf)


def _uniform_sampler(dom: DomainSpec, band: Optional[float]) -> _Sampler:
    lo, hi = _bbox(dom, None, None)
    if band is None:
        acc = lambda p, rng: dom.contains(p)
        vol = dom.volume
    else:
        if dom.params.get("bounded") and dom.dim > 1:
            # the side walls of a bounded slab also lose mass but delta does not see them
            raise McError("band localization needs every boundary piece inside the band; use band=None")
        acc = lambda p, rng: dom.contains(p) & (dom.delta_values(p) < band)
        vol = Dm.volume_integral(dom, 1.0, 0.0, band)
    draw = lambda rng, n: _rejection(rng, lo, hi, n, acc)
    return _Sampler(draw, vol, None, dom.volume, dom.volume - vol)


def _weight_sampler(dom: DomainSpec, weight: WeightSpec, both_sides: bool = False, grid: int = 40) -> _Sampler:
    lo, hi = _bbox(dom, weight, None)
    g = np.stack(np.meshgrid(*[np.linspace(a, b, grid) for a, b in zip(lo, hi)], indexing="ij"), -1)
    cmax = 1.1 * np.max(np.abs(weight.chi.values(g.reshape(-1, dom.dim))))
    if cmax <= 0:
        raise McError("weight vanishes identically")

    def acc(p, rng):
        v = np.abs(weight.chi.values(p))
        if np.any(v > cmax):
            raise McError("weight envelope underestimated")
        ok = rng.uniform(size=len(p)) * cmax < v
        return ok if both_sides else ok & dom.contains(p)

    band = weight.band if np.isfinite(weight.band) else dom.delta_max
    absw = lambda p: np.abs(weight.chi.values(p))
    if both_sides:
        mass = (Dm.volume_integral(dom, absw, 0.0, band, panels=4)
                + Dm.volume_integral(dom, absw, -band, 0.0, panels=4))
    else:
        mass = Dm.volume_integral(dom, absw, 0.0, min(band, dom.delta_max), panels=4)
    c0 = Dm.volume_integral(dom, weight.chi, 0.0, min(band, dom.delta_max), panels=4)
    sign = lambda p: np.sign(weight.chi.values(p))
    return _Sampler(lambda rng, n: _rejection(rng, lo, hi, n, acc), mass, sign, c0, 0.0)


def _batches(cfg: SdeConfig):
    nb_ = max(2, cfg.n_batches)
    per = cfg.n_paths // nb_
    if cfg.antithetic:
        per -= per % 2
    if per < 2:
        raise McError("too few paths per batch")
    return nb_, per


def _batch_rng(cfg: SdeConfig, b: int, tag: int):
    return np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFF, b, tag])


def _starts(sampler: _Sampler, rng, per: int, antithetic: bool):
    if antithetic:
        x = sampler.draw(rng, per // 2)
        return np.repeat(x, 2, axis=0)
    return sampler.draw(rng, per)


def _combine(vals: np.ndarray):
    """Batch means: mean, covariance of the mean."""
    k = vals.shape[0]
    mean = vals.mean(axis=0)
    cov = np.atleast_2d(np.cov(vals, rowvar=False)) / k
    return mean, cov


def estimate_heat_content(m: ModelSpace, dom: DomainSpec, kind: str, chi: Optional[WeightSpec], ts,
                          cfg: SdeConfig, band: Optional[float] = None, return_batches: bool = False):
    """H, K, Q or Hchi on a t-grid, common random numbers across the grid."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if len(ts) == 0:
        raise McError("empty t-grid")
    if kind not in ("H", "K", "Q", "Hchi"):
        raise McError(f"unknown kind {kind}")
    if kind == "Hchi" and chi is None:
        raise McError("Hchi needs a weight")
    if chi is not None and kind != "Hchi":
        raise McError("weights apply to Hchi only")
    sampler = _weight_sampler(dom, chi) if kind == "Hchi" else _uniform_sampler(dom, band)
    nb_, per = _batches(cfg)
    killed = kind == "Q"
    vals = np.empty((nb_, len(ts)))
    for b in range(nb_):
        rng = _batch_rng(cfg, b, 1)
        x0 = _starts(sampler, rng, per, cfg.antithetic)
        ins, alive, _ = run_paths(m, x0, ts, cfg, dom, first_pair=b * per, killed=killed)
        if kind == "Hchi":
            s = sampler.sign(x0)
            vals[b] = sampler.c0 - sampler.mass * np.mean(s[:, None] * (~ins), axis=0)
        elif kind == "K":
            vals[b] = sampler.mass * np.mean(~ins, axis=0)
        elif kind == "H":
            vals[b] = sampler.rest + sampler.mass * np.mean(ins, axis=0)
        else:
            vals[b] = sampler.rest + sampler.mass * np.mean(alive, axis=0)
    mean, cov = _combine(vals)
    curve = HeatContentCurve(kind, ts, mean, np.sqrt(np.diag(cov)), nb_ * per, "mc", cov=cov,
                             meta={"model": m.name, "domain": dom.name, "weight": getattr(chi, "name", None),
                                   "c0": sampler.c0, "omega": dom.volume})
    if return_batches:
        return curve, vals
    return curve


def estimate_contents_pair(m: ModelSpace, dom: DomainSpec, ts, cfg: SdeConfig, with_q: bool = False):
    """Per-batch H and K from the same paths (complementary indicators).

    Q (killed paths) needs every SDE step and is only computed on request.
    """
    sampler = _uniform_sampler(dom, None)
    nb_, per = _batches(cfg)
    H = np.empty((nb_, len(ts)))
    K = np.empty((nb_, len(ts)))
    Q = np.empty((nb_, len(ts))) if with_q else None
    for b in range(nb_):
        rng = _batch_rng(cfg, b, 1)
        x0 = _starts(sampler, rng, per, cfg.antithetic)
        ins, alive, _ = run_paths(m, x0, ts, cfg, dom, first_pair=b * per, killed=with_q)
        H[b] = sampler.mass * np.mean(ins, axis=0)
        K[b] = sampler.mass * np.mean(~ins, axis=0)
        if with_q:
            Q[b] = sampler.mass * np.mean(alive, axis=0)
    return H, K, Q


def estimate_u(m: ModelSpace, dom: DomainSpec, t: float, x, cfg: SdeConfig) -> Estimate:
    v, s = estimate_u_many(m, dom, [t], np.atleast_2d(x), cfg)
    return Estimate(float(v[0, 0]), float(s[0, 0]), cfg.n_paths - cfg.n_paths % 2, "mc")


def estimate_u_many(m: ModelSpace, dom: DomainSpec, ts, pts, cfg: SdeConfig, complement: bool = False):
    """u(t_k, x_j) for all nodes; returns (values[J, T], stderr[J, T])."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    n = cfg.n_paths - (cfg.n_paths % 2 if cfg.antithetic else 0)
    vals = np.empty((len(pts), len(ts)))
    errs = np.empty_like(vals)
    for j, x in enumerate(pts):
        starts = np.broadcast_to(x, (n, m.dim))
        ins, _, _ = run_paths(m, starts, ts, cfg, dom, first_pair=j * n)
        f = ins.astype(float)
        if complement:
            f = 1.0 - f
        vals[j] = f.mean(axis=0)
        if cfg.antithetic:
            pair = 0.5 * (f[0::2] + f[1::2])
            errs[j] = pair.std(axis=0, ddof=1) / math.sqrt(len(pair))
        else:
            errs[j] = f.std(axis=0, ddof=1) / math.sqrt(n)
    return vals, errs


# ---------------------------------------------------------------------------
# boundary functionals with a pluggable temperature provider

UProvider = Callable[[np.ndarray, np.ndarray], tuple]


def exact_provider(dom: DomainSpec) -> UProvider:
    from .kernels import exact_u

    def prov(ts, pts):
        v = np.stack([exact_u(dom, t, pts) for t in ts], axis=-1)
        return v, np.zeros_like(v)

    return prov


def mc_provider(m: ModelSpace, dom: DomainSpec, cfg: SdeConfig) -> UProvider:
    def prov(ts, pts):
        order = np.argsort(ts)
        v, s = estimate_u_many(m, dom, np.asarray(ts)[order], pts, cfg)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        return v[:, inv], s[:, inv]

    return prov


def boundary_functional(dom: DomainSpec, functional: str, phi: Optional[WeightSpec], ts, u: UProvider,
                        r: float = 0.0, order: int = 64, ns: int = 64, n_tau: int = 48, panels: int = 4):
    """G_u, I, Lambda, Ic (outside contribution) or IminusIc on a t-grid.

    Returns (values, stderr) arrays.  Stderr combines node errors as if
    independent.
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    chi = (lambda p: np.ones(len(p))) if phi is None else phi.chi.values
    band = dom.tubular_radius if phi is None or not np.isfinite(phi.band) else phi.band
    vals = np.empty(len(ts))
    errs = np.empty(len(ts))
    if functional == "G":
        pts, w = dom.sigma_nodes(order)
        wp = w * chi(pts)
        for k, t in enumerate(ts):
            taus, wt = abel_rule(t, n_tau)
            v, s = u(taus, pts)
            vals[k] = np.sum(wp[:, None] * wt[None, :] * v) / (2 * SQPI)
            errs[k] = np.sqrt(np.sum((wp[:, None] * wt[None, :] * s) ** 2)) / (2 * SQPI)
        return vals, errs
    if functional == "Lambda":
        ypts, yw, nin = dom.boundary_nodes(order)
        pts = ypts + r * nin
        dj = dom.delta(pts, 1)
        wr = yw * dom.tube_jac(np.array(r)) / np.linalg.norm(dj.gradient(), axis=-1)
        wr = wr * chi(pts)
        v, s = u(ts, pts)
        return -np.sum(wr[:, None] * (1 - v), axis=0), np.sqrt(np.sum((wr[:, None] * s) ** 2, axis=0))
    if functional in ("I", "Ic", "IminusIc"):
        parts = []
        if functional in ("I", "IminusIc"):
            parts.append((r, min(band, dom.delta_max), 1.0))
        if functional in ("Ic", "IminusIc"):
            parts.append((-band, 0.0, -1.0))
        vals[:] = 0.0
        var = np.zeros(len(ts))
        for s0, s1, sgn in parts:
            pts, w = dom.tube_nodes(s0, s1, ns, order, panels)
            c = chi(pts)
            keep = c != 0
            pts, w = pts[keep], w[keep] * c[keep]
            v, s = u(ts, pts)
            integrand = (1 - v) if sgn > 0 else v
            vals += sgn * np.sum(w[:, None] * integrand, axis=0)
            var += np.sum((w[:, None] * s) ** 2, axis=0)
        return vals, np.sqrt(var)
    raise McError(f"unknown functional {functional!r}")


def estimate_boundary_functional(m: ModelSpace, dom: DomainSpec, functional: str, phi: Optional[WeightSpec],
                                 ts, cfg: SdeConfig, r: float = 0.0, order: int = 8, ns: int = 8,
                                 n_tau: int = 12) -> HeatContentCurve:
    """MC version: u estimated at quadrature nodes (coarse rules by default)."""
    if phi is not None:
        phi.check_support(dom)
    v, s = boundary_functional(dom, functional, phi, ts, mc_provider(m, dom, cfg), r, order, ns, n_tau, panels=1)
    kind = {"G": "G", "Lambda": "Lambda"}.get(functional, "I")
    return HeatContentCurve(kind, ts, v, s, cfg.n_paths, "mc",
                            meta={"functional": functional, "r": r, "domain": dom.name})


def estimate_inside_outside(m: ModelSpace, dom: DomainSpec, phi: WeightSpec, ts, cfg: SdeConfig):
    """I phi - I^c phi from the same paths: Z E[sign(phi) (1_Omega(x0) - 1_Omega(X_t))]."""
    sampler = _weight_sampler(dom, phi, both_sides=True)
    nb_, per = _batches(cfg)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    vals = np.empty((nb_, len(ts)))
    for b in range(nb_):
        rng = _batch_rng(cfg, b, 2)
        x0 = _starts(sampler, rng, per, cfg.antithetic)
        ins, _, _ = run_paths(m, x0, ts, cfg, dom, first_pair=b * per)
        start_in = dom.contains(x0)
        d = start_in[:, None].astype(float) - ins
        vals[b] = sampler.mass * np.mean(sampler.sign(x0)[:, None] * d, axis=0)
    mean, cov = _combine(vals)
    return HeatContentCurve("I", ts, mean, np.sqrt(np.diag(cov)), nb_ * per, "mc", cov=cov,
                            meta={"functional": "IminusIc", "domain": dom.name})


def set_threads(n: Optional[int]):
    if n:
        nb.set_num_threads(max(1, min(int(n), nb.config.NUMBA_NUM_THREADS)))
