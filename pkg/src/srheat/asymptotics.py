"""Fitting sqrt(t)-power expansions and the Duhamel residual checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .curves import HeatContentCurve
from .domains import DomainSpec, WeightSpec, coeff_a
from .mc import SdeConfig, boundary_functional, estimate_inside_outside, exact_provider, mc_provider
from .models import ModelSpace

FULL_BASIS = (0.0, 0.5, 1.0, 1.5, 2.0)
DEFAULT_WINDOW = (2.5e-4, 4e-3)
COND_LIMIT = 1e12


class FitError(ValueError):
    pass


@dataclass
class AsymptoticFit:
    exponents: np.ndarray
    coeffs: np.ndarray
    cov: np.ndarray
    window: tuple
    n_points: int
    pinned: np.ndarray  # bool mask: coefficient held fixed
    max_std_resid: float
    tail_slope: float
    cond: float
    weighted: bool
    meta: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def coefficient(self, e: float) -> float:
        return float(self.coeffs[self._index(e)])

    def coefficient_stderr(self, e: float) -> float:
        return float(self.stderr[self._index(e)])

    def _index(self, e):
        hit = np.nonzero(np.isclose(self.exponents, e))[0]
        if len(hit) == 0:
            raise KeyError(f"exponent {e} not in basis")
        return int(hit[0])

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.power.outer(t, self.exponents) @ self.coeffs

    def records(self) -> list:
        out = [f"window={self.window[0]:.6g},{self.window[1]:.6g}", f"points={self.n_points}",
               f"cond={self.cond:.3e}", f"max_std_resid={self.max_std_resid:.4g}",
               f"tail_slope={self.tail_slope:.4g}"]
        for e, c, s, p in zip(self.exponents, self.coeffs, self.stderr, self.pinned):
            out.append(f"c[{e:g}]={c:.10g} stderr={s:.3e}" + (" pinned" if p else ""))
        return out

    def to_dict(self) -> dict:
        return {"exponents": self.exponents.tolist(), "coeffs": self.coeffs.tolist(),
                "stderr": self.stderr.tolist(), "pinned": self.pinned.tolist(), "window": list(self.window),
                "n_points": self.n_points, "cond": self.cond, "max_std_resid": self.max_std_resid,
                "tail_slope": self.tail_slope, "weighted": self.weighted}


def _slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def fit_sqrt_t(curve: HeatContentCurve, exponents: Sequence[float] = FULL_BASIS,
               window: Optional[tuple] = None, pin_c0: Optional[float] = None) -> AsymptoticFit:
    """Weighted least squares of curve.value in the basis {t^e}.

    pin_c0 holds the t^0 coefficient at the given value (the basis must
    contain 0).  Deterministic curves (all stderr zero) get unit weights and
    a residual-scaled covariance; noisy curves use 1/stderr^2 weights and,
    when the curve carries a full covariance, a sandwich estimate.
    """
    ex = np.asarray(sorted(float(e) for e in exponents))
    if len(ex) == 0 or len(set(ex)) != len(ex):
        raise FitError("basis exponents must be distinct and nonempty")
    if np.any(~np.isin(ex, FULL_BASIS)):
        raise FitError(f"exponents must come from {FULL_BASIS}")
    lo, hi = window if window is not None else (curve.t[0], curve.t[-1])
    sel = (curve.t >= lo * (1 - 1e-12)) & (curve.t <= hi * (1 + 1e-12))
    t, y, s = curve.t[sel], curve.value[sel].copy(), curve.stderr[sel]
    pinned = np.zeros(len(ex), dtype=bool)
    coeffs = np.zeros(len(ex))
    if pin_c0 is not None:
        if 0.0 not in ex:
            raise FitError("pinning c0 needs exponent 0 in the basis")
        pinned[ex == 0.0] = True
        coeffs[ex == 0.0] = pin_c0
        y = y - pin_c0
    free = ~pinned
    p = int(free.sum())
    if len(t) < 2 * p:
        raise FitError(f"{len(t)} points in window for {p} free coefficients; need at least {2 * p}")
    weighted = bool(np.all(s > 0))
    if not weighted and np.any(s > 0):
        raise FitError("mixed zero and nonzero stderr on the curve")
    X = np.power.outer(t, ex[free])
    w = 1.0 / s if weighted else np.ones(len(t))
    Xw, yw = X * w[:, None], y * w
    scale = np.linalg.norm(Xw, axis=0)
    cond = float(np.linalg.cond(Xw / scale))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise FitError(f"ill-conditioned design (cond {cond:.2e}); use a narrower basis or a wider t-window")
    beta_s, *_ = np.linalg.lstsq(Xw / scale, yw, rcond=None)
    beta = beta_s / scale
    resid = y - X @ beta
    bread = np.linalg.inv((Xw / scale).T @ (Xw / scale)) / np.outer(scale, scale)
    if weighted:
        if curve.cov is not None:
            C = curve.cov[np.ix_(sel, sel)]
            A = bread @ (X * (w ** 2)[:, None]).T
            cov_free = A @ C @ A.T
        else:
            cov_free = bread
        std_resid = resid / s
    else:
        dof = len(t) - p
        sig2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov_free = bread * sig2
        std_resid = resid / math.sqrt(sig2) if sig2 > 0 else np.zeros_like(resid)
    coeffs[free] = beta
    cov = np.zeros((len(ex), len(ex)))
    cov[np.ix_(free, free)] = 0.5 * (cov_free + cov_free.T)
    # leading behaviour of y - c0 on the small-t end
    c0 = coeffs[ex == 0.0][0] if 0.0 in ex else 0.0
    k = max(3, len(t) // 3)
    tail = _slope(t[:k], curve.value[sel][:k] - c0)
    return AsymptoticFit(ex, coeffs, cov, (float(t[0]), float(t[-1])), len(t), pinned,
                         float(np.max(np.abs(std_resid))), tail, cond, weighted,
                         meta={"kind": curve.kind, "backend": curve.backend})


# ---------------------------------------------------------------------------
# comparison

@dataclass
class CoefficientCheck:
    exponent: float
    predicted: float
    fitted: float
    stderr: float
    z: float
    rel: float
    mode: str
    threshold: float
    passed: bool


@dataclass
class ComparisonReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def records(self) -> list:
        out = []
        for c in self.checks:
            out.append(f"c[{c.exponent:g}] predicted={c.predicted:.10g} fitted={c.fitted:.10g} "
                       f"stderr={c.stderr:.3e} z={c.z:.3f} rel={c.rel:.3e} mode={c.mode} "
                       f"threshold={c.threshold:g} verdict={'pass' if c.passed else 'fail'}")
        out.append(f"verdict={'pass' if self.passed else 'fail'}")
        return out

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [dict(c.__dict__) for c in self.checks]}


def compare(fit: AsymptoticFit, predicted, mode: Optional[str] = None, z_max: float = 3.0,
            rel_max: float = 1e-3, which: Optional[Sequence[float]] = None) -> ComparisonReport:
    """Compare fitted coefficients with predictions listed for fit.exponents.

    mode "z" uses (fitted - predicted) / stderr, mode "rel" the relative error
    (absolute when the prediction is zero).  Default: "z" for weighted
    (noisy) fits, "rel" for deterministic ones.  Pinned coefficients and
    exponents not in `which` are skipped.
    """
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != fit.coeffs.shape:
        raise FitError(f"expected {len(fit.coeffs)} predictions, got {predicted.shape}")
    mode = mode or ("z" if fit.weighted else "rel")
    if mode not in ("z", "rel"):
        raise FitError(f"unknown comparison mode {mode!r}")
    checks = []
    for i, e in enumerate(fit.exponents):
        if fit.pinned[i] or (which is not None and not np.any(np.isclose(which, e))):
            continue
        f, p, s = float(fit.coeffs[i]), float(predicted[i]), float(fit.stderr[i])
        z = (f - p) / s if s > 0 else (0.0 if f == p else math.copysign(math.inf, f - p))
        rel = abs(f - p) / abs(p) if p != 0 else abs(f - p)
        if mode == "z":
            ok, thr = abs(z) <= z_max, z_max
        else:
            ok, thr = rel <= rel_max, rel_max
        checks.append(CoefficientCheck(float(e), p, f, s, z, rel, mode, thr, bool(ok)))
    return ComparisonReport(checks)


# ---------------------------------------------------------------------------
# Duhamel and inside/outside residuals

def decay_exponent(ts, residuals) -> float:
    """Least-squares slope of log|residual| against log t."""
    return _slope(ts, residuals)


def _provider(m, dom, backend, cfg):
    if backend == "exact":
        return exact_provider(dom)
    if backend == "mc":
        return mc_provider(m, dom, cfg or SdeConfig())
    raise FitError(f"unknown backend {backend!r}")


def duhamel_sides(m: ModelSpace, dom: DomainSpec, phi: Optional[WeightSpec], ts, backend: str = "exact",
                  cfg: Optional[SdeConfig] = None, order: int = 64, ns: int = 64, n_tau: int = 48):
    """(LHS, RHS) on a t-grid: I phi(t, 0) and the single-layer integral

    (1/sqrt(pi)) int_0^t int (1 - u) phi dsigma (t - tau)^(-1/2) dtau.
    """
    if dom.model.name != m.name:
        raise FitError(f"domain {dom.name} lives on {dom.model.name}, not {m.name}")
    u = _provider(m, dom, backend, cfg)

    def one_minus(taus, pts):
        v, s = u(taus, pts)
        return 1.0 - v, s

    lhs, _ = boundary_functional(dom, "I", phi, ts, u, 0.0, order, ns, n_tau)
    g, _ = boundary_functional(dom, "G", phi, ts, one_minus, 0.0, order, ns, n_tau)
    return lhs, 2.0 * g


def duhamel_first_order_residual(m: ModelSpace, dom: DomainSpec, phi: Optional[WeightSpec], t,
                                 backend: str = "exact", cfg: Optional[SdeConfig] = None, **quad):
    """|LHS - RHS| of the first-order Duhamel identity (scalar or array in t)."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    lhs, rhs = duhamel_sides(m, dom, phi, ts, backend, cfg, **quad)
    r = np.abs(lhs - rhs)
    return float(r[0]) if np.ndim(t) == 0 else r


@dataclass
class InsideOutsideReport:
    t: np.ndarray
    diff: np.ndarray  # I phi - I^c phi
    stderr: np.ndarray
    a: tuple  # (a1, a2)
    predicted: np.ndarray  # a1 t + a2 t^2 / 2
    residual: np.ndarray
    exponent: float
    backend: str

    def below_noise(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.diff) <= k * self.stderr))

    def records(self) -> list:
        out = [f"a1={self.a[0]:.10g}", f"a2={self.a[1]:.10g}", f"exponent={self.exponent:.4g}",
               f"backend={self.backend}"]
        for row in zip(self.t, self.diff, self.stderr, self.residual):
            out.append("t={:.6g} diff={:.6e} stderr={:.3e} residual={:.3e}".format(*row))
        return out


def inside_outside_check(m: ModelSpace, dom: DomainSpec, phi: WeightSpec, ts, backend: str = "exact",
                         cfg: Optional[SdeConfig] = None, order: int = 64, ns: int = 64) -> InsideOutsideReport:
    """I phi - I^c phi on a ladder, minus a1 t + a2 t^2 / 2 from coeff_a."""
    if dom.model.name != m.name:
        raise FitError(f"domain {dom.name} lives on {dom.model.name}, not {m.name}")
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if backend == "exact":
        d, s = boundary_functional(dom, "IminusIc", phi, ts, exact_provider(dom), 0.0, order, ns)
    elif backend == "mc":
        c = estimate_inside_outside(m, dom, phi, ts, cfg or SdeConfig())
        d, s = c.value, c.stderr
    else:
        raise FitError(f"unknown backend {backend!r}")
    a1, a2 = coeff_a(dom, phi, 1, order), coeff_a(dom, phi, 2, order)
    pred = a1 * ts + 0.5 * a2 * ts ** 2
    res = d - pred
    return InsideOutsideReport(ts, d, s, (a1, a2), pred, res, decay_exponent(ts, res), backend)
