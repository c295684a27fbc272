"""Truncated multivariate Taylor jets.

A :class:`Jet` holds the partial derivatives of a scalar field at a point
(or at a batch of points) up to a fixed total order.  Coefficients are the
derivative values themselves, not Taylor-normalized, so that differential
operators can read them off directly.

Multi-indices are stored in graded order (all indices of degree 0, then 1,
...), which makes truncation to a lower order a prefix slice.

Batching: ``center`` has shape ``(..., n)`` and ``coeffs`` has shape
``(..., M)``; every operation acts elementwise over the leading axes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

MAX_ORDER = 6


class JetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# multi-index tables

@lru_cache(maxsize=None)
def multi_indices(n: int, order: int) -> tuple:
    """All multi-indices of length n with |alpha| <= order, graded."""
    out = []
    for deg in range(order + 1):
        # lexicographically descending inside each degree: (2,0),(1,1),(0,2)
        level = [a for a in itertools.product(range(deg, -1, -1), repeat=n) if sum(a) == deg]
        out.extend(level)
    return tuple(out)


@lru_cache(maxsize=None)
def _index_map(n: int, order: int) -> dict:
    return {a: i for i, a in enumerate(multi_indices(n, order))}


def n_coeffs(n: int, order: int) -> int:
    return math.comb(n + order, order)


def _fact(alpha) -> int:
    return math.prod(math.factorial(k) for k in alpha)


@lru_cache(maxsize=None)
def _product_table(n: int, order: int):
    """Leibniz table: (ia, ib, weight, scatter) for the truncated product."""
    idx = multi_indices(n, order)
    imap = _index_map(n, order)
    ia, ib, io, w = [], [], [], []
    for g_i, g in enumerate(idx):
        ranges = [range(k + 1) for k in g]
        for a in itertools.product(*ranges):
            b = tuple(gk - ak for gk, ak in zip(g, a))
            ia.append(imap[a])
            ib.append(imap[b])
            io.append(g_i)
            w.append(_fact(g) / (_fact(a) * _fact(b)))
    scatter = np.zeros((len(io), len(idx)))
    scatter[np.arange(len(io)), io] = 1.0
    return np.array(ia), np.array(ib), np.array(w), scatter


@lru_cache(maxsize=None)
def _shift_table(n: int, order: int, j: int) -> np.ndarray:
    """Indices in the order-`order` layout of alpha + e_j, for |alpha| <= order-1."""
    imap = _index_map(n, order)
    out = []
    for a in multi_indices(n, order - 1):
        b = list(a)
        b[j] += 1
        out.append(imap[tuple(b)])
    return np.array(out, dtype=int)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Jet:
    center: np.ndarray
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 0 <= self.order <= MAX_ORDER:
            raise JetError(f"jet order {self.order} outside [0, {MAX_ORDER}]")
        if self.coeffs.shape[-1] != n_coeffs(self.dim, self.order):
            raise JetError("coefficient array does not match (dim, order)")

    # -- constructors --------------------------------------------------------
    @classmethod
    def constant(cls, center, value, order: int) -> "Jet":
        center = np.asarray(center, dtype=float)
        m = n_coeffs(center.shape[-1], order)
        c = np.zeros(center.shape[:-1] + (m,))
        c[..., 0] = value
        return cls(center, order, c)

    @classmethod
    def variable(cls, center, i: int, order: int) -> "Jet":
        center = np.asarray(center, dtype=float)
        n = center.shape[-1]
        j = cls.constant(center, center[..., i], order)
        if order >= 1:
            e = [0] * n
            e[i] = 1
            j.coeffs[..., _index_map(n, order)[tuple(e)]] = 1.0
        return j

    # -- accessors -----------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.center.shape[-1]

    @property
    def value(self):
        return self.coeffs[..., 0]

    def d(self, *alpha):
        """Partial derivative value for multi-index alpha."""
        if len(alpha) == 1 and isinstance(alpha[0], (tuple, list)):
            alpha = tuple(alpha[0])
        if sum(alpha) > self.order:
            raise JetError(f"derivative {alpha} exceeds jet order {self.order}")
        return self.coeffs[..., _index_map(self.dim, self.order)[tuple(alpha)]]

    def gradient(self):
        n = self.dim
        return np.stack([self.d(*np.eye(n, dtype=int)[j]) for j in range(n)], axis=-1)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetError(f"cannot raise jet order {self.order} to {order}")
        return Jet(self.center, order, self.coeffs[..., : n_coeffs(self.dim, order)])

    def partial(self, j: int) -> "Jet":
        if self.order == 0:
            raise JetError("cannot differentiate an order-0 jet")
        sh = _shift_table(self.dim, self.order, j)
        return Jet(self.center, self.order - 1, self.coeffs[..., sh])

    def select(self, mask, other: "Jet") -> "Jet":
        """Pointwise choice: self where mask, else other."""
        a, b = _align(self, other)
        m = np.asarray(mask)[..., None]
        return Jet(a.center, a.order, np.where(m, a.coeffs, b.coeffs))

    # -- arithmetic ----------------------------------------------------------
    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(self.center, other, self.order)

    def __add__(self, other):
        a, b = _align(self, self._lift(other))
        return Jet(a.center, a.order, a.coeffs + b.coeffs)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.center, self.order, -self.coeffs)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.center, self.order, self.coeffs * np.asarray(other)[..., None])
        a, b = _align(self, other)
        ia, ib, w, scatter = _product_table(a.dim, a.order)
        prod = a.coeffs[..., ia] * b.coeffs[..., ib] * w
        return Jet(a.center, a.order, prod @ scatter)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)) and p >= 0:
            out = Jet.constant(self.center, 1.0, self.order)
            for _ in range(int(p)):
                out = out * self
            return out
        return power(self, p)


def _align(a: Jet, b: Jet):
    if a.dim != b.dim:
        raise JetError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.center.shape != b.center.shape or not np.allclose(a.center, b.center, rtol=0, atol=1e-13):
        raise JetError("jets have different centers")
    k = min(a.order, b.order)
    if a.order != k:
        a = a.truncate(k)
    if b.order != k:
        b = b.truncate(k)
    return a, b


def jet_add_mul(a: Jet, b: Jet):
    """Return (a + b, a * b)."""
    return a + b, a * b


def variables(center, order: int) -> list:
    center = np.asarray(center, dtype=float)
    return [Jet.variable(center, i, order) for i in range(center.shape[-1])]


# ---------------------------------------------------------------------------
# univariate composition (Faa di Bruno via powers of the zero-mean part)

def compose(derivs: np.ndarray, a: Jet) -> Jet:
    """f(a) given derivs[k] = f^(k)(a.value), k = 0..a.order."""
    h = a - a.value
    out = Jet.constant(a.center, derivs[0], a.order)
    hk = Jet.constant(a.center, 1.0, a.order)
    for k in range(1, a.order + 1):
        hk = hk * h
        out = out + hk * (derivs[k] / math.factorial(k))
    return out


def _power_derivs(x, p, order):
    out = [x ** p]
    c = 1.0
    for k in range(1, order + 1):
        c *= p - k + 1
        out.append(c * x ** (p - k) if c != 0 else np.zeros_like(x))
    return np.array(out)


def power(a: Jet, p) -> Jet:
    x = np.asarray(a.value, dtype=float)
    integral = float(p).is_integer()
    if not integral and np.any(x <= 0) and not (a.order == 0 and p > 0 and np.all(x >= 0)):
        raise JetError(f"power({p}) needs a positive value")
    if integral and p < 0 and np.any(x == 0):
        raise JetError("negative power of a zero value")
    return compose(_power_derivs(x, p, a.order), a)


def sqrt(a: Jet) -> Jet:
    x = np.asarray(a.value, dtype=float)
    if np.any(x < 0) or (a.order > 0 and np.any(x == 0)):
        raise JetError("sqrt of a jet with non-positive value")
    if a.order == 0:
        return Jet(a.center, 0, np.sqrt(a.coeffs))
    return compose(_power_derivs(x, 0.5, a.order), a)


def reciprocal(a: Jet) -> Jet:
    x = np.asarray(a.value, dtype=float)
    if np.any(x == 0):
        raise JetError("reciprocal of a jet with zero value")
    return compose(_power_derivs(x, -1.0, a.order), a)


def exp(a: Jet) -> Jet:
    e = np.exp(a.value)
    return compose(np.array([e] * (a.order + 1)), a)


def log(a: Jet) -> Jet:
    x = np.asarray(a.value, dtype=float)
    if np.any(x <= 0):
        raise JetError("log of a jet with non-positive value")
    d = [np.log(x)] + [(-1) ** (k - 1) * math.factorial(k - 1) / x ** k for k in range(1, a.order + 1)]
    return compose(np.array(d), a)


def sin(a: Jet) -> Jet:
    s, c = np.sin(a.value), np.cos(a.value)
    cyc = [s, c, -s, -c]
    return compose(np.array([cyc[k % 4] for k in range(a.order + 1)]), a)


def cos(a: Jet) -> Jet:
    s, c = np.sin(a.value), np.cos(a.value)
    cyc = [c, -s, -c, s]
    return compose(np.array([cyc[k % 4] for k in range(a.order + 1)]), a)


def erf(a: Jet) -> Jet:
    from scipy.special import erf as _erf

    x = np.asarray(a.value, dtype=float)
    g = 2.0 / math.sqrt(math.pi) * np.exp(-x * x)
    # physicists' Hermite: d^k erf = g * (-1)^(k-1) H_{k-1}
    herm = [np.ones_like(x), 2 * x]
    for m in range(1, a.order):
        herm.append(2 * x * herm[m] - 2 * m * herm[m - 1])
    d = [_erf(x)] + [(-1) ** (k - 1) * herm[k - 1] * g for k in range(1, a.order + 1)]
    return compose(np.array(d), a)


UNIVARIATE = {
    "sqrt": sqrt,
    "reciprocal": reciprocal,
    "exp": exp,
    "log": log,
    "erf": erf,
    "sin": sin,
    "cos": cos,
}


def jet_compose_univariate(f, a: Jet) -> Jet:
    """Apply f, a name in UNIVARIATE or ("power", p)."""
    if isinstance(f, tuple) and f[0] == "power":
        return power(a, f[1])
    if isinstance(f, str) and f.startswith("power"):
        return power(a, float(f[len("power("):-1]))
    try:
        fn = UNIVARIATE[f]
    except KeyError:
        raise JetError(f"unknown univariate function {f!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# compactly supported profiles (evaluated only where they are nonzero)

def _masked(fn, a: Jet, mask, fill: float, safe: float) -> Jet:
    mask = np.asarray(mask)
    if mask.ndim == 0 and not mask:
        return Jet.constant(a.center, fill, a.order)
    val = np.where(mask, a.value, safe)
    aa = Jet(a.center, a.order, a.coeffs.copy())
    aa.coeffs[..., 0] = val
    res = fn(aa)
    const = Jet.constant(a.center, fill, a.order)
    return res.select(mask, const)


def smooth_bump(a: Jet) -> Jet:
    """exp(1 - 1/(1 - a^2)) on |a| < 1, zero elsewhere; equals 1 at a = 0."""
    mask = np.abs(a.value) < 1 - 1e-12
    return _masked(lambda b: exp(1.0 - reciprocal(1.0 - b * b)), a, mask, 0.0, 0.0)


def smooth_step(a: Jet) -> Jet:
    """C-infinity step: 0 for a <= 0, 1 for a >= 1."""
    v = np.asarray(a.value)
    inner = (v > 1e-12) & (v < 1 - 1e-12)

    def f(b):
        g1 = exp(-reciprocal(b))
        g2 = exp(-reciprocal(1.0 - b))
        return g1 / (g1 + g2)

    out = _masked(f, a, inner, 0.0, 0.5)
    ones = Jet.constant(a.center, 1.0, a.order)
    return out.select(inner | (v <= 1e-12), ones)


def plateau(a: Jet, inner: float, outer: float) -> Jet:
    """Even cutoff: 1 for |a| <= inner, 0 for |a| >= outer."""
    s = (outer - a) * (1.0 / (outer - inner))
    left = smooth_step(s)
    s2 = (outer + a) * (1.0 / (outer - inner))
    return left * smooth_step(s2)


# ---------------------------------------------------------------------------

def directional_derivative(X: Sequence[Jet], f: Jet) -> Jet:
    """Jet of sum_j X^j d_j f, one order lower than f."""
    if f.order == 0:
        raise JetError("cannot differentiate an order-0 jet")
    if len(X) != f.dim:
        raise JetError("vector field has wrong number of components")
    out = None
    for j, xj in enumerate(X):
        if xj.order < f.order - 1:
            raise JetError("vector field jet order too low")
        term = xj * f.partial(j)
        out = term if out is None else out + term
    return out


@dataclass(frozen=True)
class ScalarField:
    evaluator: Callable[[np.ndarray, int], Jet]
    name: str = "f"

    def __call__(self, x, order: int) -> Jet:
        j = self.evaluator(np.asarray(x, dtype=float), order)
        if not isinstance(j, Jet):
            j = Jet.constant(np.asarray(x, dtype=float), j, order)
        return j

    def values(self, x) -> np.ndarray:
        return self(x, 0).value

    def _combine(self, other, op, sym):
        if isinstance(other, ScalarField):
            return ScalarField(lambda x, k: op(self(x, k), other(x, k)), f"({self.name}{sym}{other.name})")
        return ScalarField(lambda x, k: op(self(x, k), other), f"({self.name}{sym}{other})")

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b, "+")

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b, "-")

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b, "*")

    __radd__ = __add__
    __rmul__ = __mul__


def field(fn: Callable[[list], Jet], name: str = "f") -> ScalarField:
    """Wrap fn(list of coordinate jets) -> Jet as a ScalarField."""

    def ev(x, order):
        out = fn(variables(x, order))
        if not isinstance(out, Jet):
            out = Jet.constant(x, out, order)
        return out

    return ScalarField(ev, name)


def constant_field(c: float, name: str | None = None) -> ScalarField:
    return ScalarField(lambda x, k: Jet.constant(x, c, k), name or str(c))
