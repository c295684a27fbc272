"""Sub-Riemannian model spaces and the operators grad, sub-Laplacian and N.

A model is a polynomial generating frame X_1..X_N on R^n together with a
smooth positive density (Lebesgue by default).  All operators are built on
jets, so derivatives are exact up to floating point.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable, Optional

import numpy as np

from . import jets as J
from .jets import Jet, JetError, ScalarField


class ModelError(ValueError):
    pass


FrameFn = Callable[[list], list]


@dataclass(frozen=True)
class ModelSpace:
    name: str
    dim: int
    frame_fn: FrameFn  # coordinate jets -> list of N component lists
    n_fields: int
    weights: tuple
    carnot: bool
    density: Optional[ScalarField] = None  # None means Lebesgue
    singular_tol: float = 0.0
    singular_axis: Optional[int] = None  # coordinate whose zero set is singular
    # constant frame coefficients (Euclidean): MC may merge steps
    constant_frame: bool = False
    params: dict = dfield(default_factory=dict)

    @property
    def Q(self) -> int:
        return int(sum(self.weights))

    def frame(self, x, order: int) -> list:
        """Frame components as jets: out[i][j] is the j-th coordinate of X_i."""
        z = J.variables(x, order)
        raw = self.frame_fn(z)
        out = []
        for comp in raw:
            out.append([c if isinstance(c, Jet) else Jet.constant(z[0].center, c, order) for c in comp])
        return out

    def frame_values(self, x) -> np.ndarray:
        fr = self.frame(x, 0)
        return np.stack([np.stack([c.value for c in comp], axis=-1) for comp in fr], axis=-2)

    def is_singular(self, x) -> np.ndarray:
        if self.singular_axis is None:
            return np.zeros(np.shape(x)[:-1], dtype=bool)
        return np.abs(np.asarray(x)[..., self.singular_axis]) < self.singular_tol


# ---------------------------------------------------------------------------
# jet-level operators (used everywhere else)

def apply_field(m: ModelSpace, i: int, f: Jet, frame=None) -> Jet:
    if frame is None:
        frame = m.frame(f.center, max(f.order - 1, 0))
    return J.directional_derivative(frame[i], f)


def divergences(m: ModelSpace, x, order: int) -> list:
    """div X_i with respect to the model measure, as jets of the given order."""
    fr = m.frame(x, order + 1)
    out = []
    logrho = J.log(m.density(x, order + 1)) if m.density is not None else None
    for i, comp in enumerate(fr):
        d = None
        for j, c in enumerate(comp):
            term = c.partial(j)
            d = term if d is None else d + term
        if logrho is not None:
            d = d + J.directional_derivative(comp, logrho)
        out.append(d)
    return out


def grad_pair(m: ModelSpace, f: Jet, g: Jet) -> Jet:
    """g(grad f, grad g) = sum_i X_i f X_i g."""
    k = min(f.order, g.order)
    fr = m.frame(f.center, max(k - 1, 0))
    out = None
    for i in range(m.n_fields):
        t = apply_field(m, i, f.truncate(k), fr) * apply_field(m, i, g.truncate(k), fr)
        out = t if out is None else out + t
    return out


def lap_jet(m: ModelSpace, f: Jet) -> Jet:
    """Sub-Laplacian of a jet: sum X_i^2 f + (div X_i) X_i f, two orders lower."""
    if f.order < 2:
        raise JetError("sub-Laplacian needs a jet of order >= 2")
    fr = m.frame(f.center, f.order - 1)
    divs = divergences(m, f.center, f.order - 2)
    out = None
    for i in range(m.n_fields):
        xf = apply_field(m, i, f, fr)
        t = apply_field(m, i, xf, fr) + divs[i] * xf.truncate(f.order - 2)
        out = t if out is None else out + t
    return out


def n_jet(m: ModelSpace, phi: Jet, delta: Jet) -> Jet:
    """N phi = 2 g(grad phi, grad delta) + phi * Lap delta."""
    if delta.order < phi.order + 1:
        raise JetError("delta jet order must exceed phi order by one")
    d = delta.truncate(phi.order + 1)
    return 2.0 * grad_pair(m, phi, d) + phi * lap_jet(m, d)


# ---------------------------------------------------------------------------
# public operations

@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    components: np.ndarray  # coordinate components
    coeffs: np.ndarray  # horizontal coefficients u_i

    @property
    def norm(self):
        return np.sqrt(np.sum(self.coeffs ** 2, axis=-1))


def _as_jet(f, x, order) -> Jet:
    if isinstance(f, Jet):
        if f.order < order:
            raise JetError(f"jet order {f.order} < required {order}")
        return f.truncate(order)
    return f(x, order)


def horizontal_gradient(m: ModelSpace, f, x) -> TangentVector:
    x = np.asarray(x, dtype=float)
    fj = _as_jet(f, x, 1)
    fr = m.frame(x, 0)
    u = np.stack([apply_field(m, i, fj, fr).value for i in range(m.n_fields)], axis=-1)
    X = m.frame_values(x)
    comps = np.einsum("...i,...ij->...j", u, X)
    return TangentVector(x, comps, u)


def horizontal_lift(m: ModelSpace, x, v) -> TangentVector:
    """Minimal-norm frame coefficients of a coordinate vector v at x."""
    x = np.asarray(x, dtype=float)
    if np.any(m.is_singular(x)):
        raise ModelError(f"{m.name}: refusing evaluation on the singular set at {x}")
    X = m.frame_values(x)
    u, *_ = np.linalg.lstsq(X.T, np.asarray(v, dtype=float), rcond=None)
    if not np.allclose(X.T @ u, v, atol=1e-10):
        raise ModelError("vector is not horizontal at this point")
    return TangentVector(x, np.asarray(v, dtype=float), u)


def sublaplacian(m: ModelSpace, f, x, k: int = 1) -> float:
    if k < 1:
        raise ModelError("k must be >= 1")
    if 2 * k > J.MAX_ORDER:
        raise JetError(f"Lap^{k} needs jet order {2 * k} > {J.MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    g = _as_jet(f, x, 2 * k)
    for _ in range(k):
        g = lap_jet(m, g)
    return g.value


def operator_N(m: ModelSpace, dom, phi, x, power: int = 1):
    if power not in (1, 2, 3):
        raise ModelError("power must be 1, 2 or 3")
    x = np.asarray(x, dtype=float)
    if not np.all(dom.in_band(x)):
        raise ModelError("point outside the tubular band of the domain")
    g = _as_jet(phi, x, power)
    delta = dom.delta(x, power + 1)
    for p in range(power):
        g = n_jet(m, g, delta.truncate(g.order + 1))
    return g.value


def dilate(m: ModelSpace, eps: float, z):
    if not m.carnot:
        raise ModelError(f"{m.name} has no dilations")
    if eps == 0:
        raise ModelError("dilation factor must be nonzero")
    z = np.asarray(z, dtype=float)
    return z * np.array([eps ** w for w in m.weights])


# ---------------------------------------------------------------------------
# built-ins

def euclid(n: int) -> ModelSpace:
    def frame_fn(z):
        return [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    return ModelSpace(f"euclid{n}", n, frame_fn, n, (1,) * n, True, constant_frame=True)


def heisenberg() -> ModelSpace:
    def frame_fn(z):
        x, y, _ = z
        return [[1.0, 0.0, -0.5 * y], [0.0, 1.0, 0.5 * x]]

    return ModelSpace("heisenberg", 3, frame_fn, 2, (1, 1, 2), True)


def grushin() -> ModelSpace:
    def frame_fn(z):
        x, _ = z
        return [[1.0, 0.0], [0.0, x]]

    return ModelSpace("grushin", 2, frame_fn, 2, (1, 2), False, singular_tol=1e-9, singular_axis=0)


MODELS = {
    "euclid1": lambda: euclid(1),
    "euclid2": lambda: euclid(2),
    "euclid3": lambda: euclid(3),
    "heisenberg": heisenberg,
    "grushin": grushin,
}


def get_model(name: str) -> ModelSpace:
    try:
        return MODELS[name.lower()]()
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
