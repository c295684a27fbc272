"""Domains: signed distance, boundary quadrature, coefficient predictions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import jets as J
from . import models as M
from .jets import Jet, ScalarField
from .models import ModelSpace
from .quadrature import gauss_legendre, tensor

SQPI = math.sqrt(math.pi)


class DomainError(ValueError):
    pass


class CharacteristicError(DomainError):
    pass


@dataclass(frozen=True)
class Face:
    """A boundary piece: parameter box -> coordinates (as jets)."""

    param_map: Callable[[list], list]
    box: tuple  # ((lo, hi), ...) ; empty for a single point

    @property
    def pdim(self) -> int:
        return len(self.box)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    model: ModelSpace
    level_fn: ScalarField
    delta: Optional[ScalarField]
    volume: float
    tubular_radius: float
    faces: tuple
    kind: str  # "box" or "ball" (membership test used by the simulators)
    lo: np.ndarray = None
    hi: np.ndarray = None
    radius: float = 0.0
    delta_max: float = 0.0
    tube_jac: Callable[[np.ndarray], np.ndarray] = lambda s: np.ones_like(s)
    params: dict = dfield(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.kind == "ball":
            return np.sum(pts ** 2, axis=-1) < self.radius ** 2
        return np.all((pts > self.lo) & (pts < self.hi), axis=-1)

    def delta_values(self, pts) -> np.ndarray:
        if self.delta is None:
            raise DomainError(f"{self.name}: no signed distance available")
        return self.delta(pts, 0).value

    def in_band(self, pts) -> np.ndarray:
        return np.abs(self.delta_values(pts)) < self.tubular_radius

    # -- boundary nodes -------------------------------------------------------
    def face_nodes(self, face: Face, order: int, jet_order: int = 1, grid: str = "gl"):
        if face.pdim == 0:
            u = np.zeros((1, 0))
            w = np.ones(1)
        else:
            if grid == "gl":
                rules = [gauss_legendre(lo, hi, order) for lo, hi in face.box]
            else:
                rules = [(np.linspace(lo, hi, order), np.ones(order)) for lo, hi in face.box]
            u, w = tensor(rules)
        if face.pdim == 0:
            pts = np.array([[float(c) for c in face.param_map([])]])
            return pts, w, None
        uj = J.variables(u, jet_order)
        comps = face.param_map(uj)
        comps = [c if isinstance(c, Jet) else Jet.constant(u, c, jet_order) for c in comps]
        pts = np.stack([c.value for c in comps], axis=-1)
        return pts, w, comps

    def boundary_nodes(self, order: int = 64):
        """Points, Euclidean area weights and inward unit normals."""
        P, W = [], []
        for face in self.faces:
            pts, w, comps = self.face_nodes(face, order)
            if comps is not None:
                jac = np.stack([np.stack([c.d(*np.eye(face.pdim, dtype=int)[a]) for a in range(face.pdim)], -1)
                                for c in comps], axis=-2)  # (K, n, p)
                g = np.einsum("kia,kib->kab", jac, jac)
                w = w * np.sqrt(np.linalg.det(g))
            P.append(pts)
            W.append(w)
        pts = np.concatenate(P)
        return pts, np.concatenate(W), self.inward_normal(pts)

    def inward_normal(self, pts) -> np.ndarray:
        g = self.level_fn(pts, 1).gradient()
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def perimeter_density(self, pts) -> np.ndarray:
        """sigma density against Euclidean area: rho * |grad_H F|_g / |grad F|."""
        F = self.level_fn(pts, 1)
        hn = M.horizontal_gradient(self.model, F, pts).norm
        en = np.linalg.norm(F.gradient(), axis=-1)
        dens = hn / en
        if self.model.density is not None:
            dens = dens * self.model.density.values(pts)
        return dens

    def sigma_nodes(self, order: int = 64):
        """Boundary nodes with perimeter-measure weights; refuses characteristic nodes."""
        pts, w, _ = self.boundary_nodes(order)
        F = self.level_fn(pts, 1)
        hn = M.horizontal_gradient(self.model, F, pts).norm
        bad = hn < 1e-9
        if np.any(bad):
            raise CharacteristicError(f"{self.name}: characteristic boundary node at {pts[bad][0]}")
        return pts, w * self.perimeter_density(pts)

    # -- volume quadrature over tubes {s0 < delta < s1} -------------------------
    def tube_nodes(self, s0: float, s1: float, ns: int = 64, order: int = 64, panels: int = 1):
        ypts, yw, nin = self.boundary_nodes(order)
        edges = np.linspace(s0, s1, panels + 1)
        P, W = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            s, ws = gauss_legendre(lo, hi, ns)
            pts = ypts[:, None, :] + s[None, :, None] * nin[:, None, :]
            wt = yw[:, None] * (ws * self.tube_jac(s))[None, :]
            P.append(pts.reshape(-1, self.dim))
            W.append(wt.ravel())
        pts = np.concatenate(P)
        w = np.concatenate(W)
        if self.model.density is not None:
            w = w * self.model.density.values(pts)
        return pts, w


def _values(f, pts):
    if isinstance(f, ScalarField):
        return f(pts, 0).value
    if callable(f):
        return np.asarray(f(pts), dtype=float)
    return np.full(len(pts), float(f))


# ---------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class WeightSpec:
    chi: ScalarField
    band: float = np.inf  # |delta| bound on the support
    box_lo: Optional[np.ndarray] = None
    box_hi: Optional[np.ndarray] = None
    name: str = "chi"

    def check_support(self, dom: DomainSpec, n: int = 4000, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        lo = np.where(np.isfinite(self.box_lo), self.box_lo, -3.0) if self.box_lo is not None else -np.full(dom.dim, 3.0)
        hi = np.where(np.isfinite(self.box_hi), self.box_hi, 3.0) if self.box_hi is not None else np.full(dom.dim, 3.0)
        span = hi - lo
        pts = rng.uniform(lo - 0.5 * span, hi + 0.5 * span, size=(n, dom.dim))
        outside = np.zeros(n, dtype=bool)
        if self.box_lo is not None:
            outside |= np.any((pts < self.box_lo) | (pts > self.box_hi), axis=-1)
        if np.isfinite(self.band) and dom.delta is not None:
            outside |= np.abs(dom.delta_values(pts)) > self.band
        v = self.chi.values(pts[outside])
        if np.any(np.abs(v) >= 1e-12):
            raise DomainError(f"weight {self.name} is nonzero outside its declared support")
        if np.isfinite(self.band) and self.band >= dom.tubular_radius:
            raise DomainError(f"weight {self.name} support leaves the tubular band")


def profile_weight(dom: DomainSpec, profile: Callable[[Jet], Jet], band: float, name: str) -> WeightSpec:
    """chi = profile(delta)."""
    delta = dom.delta
    chi = ScalarField(lambda x, k: profile(delta(x, k)), name)
    return WeightSpec(chi, band=band, name=name)


def bump_weight(center, widths, name: str = "bump", factor: Optional[Callable] = None) -> WeightSpec:
    """Product of smooth bumps; optional polynomial factor(list of coordinate jets)."""
    c = np.asarray(center, dtype=float)
    w = np.asarray(widths, dtype=float)

    def fn(z):
        out = None
        for i, zi in enumerate(z):
            b = J.smooth_bump((zi - c[i]) * (1.0 / w[i]))
            out = b if out is None else out * b
        if factor is not None:
            out = out * factor(z)
        return out

    return WeightSpec(J.field(fn, name), box_lo=c - w, box_hi=c + w, name=name)


# ---------------------------------------------------------------------------
# built-in domains

def _min_delta(d1: Callable, d2: Callable):
    def ev(x, k):
        z = J.variables(x, k)
        a, b = d1(z), d2(z)
        return a.select(a.value <= b.value, b)

    return ev


def interval(a: float = 0.0, b: float = 1.0) -> DomainSpec:
    m = M.euclid(1)
    L = b - a
    F = J.field(lambda z: (z[0] - a) * (b - z[0]), "F")
    delta = ScalarField(_min_delta(lambda z: z[0] - a, lambda z: b - z[0]), "delta")
    faces = (Face(lambda u: [a], ()), Face(lambda u: [b], ()))
    return DomainSpec("interval", m, F, delta, L, 0.45 * L, faces, "box",
                      lo=np.array([a]), hi=np.array([b]), delta_max=0.5 * L, params={"a": a, "b": b})


def disc(R: float = 1.0) -> DomainSpec:
    m = M.euclid(2)
    F = J.field(lambda z: R * R - z[0] ** 2 - z[1] ** 2, "F")
    delta = J.field(lambda z: R - J.sqrt(z[0] ** 2 + z[1] ** 2), "delta")
    face = Face(lambda u: [R * J.cos(u[0]), R * J.sin(u[0])], ((0.0, 2 * math.pi),))
    return DomainSpec("disc", m, F, delta, math.pi * R * R, 0.5 * R, (face,), "ball", radius=R,
                      delta_max=R, tube_jac=lambda s: 1.0 - s / R, params={"R": R})


def _sphere_face(R):
    def pm(u):
        th, ph = u
        st = J.sin(th)
        return [R * st * J.cos(ph), R * st * J.sin(ph), R * J.cos(th)]

    return Face(pm, ((0.0, math.pi), (0.0, 2 * math.pi)))


def ball(R: float = 1.0) -> DomainSpec:
    m = M.euclid(3)
    F = J.field(lambda z: R * R - z[0] ** 2 - z[1] ** 2 - z[2] ** 2, "F")
    delta = J.field(lambda z: R - J.sqrt(z[0] ** 2 + z[1] ** 2 + z[2] ** 2), "delta")
    return DomainSpec("ball", m, F, delta, 4.0 / 3.0 * math.pi * R ** 3, 0.5 * R, (_sphere_face(R),), "ball",
                      radius=R, delta_max=R, tube_jac=lambda s: (1.0 - s / R) ** 2, params={"R": R})


def _slab(name, m: ModelSpace, a, L, patch, faces, bounded):
    b = a + L
    n = m.dim
    F = J.field(lambda z: (z[0] - a) * (b - z[0]), "F")
    delta = ScalarField(_min_delta(lambda z: z[0] - a, lambda z: b - z[0]), "delta")
    patch = tuple(tuple(map(float, p)) for p in patch)
    fl = []
    if "lower" in faces:
        fl.append(Face(lambda u: [a] + list(u), patch))
    if "upper" in faces:
        fl.append(Face(lambda u: [b] + list(u), patch))
    area = math.prod(hi - lo for lo, hi in patch)
    lo = np.array([a] + [p[0] if bounded else -np.inf for p in patch])
    hi = np.array([b] + [p[1] if bounded else np.inf for p in patch])
    return DomainSpec(name, m, F, delta, L * area, 0.45 * L, tuple(fl), "box", lo=lo, hi=hi,
                      delta_max=0.5 * L, params={"a": a, "L": L, "patch": patch, "faces": tuple(faces),
                                                  "bounded": bounded})


def heis_slab(L: float = 2.0, patch=((-1.0, 1.0), (-1.0, 1.0)), a: float = 0.0, faces=("lower",),
              bounded: bool = False) -> DomainSpec:
    return _slab("heis_slab", M.heisenberg(), a, L, patch, faces, bounded)


def grushin_strip(a: float = 0.5, L: float = 1.0, patch=((-1.0, 1.0),), faces=("lower", "upper"),
                  bounded: bool = True) -> DomainSpec:
    if a <= 0.1:
        raise DomainError("grushin strip must keep its tubular band away from |x| < 0.1; use a > 0.1")
    dom = _slab("grushin_strip", M.grushin(), a, L, patch, faces, bounded)
    rho = min(dom.tubular_radius, a - 0.1)
    return replace(dom, tubular_radius=rho)


def heis_ball(R: float = 1.0) -> DomainSpec:
    """Euclidean ball in the Heisenberg group (has characteristic points)."""
    m = M.heisenberg()
    F = J.field(lambda z: R * R - z[0] ** 2 - z[1] ** 2 - z[2] ** 2, "F")
    return DomainSpec("heis_ball", m, F, None, 4.0 / 3.0 * math.pi * R ** 3, 0.0, (_sphere_face(R),), "ball",
                      radius=R, params={"R": R})


DOMAINS = {
    "interval": interval,
    "disc": disc,
    "ball": ball,
    "heis_slab": heis_slab,
    "grushin_strip": grushin_strip,
    "heis_ball": heis_ball,
}

DOMAIN_MODELS = {
    "interval": "euclid1",
    "disc": "euclid2",
    "ball": "euclid3",
    "heis_slab": "heisenberg",
    "grushin_strip": "grushin",
    "heis_ball": "heisenberg",
}


def get_domain(name: str, **params) -> DomainSpec:
    try:
        fn = DOMAINS[name]
    except KeyError:
        raise DomainError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    return fn(**params)


# ---------------------------------------------------------------------------
# operations

def boundary_integral(dom: DomainSpec, f, order: int = 64) -> float:
    pts, w = dom.sigma_nodes(order)
    return float(np.sum(w * _values(f, pts)))


@dataclass
class CharReport:
    min_norm: float
    offending: np.ndarray
    threshold: float = 1e-6

    @property
    def characteristic(self) -> bool:
        return len(self.offending) > 0


def detect_characteristic(dom: DomainSpec, order: int = 64, threshold: float = 1e-6) -> CharReport:
    """Scan quadrature nodes plus an endpoint-inclusive grid of each face."""
    P = []
    for face in dom.faces:
        P.append(dom.face_nodes(face, order, 0)[0])
        if face.pdim:
            P.append(dom.face_nodes(face, order + 1, 0, grid="lin")[0])
    pts = np.concatenate(P)
    F = dom.level_fn(pts, 1)
    ratio = M.horizontal_gradient(dom.model, F, pts).norm / np.linalg.norm(F.gradient(), axis=-1)
    bad = ratio <= threshold
    off = pts[bad]
    if len(off):
        off = np.unique(np.round(off, 12), axis=0)
    return CharReport(float(ratio.min()), off, threshold)


def _require_noncharacteristic(dom: DomainSpec):
    rep = detect_characteristic(dom)
    if rep.characteristic:
        raise CharacteristicError(f"{dom.name}: characteristic points at {rep.offending.tolist()}")
    if dom.delta is None:
        raise CharacteristicError(f"{dom.name}: no signed distance available")


def _chi_jet(weight: Optional[WeightSpec], pts, order):
    if weight is None:
        return Jet.constant(pts, 1.0, order)
    return weight.chi(pts, order)


def predict_coefficients(dom: DomainSpec, weight: Optional[WeightSpec] = None, order: int = 64) -> np.ndarray:
    """Coefficients c0..c4 of H^chi(t) ~ sum c_k t^(k/2)."""
    _require_noncharacteristic(dom)
    m = dom.model
    pts, w = dom.sigma_nodes(order)
    delta = dom.delta(pts, 4)
    chi = _chi_jet(weight, pts, 3)
    lap_delta = M.lap_jet(m, delta)  # order 2
    n1 = M.n_jet(m, chi, delta)  # order 2
    n2 = M.n_jet(m, n1, delta.truncate(3))  # order 1
    lap_chi = M.lap_jet(m, chi)  # order 1
    g1 = M.grad_pair(m, chi.truncate(1), delta.truncate(1)).value
    g3 = M.grad_pair(m, lap_chi, delta.truncate(1)).value

    if weight is None:
        c0 = dom.volume
    else:
        c0 = volume_integral(dom, weight.chi, 0.0, min(weight.band, dom.delta_max) if np.isfinite(weight.band)
                             else dom.delta_max, panels=4)
    c1 = -np.sum(w * chi.value) / SQPI
    c2 = -0.5 * np.sum(w * g1)
    c3 = (-np.sum(w * (4.0 * lap_chi.value + n2.value)) / (12 * SQPI)
          + np.sum(w * n1.value * lap_delta.value) / (6 * SQPI))
    c4 = -0.25 * np.sum(w * g3)
    return np.array([c0, c1, c2, c3, c4])


def principal_curvatures(dom: DomainSpec, order: int = 64):
    """Principal curvatures and Euclidean area weights at boundary nodes."""
    K, W = [], []
    for face in dom.faces:
        if face.pdim == 0:
            continue
        pts, w, comps = dom.face_nodes(face, order, jet_order=2)
        p = face.pdim
        e = np.eye(p, dtype=int)
        jac = np.stack([np.stack([c.d(*e[a]) for a in range(p)], -1) for c in comps], axis=-2)
        hess = np.stack([np.stack([np.stack([c.d(*(e[a] + e[b])) for b in range(p)], -1) for a in range(p)], -2)
                         for c in comps], axis=-3)  # (K, n, p, p)
        nrm = dom.inward_normal(pts)
        g = np.einsum("kia,kib->kab", jac, jac)
        II = np.einsum("kiab,ki->kab", hess, nrm)
        shape = np.linalg.solve(g, II)
        K.append(np.sort(np.linalg.eigvals(shape).real, axis=-1))
        W.append(w * np.sqrt(np.linalg.det(g)))
    if not K:
        return np.zeros((0, 0)), np.zeros(0)
    return np.concatenate(K), np.concatenate(W)


def euclidean_curvature_coefficient(dom: DomainSpec, order: int = 64) -> float:
    if not dom.model.name.startswith("euclid"):
        raise DomainError("curvature formula applies to Euclidean models only")
    n = dom.dim
    if n == 1:
        return 0.0
    kap, w = principal_curvatures(dom, order)
    H = kap.sum(axis=-1) / (n - 1)
    c = np.sum(kap ** 2, axis=-1)
    return float((n - 1) ** 2 / (12 * SQPI) * np.sum(w * (H ** 2 + 2 * c / (n - 1) ** 2)))


def coeff_a(dom: DomainSpec, phi: WeightSpec, i: int, order: int = 64) -> float:
    if i not in (1, 2):
        raise DomainError("i must be 1 or 2")
    m = dom.model
    pts, w = dom.sigma_nodes(order)
    f = _chi_jet(phi, pts, 2 * i - 1)
    for _ in range(i - 1):
        f = M.lap_jet(m, f)
    d = dom.delta(pts, 1)
    return float(np.sum(w * M.grad_pair(m, f, d).value))


def volume_integral(dom: DomainSpec, f, s0: float, s1: float, ns: int = 64, order: int = 64, panels: int = 1):
    pts, w = dom.tube_nodes(s0, s1, ns, order, panels)
    return float(np.sum(w * _values(f, pts)))


def mean_value_residual(dom: DomainSpec, v: ScalarField, r: float, h: float = 1e-3, order: int = 64) -> float:
    if r - 2 * h < 0 or r + 2 * h >= dom.tubular_radius:
        raise DomainError("r too close to the edge of the tubular band")
    m = dom.model
    top = dom.delta_max

    def F(s):
        return volume_integral(dom, v, s, top, order=order)

    d2F = (-F(r + 2 * h) + 16 * F(r + h) - 30 * F(r) + 16 * F(r - h) - F(r - 2 * h)) / (12 * h * h)
    lap_v = volume_integral(dom, lambda p: M.sublaplacian(m, v, p, 1), r, top, order=order)
    # offset surface {delta = r}
    ypts, yw, nin = dom.boundary_nodes(order)
    pts = ypts + r * nin
    dj = dom.delta(pts, 2)
    wr = yw * dom.tube_jac(np.array(r)) / np.linalg.norm(dj.gradient(), axis=-1)
    if m.density is not None:
        wr = wr * m.density.values(pts)
    surf = np.sum(wr * _values(v, pts) * (-M.lap_jet(m, dj).value))
    return float(abs(d2F - lap_v - surf))


def normal_flow(dom: DomainSpec, y, t: float, steps: int = 200):
    """Integrate dG/ds = grad delta(G) from boundary points y for time t (RK4)."""
    m = dom.model
    g = np.array(y, dtype=float)
    h = t / steps

    def vel(p):
        return M.horizontal_gradient(m, dom.delta, p).components

    for _ in range(steps):
        k1 = vel(g)
        k2 = vel(g + 0.5 * h * k1)
        k3 = vel(g + 0.5 * h * k2)
        k4 = vel(g + h * k3)
        g = g + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return g


def random_band_points(dom: DomainSpec, n: int, seed: int = 0, frac: float = 0.999):
    """Random points with |delta| < frac * rho0 (boundary node + normal offset)."""
    rng = np.random.default_rng(seed)
    P = []
    for _ in range(n):
        face = dom.faces[rng.integers(len(dom.faces))]
        u = np.array([rng.uniform(lo, hi) for lo, hi in face.box])
        if face.pdim:
            comps = face.param_map(J.variables(u[None, :], 0))
            y = np.array([c.value[0] if isinstance(c, Jet) else c for c in comps])
        else:
            y = np.array([float(c) for c in face.param_map([])])
        P.append(y)
    y = np.array(P)
    nin = dom.inward_normal(y)
    s = rng.uniform(-frac, frac, size=n) * dom.tubular_radius
    return y + s[:, None] * nin
