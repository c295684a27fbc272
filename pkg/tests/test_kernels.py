import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import erfc

from srheat import kernels as K
from srheat import models as M
from srheat import domains as D
from srheat.quadrature import gauss_legendre

E1 = M.get_model("euclid1")
E2 = M.get_model("euclid2")
HEIS = M.get_model("heisenberg")


def test_euclid1_normalization():
    assert K.heat_kernel(E1, 0.25, [0.0], [0.0]) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)


def test_euclid2_mass():
    x, w = gauss_legendre(-3.0, 3.0, 80)
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    p = K.heat_kernel(E2, 0.1, np.array([0.1, -0.2]), pts)
    assert abs(np.sum(np.outer(w, w).ravel() * p) - 1) < 1e-9


def test_bad_time_and_model():
    with pytest.raises(K.KernelError):
        K.heat_kernel(E1, 0.0, [0.0], [0.0])
    with pytest.raises(K.KernelError):
        K.heat_kernel(M.get_model("grushin"), 1.0, [0.0, 0.0], [0.0, 0.0])


def test_chapman_kolmogorov_euclid1():
    z, w = gauss_legendre(-6.0, 6.0, 200)
    t, s, x, y = 0.2, 0.3, 0.1, -0.4
    lhs = np.sum(w * K.heat_kernel(E1, t, [x], z[:, None]) * K.heat_kernel(E1, s, z[:, None], [y]))
    assert lhs == pytest.approx(float(K.heat_kernel(E1, t + s, [x], [y])), abs=1e-9)


@pytest.mark.parametrize("t,r2,z", [(1.0, 0.0, 0.0), (0.5, 0.3, 0.2), (0.1, 0.05, -0.4), (2.0, 4.0, 1.5)])
def test_heis_kernel_matches_quadpack(t, r2, z):
    a = float(K.heis_kernel_origin(t, r2, z))
    b = K.heis_kernel_origin_quad(t, r2, z)
    assert a == pytest.approx(b, rel=1e-8)


def test_heis_kernel_positive_and_symmetric():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(50, 3)) * 0.5
    y = rng.normal(size=(50, 3)) * 0.5
    pxy = K.heat_kernel(HEIS, 0.3, x, y)
    pyx = K.heat_kernel(HEIS, 0.3, y, x)
    assert np.all(pxy > 0)
    np.testing.assert_allclose(pxy, pyx, rtol=1e-8)


@pytest.mark.parametrize("eps", [0.5, 2.0])
def test_heis_homogeneity(eps):
    rng = np.random.default_rng(11)
    for _ in range(10):
        t = rng.uniform(0.2, 1.0)
        z, zp = rng.normal(size=3) * 0.5, rng.normal(size=3) * 0.5
        lhs = eps ** 4 * K.heat_kernel(HEIS, eps ** 2 * t, M.dilate(HEIS, eps, z), M.dilate(HEIS, eps, zp))
        assert lhs == pytest.approx(float(K.heat_kernel(HEIS, t, z, zp)), rel=1e-6)


def test_heis_mass():
    assert K.heis_mass(0.5) == pytest.approx(1.0, abs=1e-4)


def test_halfspace_euclid():
    assert K.halfspace_temperature(E2, 0.37, np.array([0.0, 5.0])) == 0.5
    assert K.halfspace_temperature(E1, 0.01, np.array([0.2])) == pytest.approx(0.5 * erfc(-1), rel=1e-14)
    assert 0.5 * erfc(-1) == pytest.approx(0.921350, abs=1e-6)
    assert K.halfspace_temperature(E1, 0.01, np.array([50.0])) == 1.0


def test_halfspace_heisenberg_quadrature_agrees():
    q = np.array([0.1, 0.3, -0.1])
    exact = K.halfspace_temperature(HEIS, 0.05, q)
    quad = K.halfspace_temperature(HEIS, 0.05, q, method="quadrature")
    assert quad == pytest.approx(exact, abs=1e-4)


def test_halfspace_unsupported():
    with pytest.raises(K.KernelError):
        K.halfspace_temperature(M.get_model("grushin"), 0.1, np.array([0.1, 0.0]))


def test_halfspace_maximum_principle():
    xs = np.linspace(-3, 3, 101)[:, None]
    u = K.halfspace_temperature(E1, 0.2, xs)
    assert np.all((u >= 0) & (u <= 1))


def test_neumann_kernel():
    assert K.neumann_halfline_kernel(1.0, 0.0, 0.0) == pytest.approx(1 / math.sqrt(math.pi))
    h = 1e-6
    d = (K.neumann_halfline_kernel(1.0, h, 0.4) - K.neumann_halfline_kernel(1.0, -h, 0.4)) / (2 * h)
    assert abs(d) < 1e-8
    total = integrate.quad(lambda s: K.neumann_halfline_kernel(0.3, 0.7, s), 0, np.inf, epsabs=1e-13)[0]
    assert abs(total - 1) < 1e-9


def test_exact_profiles_against_closed_forms():
    # interval at a point 0.2 from the left end, small t: essentially a half-line
    u = K.interval_u(0.01, 0.2, 0.0, 1.0)
    assert u == pytest.approx(0.5 * erfc(-1) - 0.5 * erfc(0.8 / 0.2), rel=1e-12)
    assert K.interval_deficit_u(0.01, 0.2, 0.0, 1.0) == pytest.approx(1 - u, rel=1e-10)
    # disc: u at the boundary tends to 1/2 with the curvature correction of order sqrt(t)
    assert K.disc_u(1e-6, 1.0) == pytest.approx(0.5, abs=1e-3)
    # ball centre: closed form equals the radial formula near the centre
    assert float(K.ball_u(0.1, 1e-9)) == pytest.approx(float(K.ball_u(0.1, 1e-5)), abs=1e-8)


def test_exact_deficit_interval_equals_quadrature():
    dom = D.interval(-1.0, 1.0)
    t = 0.01
    quad = integrate.quad(lambda x: K.interval_deficit_u(t, x, -1.0, 1.0), -1, 1, epsabs=1e-14)[0]
    assert K.exact_deficit(dom, t) == pytest.approx(quad, rel=1e-10)


def test_exact_deficit_disc_vs_radial_quadrature():
    dom = D.disc()
    t = 1e-3
    f = lambda r: 2 * math.pi * r * (1 - K.disc_u(t, r)[0])
    quad = integrate.quad(f, 0.6, 1.0, epsabs=1e-13, limit=200)[0]
    assert K.exact_deficit(dom, t) == pytest.approx(quad, rel=1e-8)


def test_exact_curve_kinds():
    dom = D.disc()
    ts = [1e-4, 1e-3]
    H = K.exact_curve(dom, ts, "H")
    Kc = K.exact_curve(dom, ts, "K")
    np.testing.assert_allclose(H.value + Kc.value, math.pi, rtol=1e-14)
    with pytest.raises(K.KernelError):
        K.exact_curve(dom, ts, "Q")
