import math

import numpy as np
import pytest
from scipy import stats

from srheat import domains as D
from srheat import mc
from srheat import models as M
from srheat.kernels import interval_u

E1 = M.get_model("euclid1")
HEIS = M.get_model("heisenberg")


def cfg(**kw):
    base = dict(n_paths=20_000, seed=99, antithetic=False)
    base.update(kw)
    return mc.SdeConfig(**base)


def test_config_validation():
    with pytest.raises(mc.McError):
        mc.SdeConfig(n_paths=10)
    with pytest.raises(mc.McError):
        mc.SdeConfig(dt=-1.0)
    with pytest.raises(mc.McError):
        mc.SdeConfig(scheme="milstein")


def test_euclid1_variance():
    x = mc.simulate_endpoints(E1, [0.0], 1.0, 100_000, cfg(n_paths=100_000))[:, 0]
    n = len(x)
    var = x.var(ddof=1)
    se = math.sqrt((np.mean((x - x.mean()) ** 4) - var ** 2) / n)
    assert abs(var - 2.0) < 3 * se


def test_heisenberg_z_mean():
    z = mc.simulate_endpoints(HEIS, [0.0, 0.0, 0.0], 1.0, 50_000, cfg(n_paths=50_000, dt_rel=1 / 100))[:, 2]
    assert abs(z.mean()) < 3 * z.std(ddof=1) / math.sqrt(len(z))


def test_heisenberg_dilation_ks():
    n = 20_000
    a = mc.simulate_endpoints(HEIS, [0, 0, 0], 0.5, n, cfg(n_paths=n, seed=1, dt_rel=1 / 100))
    b = mc.simulate_endpoints(HEIS, [0, 0, 0], 2.0, n, cfg(n_paths=n, seed=2, dt_rel=1 / 100))
    b = M.dilate(HEIS, 0.5, b)
    thr = 1.63 * math.sqrt(2.0 / n)
    for k in range(3):
        assert stats.ks_2samp(a[:, k], b[:, k]).statistic < thr


def test_simulate_path_is_reproducible():
    c = cfg(dt_rel=1 / 50)
    x1, in1 = mc.simulate_path(HEIS, [0.2, 0.0, 0.0], 0.1, c, index=7, dom=D.heis_slab())
    x2, in2 = mc.simulate_path(HEIS, [0.2, 0.0, 0.0], 0.1, c, index=7, dom=D.heis_slab())
    np.testing.assert_array_equal(x1, x2)
    assert in1 == in2


def test_estimate_u_deep_inside():
    e = mc.estimate_u(E1, D.interval(), 1e-3, [0.5], cfg())
    assert e.value == 1.0


def test_estimate_u_heisenberg_boundary_half():
    e = mc.estimate_u(HEIS, D.heis_slab(), 1e-3, [0.0, 0.3, -0.1], cfg(n_paths=100_000, dt_rel=1 / 50))
    assert abs(e.value - 0.5) < 3 * e.stderr


def test_estimate_u_erfc_oracle():
    dom = D.interval()
    e = mc.estimate_u(E1, dom, 0.01, [0.2], cfg(n_paths=100_000))
    ref = float(interval_u(0.01, 0.2, 0.0, 1.0))
    assert ref == pytest.approx(0.9214, abs=1e-4)
    assert abs(e.value - ref) < 3 * e.stderr


def test_estimate_u_max_principle_and_complement():
    dom = D.disc()
    pts = np.array([[0.9, 0.0], [1.0, 0.0], [1.1, 0.0]])
    c = cfg(n_paths=2000)
    u, _ = mc.estimate_u_many(M.get_model("euclid2"), dom, [1e-3, 1e-2], pts, c)
    uc, _ = mc.estimate_u_many(M.get_model("euclid2"), dom, [1e-3, 1e-2], pts, c, complement=True)
    assert np.all((u >= 0) & (u <= 1))
    np.testing.assert_array_equal(u + uc, 1.0)


def test_h_plus_k_per_batch_and_q_below_h():
    dom = D.disc()
    ts = [1e-3, 4e-3]
    H, K, Q = mc.estimate_contents_pair(M.get_model("euclid2"), dom, ts, cfg(n_paths=4000, dt_rel=1 / 200),
                                        with_q=True)
    np.testing.assert_allclose(H + K, dom.volume, rtol=1e-14)
    assert np.all(Q <= H)


def test_heat_content_deterministic():
    dom = D.heis_slab(bounded=True)
    c = cfg(n_paths=2000, dt_rel=1 / 50)
    a = mc.estimate_heat_content(HEIS, dom, "H", None, [1e-3, 2e-3], c)
    b = mc.estimate_heat_content(HEIS, dom, "H", None, [1e-3, 2e-3], c)
    np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(a.stderr, b.stderr)


def test_thread_count_does_not_change_results():
    dom = D.grushin_strip()
    c = cfg(n_paths=2000, dt_rel=1 / 50)
    m = M.get_model("grushin")
    mc.set_threads(1)
    a = mc.estimate_heat_content(m, dom, "K", None, [1e-3], c)
    mc.set_threads(4)
    b = mc.estimate_heat_content(m, dom, "K", None, [1e-3], c)
    np.testing.assert_array_equal(a.value, b.value)


def test_band_refused_on_bounded_slab():
    with pytest.raises(mc.McError, match="band"):
        mc.estimate_heat_content(M.get_model("grushin"), D.grushin_strip(), "H", None, [1e-3], cfg(), band=0.3)


def test_band_localization_matches_full_sampling():
    dom = D.disc()
    m = M.get_model("euclid2")
    c = cfg(n_paths=100_000)
    a = mc.estimate_heat_content(m, dom, "K", None, [1e-3], c)
    b = mc.estimate_heat_content(m, dom, "K", None, [1e-3], c, band=0.3)
    assert abs(a.value[0] - b.value[0]) < 3 * math.hypot(a.stderr[0], b.stderr[0])
    assert b.stderr[0] < a.stderr[0]


def test_heat_content_errors():
    dom = D.disc()
    m = M.get_model("euclid2")
    with pytest.raises(mc.McError):
        mc.estimate_heat_content(m, dom, "H", None, [], cfg())
    with pytest.raises(mc.McError):
        mc.estimate_heat_content(m, dom, "Hchi", None, [1e-3], cfg())
    with pytest.raises(mc.McError):
        mc.estimate_heat_content(m, dom, "X", None, [1e-3], cfg())


def test_step_size_convergence():
    m = M.get_model("grushin")
    dom = D.grushin_strip()
    ts = [2e-3]
    a = mc.estimate_heat_content(m, dom, "K", None, ts, cfg(n_paths=40_000, dt_rel=1 / 100))
    b = mc.estimate_heat_content(m, dom, "K", None, ts, cfg(n_paths=40_000, dt_rel=1 / 200))
    assert abs(a.value[0] - b.value[0]) < 2 * math.hypot(a.stderr[0], b.stderr[0])


def test_g_functional_of_one():
    dom = D.disc()
    ones = lambda ts, pts: (np.ones((len(pts), len(ts))), np.zeros((len(pts), len(ts))))
    ts = np.array([1e-3, 1e-2, 0.1])
    v, _ = mc.boundary_functional(dom, "G", None, ts, ones)
    np.testing.assert_allclose(v, 2 * math.pi / math.sqrt(math.pi) * np.sqrt(ts), atol=1e-6)


def test_lambda_limit_half():
    dom = D.disc()
    v, _ = mc.boundary_functional(dom, "Lambda", None, [1e-6], mc.exact_provider(dom))
    assert v[0] == pytest.approx(-0.5 * 2 * math.pi, rel=2e-3)


def test_g_functional_disc_coefficients():
    # G_u = (1/(2 sqrt pi)) sigma sqrt t + (1/8) int Lap(delta) dsigma t + ..., disc: sqrt(pi), -pi/4
    dom = D.disc()
    ts = np.geomspace(1e-6, 1e-4, 6)
    v, _ = mc.boundary_functional(dom, "G", None, ts, mc.exact_provider(dom))
    A = np.stack([np.sqrt(ts), ts, ts ** 1.5], -1)
    c = np.linalg.lstsq(A, v, rcond=None)[0]
    assert c[0] == pytest.approx(math.sqrt(math.pi), rel=1e-4)
    assert c[1] == pytest.approx(-math.pi / 4, rel=2e-2)


def test_unsupported_density():
    m = M.get_model("euclid2")
    dens = M.ModelSpace(**{**m.__dict__, "density": lambda x: 1 + 0 * x[..., 0]}) if hasattr(m, "__dict__") else None
    if dens is None:
        pytest.skip("model is not a plain dataclass")
    with pytest.raises(mc.McError):
        mc.run_paths(dens, [[0.0, 0.0]], [1e-3], cfg())
