import math

import numpy as np
import pytest

from srheat import asymptotics as A
from srheat import domains as D
from srheat import kernels as K
from srheat import mc
from srheat import models as M
from srheat.curves import HeatContentCurve, geometric_ladder

from _cases import LADDER, disc_delta_bump, disc_one_near_boundary, interval_left_weight

SQPI = math.sqrt(math.pi)


def synthetic(ts, coeffs, exps=A.FULL_BASIS, noise=0.0, seed=0):
    ts = np.asarray(ts)
    y = np.power.outer(ts, exps) @ np.asarray(coeffs, float)
    if noise:
        y = y + np.random.default_rng(seed).normal(scale=noise, size=len(ts))
        return HeatContentCurve("H", ts, y, noise, 1000, "mc")
    return HeatContentCurve("H", ts, y, 0.0, 0, "kernel-exact")


def test_exact_basis_recovery():
    ts = geometric_ladder(1e-4, 1e-2, 20)
    fit = A.fit_sqrt_t(synthetic(ts, [1, -2, 0, 3, 0]), window=(1e-4, 1e-2))
    np.testing.assert_allclose(fit.coeffs, [1, -2, 0, 3, 0], atol=1e-9)
    assert not fit.weighted


def test_pinned_c0():
    ts = geometric_ladder(1e-4, 1e-2, 20)
    fit = A.fit_sqrt_t(synthetic(ts, [5, -2, 1, 0, 0]), window=(1e-4, 1e-2), pin_c0=5.0)
    assert fit.pinned[0] and fit.coeffs[0] == 5.0
    np.testing.assert_allclose(fit.coeffs[1:], [-2, 1, 0, 0], atol=1e-8)


def test_too_few_points():
    ts = geometric_ladder(1e-4, 1e-2, 6)
    with pytest.raises(A.FitError):
        A.fit_sqrt_t(synthetic(ts, [1, 0, 0, 0, 0]), window=(1e-4, 1e-2))


def test_ill_conditioned():
    ts = np.linspace(1e-3, 1.0001e-3, 12)
    with pytest.raises(A.FitError, match="condition"):
        A.fit_sqrt_t(synthetic(ts, [1, 0, 0, 0, 0]), window=(0, 1))


def test_weighted_fit_covariance_psd():
    ts = geometric_ladder(2.5e-4, 4e-3, 12)
    fit = A.fit_sqrt_t(synthetic(ts, [1, -2, 0, 0, 0], noise=1e-4), exponents=(0, 0.5, 1))
    assert fit.weighted
    assert np.all(np.linalg.eigvalsh(fit.cov) >= -1e-18)
    assert len(fit.coeffs) == 3


def test_interval_oracle_curve():
    dom = D.interval()
    ts = geometric_ladder(1e-5, 1e-3, 12)
    fit = A.fit_sqrt_t(K.exact_curve(dom, ts), window=(1e-5, 1e-3), pin_c0=1.0)
    assert abs(fit.coefficient(0.5) + 2 / SQPI) < 1e-4
    for e in (1, 1.5, 2):
        assert abs(fit.coefficient(e)) < 1e-3


def test_compare_exact_and_negative_control():
    ts = geometric_ladder(1e-4, 1e-2, 20)
    fit = A.fit_sqrt_t(synthetic(ts, [1, -2, 0, 3, 0]), window=(1e-4, 1e-2))
    rep = A.compare(fit, [1, -2, 0, 3, 0])
    assert rep.passed
    bad = A.compare(fit, [1, -2.2, 0, 3, 0])
    assert not bad.passed
    assert [c.passed for c in bad.checks][1] is False
    assert any(line.startswith("verdict=fail") for line in bad.records())


def test_compare_z_scores_zero_on_exact_match():
    ts = geometric_ladder(2.5e-4, 4e-3, 12)
    c = synthetic(ts, [1, -2, 0, 0, 0], noise=1e-5)
    fit = A.fit_sqrt_t(c, exponents=(0, 0.5, 1))
    rep = A.compare(fit, fit.coeffs.copy())
    assert rep.passed and all(ch.z == 0 for ch in rep.checks)


def test_compare_length_mismatch():
    ts = geometric_ladder(1e-4, 1e-2, 20)
    fit = A.fit_sqrt_t(synthetic(ts, [1, -2, 0, 3, 0]), window=(1e-4, 1e-2))
    with pytest.raises(A.FitError):
        A.compare(fit, [1, 2])


def test_disc_c3_exact_pipeline():
    dom = D.disc()
    fit = A.fit_sqrt_t(K.exact_curve(dom, LADDER), pin_c0=math.pi)
    assert abs(fit.coefficient(1.5) / (SQPI / 2) - 1) <= 1e-2


def test_disc_c4_leak_is_the_next_order_term():
    # the disc expansion continues with (3 sqrt(pi) / 16) t^(5/2); removing it leaves c4 ~ 0
    dom = D.disc()
    c = K.exact_curve(dom, LADDER)
    c.value = c.value - 3 * SQPI / 16 * LADDER ** 2.5
    fit = A.fit_sqrt_t(c, pin_c0=math.pi)
    assert abs(fit.coefficient(2.0)) < 2e-3


def test_records_are_key_value():
    ts = geometric_ladder(1e-4, 1e-2, 20)
    fit = A.fit_sqrt_t(synthetic(ts, [1, -2, 0, 3, 0]), window=(1e-4, 1e-2))
    for line in fit.records():
        assert "=" in line
    assert set(fit.to_dict()) >= {"coeffs", "stderr", "window", "cond"}


def test_dropping_zero_coefficients_is_harmless():
    dom = D.disc()
    c = K.exact_curve(dom, LADDER)
    full = A.fit_sqrt_t(c, pin_c0=math.pi)
    thin = A.fit_sqrt_t(c, exponents=(0, 0.5, 1.5), pin_c0=math.pi)
    assert thin.coefficient(0.5) == pytest.approx(full.coefficient(0.5), rel=1e-4)


def test_duhamel_interval_exponent():
    dom = D.interval(0.0, 4.0)
    ts = geometric_ladder(1e-4, 1e-2, 8)
    r = A.duhamel_first_order_residual(M.get_model("euclid1"), dom, interval_left_weight(), ts)
    assert np.all(np.diff(r) > 0)
    assert A.decay_exponent(ts, r) >= 1.0


def test_duhamel_residual_of_constant_weight_is_tiny():
    dom = D.interval(0.0, 4.0)
    r = A.duhamel_first_order_residual(M.get_model("euclid1"), dom, None, 1e-3)
    assert r < 1e-12


def test_duhamel_disc_ratio():
    dom = D.disc()
    phi = disc_one_near_boundary(dom)
    m = M.get_model("euclid2")
    lhs, _ = A.duhamel_sides(m, dom, phi, [1e-4])
    r = A.duhamel_first_order_residual(m, dom, phi, 1e-4)
    assert r < 1e-2 * lhs[0]


def test_duhamel_model_mismatch():
    with pytest.raises(A.FitError):
        A.duhamel_sides(M.get_model("heisenberg"), D.disc(), None, [1e-3])


def test_inside_outside_exact():
    dom = D.disc()
    ts = geometric_ladder(1e-3, 2e-2, 6)
    rep = A.inside_outside_check(M.get_model("euclid2"), dom, disc_delta_bump(dom), ts)
    assert rep.a[0] == pytest.approx(2 * math.pi, rel=1e-10)
    assert rep.exponent >= 2.0
    # O(t^3) terms plus cutoff effects; tiny at the small end of the ladder
    assert abs(rep.residual[0]) < 1e-8


def test_inside_outside_constant_weight_mc_below_noise():
    dom = D.disc()
    ts = geometric_ladder(2.5e-4, 2.5e-3, 5)
    cfg = mc.SdeConfig(n_paths=40_000, seed=8)
    rep = A.inside_outside_check(M.get_model("euclid2"), dom, disc_one_near_boundary(dom), ts, "mc", cfg)
    assert rep.a == pytest.approx((0.0, 0.0), abs=1e-12)
    assert rep.below_noise()
