import math

import numpy as np
import pytest

from srheat import domains as D
from srheat import kernels as K
from srheat import mc
from srheat import models as M
from srheat import pdegrid as G

E1 = M.get_model("euclid1")
E2 = M.get_model("euclid2")
GR = M.get_model("grushin")


def _interval_H(h, T=4e-3):
    dom = D.interval()
    grid = G.make_grid(E1, dom, T, h, h * h, scheme="implicit")
    out = G.solve_heat(E1, dom, grid, [T])
    return out["H"].value[0] - (dom.volume - K.exact_deficit(dom, T))


def test_stencil_sin():
    grid = G.GridSpec((0.0,), (1.0,), (99,), 1e-5, "implicit")
    A = G.assemble_operator(E1, grid)
    x = grid.axes()[0]
    err = np.max(np.abs(A @ np.sin(math.pi * x) + math.pi ** 2 * np.sin(math.pi * x)))
    h = grid.h[0]
    assert err < math.pi ** 4 * h * h / 12 * 1.01


def test_grushin_zero_row():
    grid = G.GridSpec((-1.0, -1.0), (1.0, 1.0), (9, 7), 1e-4, "adi")
    ops = G.axis_operators(GR, grid)
    x = grid.axes()[0]
    row0 = np.argmin(np.abs(x))
    assert x[row0] == 0.0
    Ay = ops[1].toarray().reshape(9, 7, 9, 7)
    assert np.all(Ay[row0, :, :, :] == 0)


@pytest.mark.parametrize("model", [E2, GR], ids=["euclid2", "grushin"])
def test_operator_symmetric(model):
    grid = G.GridSpec((-1.0, -1.0), (1.0, 1.0), (12, 15), 1e-4, "adi")
    A = G.assemble_operator(model, grid)
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2, A.shape[0]))
    assert u @ (A @ v) == pytest.approx(v @ (A @ u), rel=1e-12)


def test_unsupported_model():
    with pytest.raises(G.GridError):
        G.make_grid(M.get_model("heisenberg"), D.heis_slab(bounded=True), 1e-3, 0.01, 1e-4)


def test_explicit_cfl_error():
    dom = D.interval()
    grid = G.make_grid(E1, dom, 1e-3, 0.01, 1e-3, scheme="explicit")
    with pytest.raises(G.GridError, match="dt <="):
        G.assemble_operator(E1, grid)


def test_horizon_error():
    dom = D.interval()
    grid = G.make_grid(E1, dom, 1e-3, 0.01, 1e-4)
    with pytest.raises(G.GridError):
        G.solve_heat(E1, dom, grid, [1.0])


def test_interval_exact_oracle():
    assert abs(_interval_H(1e-3)) < 1e-4


def test_second_order_convergence():
    errs = [abs(_interval_H(h)) for h in (4e-3, 2e-3, 1e-3)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert 3.5 < r < 4.5


def test_mass_and_maximum_principle():
    dom = D.disc()
    T = 4e-3
    grid = G.make_grid(E2, dom, T, 0.01, 1e-4, scheme="implicit")
    out = G.solve_heat(E2, dom, grid, np.linspace(1e-3, T, 4))
    assert np.max(np.abs(out["mass"] - out["mass0"])) < 1e-6
    assert out["u"].min() >= -1e-12 and out["u"].max() <= 1 + 1e-12
    np.testing.assert_allclose(out["H"].value + out["K"].value, out["mass"], rtol=1e-12)


def test_disc_cell_fractions_sum_to_area():
    dom = D.disc()
    grid = G.make_grid(E2, dom, 1e-4, 0.02, 1e-5)
    fr = G.cell_fractions(dom, grid)
    assert fr.sum() * np.prod(grid.h) == pytest.approx(math.pi, rel=1e-10)


def test_grushin_grid_matches_mc():
    dom = D.grushin_strip()
    ts = np.array([1e-3, 2e-3, 4e-3])
    grid = G.make_grid(GR, dom, ts[-1], 5e-3, 2.5e-5, scheme="adi")
    H = G.solve_heat(GR, dom, grid, ts)["H"]
    cfg = mc.SdeConfig(n_paths=200_000, seed=4, dt_rel=1 / 100)
    Hm = mc.estimate_heat_content(GR, dom, "H", None, ts, cfg)
    bound = 3 * Hm.stderr + 5.0 * (5e-3) ** 2
    assert np.all(np.abs(H.value - Hm.value) <= bound)


def test_snapshot_dump(tmp_path):
    dom = D.interval()
    grid = G.make_grid(E1, dom, 1e-3, 0.01, 1e-4)
    G.solve_heat(E1, dom, grid, [1e-3], dump_dir=str(tmp_path))
    u = np.fromfile(tmp_path / "u_000.bin", dtype="<f8")
    head = (tmp_path / "u_000.txt").read_text().split("\n")
    assert head[0] == f"dims {grid.shape[0]}"
    assert len(u) == grid.shape[0]
