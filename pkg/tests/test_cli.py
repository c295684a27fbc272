import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from srheat import cli
from srheat import kernels as K
from srheat import domains as D

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def cfgpath(name):
    return os.path.join(CONFIGS, name)


def write_ini(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_MC = """
[experiment]
domain = disc
backend = mc
seed = 5

[ladder]
t_min = 2.5e-4
t_max = 4e-3
count = 6

[mc]
n_paths = 4000
n_batches = 4
"""


def test_list(capsys):
    assert cli.main(["list"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "heisenberg" in out and "disc" in out


def test_predict_disc(tmp_path, capsys):
    assert cli.main(["predict", "--config", cfgpath("disc_exact.ini"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "c1=-3.544908" in out
    rec = json.loads((tmp_path / "predict.json").read_text())
    assert len(rec["coefficients"]) == 5 and len(rec["provenance"]) == 5


def test_predict_interval(tmp_path, capsys):
    assert cli.main(["predict", "--config", cfgpath("interval_exact.ini"), "--out", str(tmp_path)]) == 0
    assert "c1=-1.128379" in capsys.readouterr().out


def test_predict_heis_ball_refused(tmp_path, capsys):
    code = cli.main(["predict", "--config", cfgpath("heis_ball.ini"), "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "characteristic" in capsys.readouterr().err


def test_estimate_interval_matches_oracle(tmp_path):
    assert cli.main(["estimate", "--config", cfgpath("interval_exact.ini"), "--out", str(tmp_path)]) == 0
    curves = cli.read_curves(str(tmp_path / "curve.csv"))
    dom = D.interval()
    ts = curves["H"].t
    # independent oracle: H = int_0^1 u dx with u the two-sided erfc profile
    from scipy import integrate

    ref = [integrate.quad(lambda x: K.interval_u(t, x, 0.0, 1.0), 0, 1, epsabs=1e-14, limit=200)[0] for t in ts]
    np.testing.assert_allclose(curves["H"].value, ref, atol=1e-9)
    np.testing.assert_allclose(curves["H"].value + curves["K"].value, dom.volume, rtol=1e-14)
    side = json.loads((tmp_path / "curve.json").read_text())
    assert side["version"] and side["config"]["domain"] == "interval"


def test_mc_determinism_and_conservation(tmp_path):
    ini = write_ini(tmp_path, SMALL_MC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["estimate", "--config", ini, "--out", str(a)]) == 0
    assert cli.main(["estimate", "--config", ini, "--out", str(b), "--threads", "1"]) == 0
    assert (a / "curve.csv").read_bytes() == (b / "curve.csv").read_bytes()
    curves = cli.read_curves(str(a / "curve.csv"))
    np.testing.assert_allclose(curves["H"].value + curves["K"].value, math.pi, rtol=1e-13)
    assert cli.main(["estimate", "--config", ini, "--out", str(b), "--seed", "6"]) == 0
    assert (a / "curve.csv").read_bytes() != (b / "curve.csv").read_bytes()


def test_fit_round_trip(tmp_path, capsys):
    out = str(tmp_path)
    assert cli.main(["estimate", "--config", cfgpath("disc_exact.ini"), "--out", out]) == 0
    assert cli.main(["fit", "--config", cfgpath("disc_exact.ini"), "--out", out]) == 0
    first = (tmp_path / "fit.json").read_text()
    assert cli.main(["fit", "--config", cfgpath("disc_exact.ini"), "--out", out]) == 0
    assert (tmp_path / "fit.json").read_text() == first
    assert "c[0.5]=" in capsys.readouterr().out


def test_fit_without_results(tmp_path):
    assert cli.main(["fit", "--config", cfgpath("disc_exact.ini"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_verify_disc_and_negative_control(tmp_path):
    out = str(tmp_path)
    assert cli.main(["verify", "--config", cfgpath("disc_exact.ini"), "--out", out]) == cli.EXIT_OK
    res = str(tmp_path / "curve.csv")
    code = cli.main(["verify", "--config", cfgpath("disc_exact.ini"), "--out", out, "--results", res,
                     "--scale", "1.1"])
    assert code == cli.EXIT_FAIL
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["report"]["passed"] is False


def test_verify_grid_interval(tmp_path):
    assert cli.main(["verify", "--config", cfgpath("grid_interval.ini"), "--out", str(tmp_path)]) == 0


def test_emit_plot_data(tmp_path):
    assert cli.main(["estimate", "--config", cfgpath("interval_exact.ini"), "--out", str(tmp_path),
                     "--emit-plot-data"]) == 0
    dat = np.loadtxt(tmp_path / "H.dat")
    assert dat.shape == (12, 2)


@pytest.mark.parametrize("text,needle", [
    ("[experiment]\ndomain = torus\n", "torus"),
    ("[experiment]\ndomain = disc\nbackend = abacus\n", "abacus"),
    ("[experiment]\ndomain = disc\n[ladder]\nt_min = 1e-2\nt_max = 1e-3\ncount = 5\n", "ladder"),
    ("[experiment]\ndomain = disc\n[bogus]\nx = 1\n", "bogus"),
])
def test_config_errors(tmp_path, capsys, text, needle):
    ini = write_ini(tmp_path, text)
    assert cli.main(["predict", "--config", ini, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["predict", "--config", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_numerical_failure_exit(tmp_path):
    # horizon violation in the grid backend: padding too small for t_max
    ini = write_ini(tmp_path, "[experiment]\ndomain = interval\nbackend = grid\n[grid]\nh = 1e-2\ndt = 1e-4\n"
                              "pad = 1.0\n[ladder]\nt_min = 1e-3\nt_max = 4e-3\ncount = 4\n")
    assert cli.main(["estimate", "--config", ini, "--out", str(tmp_path)]) == cli.EXIT_NUMERIC


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "srheat", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "grushin" in r.stdout
