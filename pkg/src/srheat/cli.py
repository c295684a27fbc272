"""Config-driven experiment runner: list, predict, estimate, fit, verify."""
from __future__ import annotations

import argparse
import ast
import configparser
import csv
import inspect
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import domains as Dm
from . import jets as J
from . import kernels as K
from . import mc
from . import models as M
from .asymptotics import FULL_BASIS, FitError, compare, fit_sqrt_t
from .curves import HeatContentCurve, geometric_ladder

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "SRHEAT_THREADS"
BACKENDS = ("kernel-exact", "mc", "grid")
WEIGHT_KINDS = {
    "none": "no weight (chi = 1 on the domain)",
    "bump": "product of smooth bumps; center = x,y,..; widths = a,b,..",
    "plateau": "chi = plateau(delta); inner, outer (outer below the tubular radius)",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str
    domain: str
    domain_params: dict = field(default_factory=dict)
    weight: dict = field(default_factory=lambda: {"kind": "none"})
    backend: str = "kernel-exact"
    t_min: float = 2.5e-4
    t_max: float = 4e-3
    count: int = 12
    exponents: tuple = FULL_BASIS
    pin_c0: bool = True
    sde: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    seed: int = 12345
    out: str = "results"

    def ladder(self) -> np.ndarray:
        return geometric_ladder(self.t_min, self.t_max, self.count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponents"] = list(self.exponents)
        return d


SECTIONS = ("experiment", "domain", "weight", "ladder", "fit", "mc", "grid", "verify")


def _literal(v: str):
    try:
        return ast.literal_eval(v)
    except (ValueError, SyntaxError):
        return v


def _floats(v: str) -> tuple:
    try:
        return tuple(float(x) for x in v.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected a list of numbers, got {v!r}") from None


def load_config(path: Optional[str], seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    if path is None:
        raise ConfigError("--config is required")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path!r}")
    if "experiment" not in cp:
        raise ConfigError("config needs an [experiment] section")
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}; allowed {list(SECTIONS)}")
    ex = cp["experiment"]
    try:
        domain = ex["domain"]
    except KeyError:
        raise ConfigError("[experiment] needs a domain") from None
    model = ex.get("model", Dm.DOMAIN_MODELS.get(domain, ""))
    cfg = ExperimentConfig(model=model, domain=domain)
    if "domain" in cp:
        cfg.domain_params = {k: _literal(v) for k, v in cp["domain"].items()}
    if "weight" in cp:
        cfg.weight = dict(cp["weight"])
        cfg.weight.setdefault("kind", "none")
    cfg.backend = ex.get("backend", cfg.backend)
    cfg.seed = int(ex.get("seed", cfg.seed))
    cfg.out = ex.get("out", cfg.out)
    if "ladder" in cp:
        ld = cp["ladder"]
        cfg.t_min = ld.getfloat("t_min", cfg.t_min)
        cfg.t_max = ld.getfloat("t_max", cfg.t_max)
        cfg.count = ld.getint("count", cfg.count)
    if "fit" in cp:
        ft = cp["fit"]
        if "exponents" in ft:
            cfg.exponents = _floats(ft["exponents"])
        cfg.pin_c0 = ft.getboolean("pin_c0", cfg.pin_c0)
    for sec in ("mc", "grid", "verify"):
        if sec in cp:
            target = {"mc": cfg.sde, "grid": cfg.grid, "verify": cfg.verify}[sec]
            target.update({k: _literal(v) for k, v in cp[sec].items()})
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.domain not in Dm.DOMAINS:
        raise ConfigError(f"unknown domain {cfg.domain!r}; choose from {sorted(Dm.DOMAINS)}")
    if cfg.model not in M.MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; choose from {sorted(M.MODELS)}")
    if Dm.DOMAIN_MODELS[cfg.domain] != cfg.model:
        raise ConfigError(f"domain {cfg.domain} lives on {Dm.DOMAIN_MODELS[cfg.domain]}, not {cfg.model}")
    if cfg.backend not in BACKENDS:
        raise ConfigError(f"unknown backend {cfg.backend!r}; choose from {BACKENDS}")
    if cfg.weight.get("kind", "none") not in WEIGHT_KINDS:
        raise ConfigError(f"unknown weight kind {cfg.weight['kind']!r}")
    try:
        cfg.ladder()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.sde:
        unknown = set(cfg.sde) - set(mc.SdeConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown [mc] keys {sorted(unknown)}")


def build(cfg: ExperimentConfig):
    """Resolve names to (model, domain, weight)."""
    m = M.get_model(cfg.model)
    try:
        dom = Dm.get_domain(cfg.domain, **cfg.domain_params)
    except TypeError as e:
        raise ConfigError(f"bad [domain] parameters: {e}") from None
    w = cfg.weight
    kind = w.get("kind", "none")
    weight = None
    if kind == "bump":
        center, widths = _floats(w.get("center", "")), _floats(w.get("widths", ""))
        if len(center) != dom.dim or len(widths) != dom.dim:
            raise ConfigError(f"bump center/widths need {dom.dim} entries")
        weight = Dm.bump_weight(center, widths, name=w.get("name", "bump"))
    elif kind == "plateau":
        inner, outer = float(w.get("inner", 0.2)), float(w.get("outer", 0.4))
        if not 0 <= inner < outer:
            raise ConfigError("plateau needs 0 <= inner < outer")
        weight = Dm.profile_weight(dom, lambda a: J.plateau(a, inner, outer), outer, w.get("name", "plateau"))
    if weight is not None:
        weight.check_support(dom)
    return m, dom, weight


def sde_config(cfg: ExperimentConfig) -> mc.SdeConfig:
    return mc.SdeConfig(**{**cfg.sde, "seed": cfg.seed})


# ---------------------------------------------------------------------------
# backends

def run_estimate(cfg: ExperimentConfig) -> list:
    m, dom, weight = build(cfg)
    ts = cfg.ladder()
    if cfg.backend == "kernel-exact":
        if weight is not None:
            return [K.exact_curve(dom, ts, "Hchi", weight)]
        return [K.exact_curve(dom, ts, "H"), K.exact_curve(dom, ts, "K")]
    if cfg.backend == "mc":
        sc = sde_config(cfg)
        if weight is not None:
            return [mc.estimate_heat_content(m, dom, "Hchi", weight, ts, sc)]
        H, Kb, _ = mc.estimate_contents_pair(m, dom, ts, sc)
        out = []
        for kind, vals in (("H", H), ("K", Kb)):
            mean, cov = mc._combine(vals)
            out.append(HeatContentCurve(kind, ts, mean, np.sqrt(np.diag(cov)), len(vals) * (sc.n_paths // len(vals)),
                                        "mc", cov=cov, meta={"omega": dom.volume}))
        return out
    from . import pdegrid

    g = cfg.grid
    grid = pdegrid.make_grid(m, dom, float(ts[-1]), float(g.get("h", 2e-3)), float(g.get("dt", 1e-5)),
                             g.get("scheme", "adi"), float(g.get("pad", 10.0)))
    res = pdegrid.solve_heat(m, dom, grid, ts, weight)
    if weight is not None:
        return [res["Hchi"]]
    return [res["H"], res["K"]]


# ---------------------------------------------------------------------------
# persistence

def _results_path(cfg: ExperimentConfig, stem: str = "curve") -> str:
    return os.path.join(cfg.out, stem)


def write_curves(curves: list, cfg: ExperimentConfig, emit_plot: bool = False) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    base = _results_path(cfg)
    with open(base + ".csv", "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["t", "value", "stderr", "n", "kind", "backend"])
        for c in curves:
            for t, v, s, n, kind, be in c.rows():
                wr.writerow([repr(float(t)), repr(float(v)), repr(float(s)), n, kind, be])
    side = {"version": __version__, "config": cfg.to_dict(),
            "curves": [{"kind": c.kind, "backend": c.backend, "meta": _jsonable(c.meta),
                        "cov": c.cov.tolist() if c.cov is not None else None} for c in curves]}
    _write_json(base + ".json", side)
    if emit_plot:
        for c in curves:
            np.savetxt(os.path.join(cfg.out, f"{c.kind}.dat"), np.column_stack([c.t, c.value]), fmt="%.17g")
    return base + ".csv"


def read_curves(path: str) -> dict:
    rows = {}
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.setdefault((r["kind"], r["backend"]), []).append(r)
    cov = {}
    side = os.path.splitext(path)[0] + ".json"
    if os.path.exists(side):
        with open(side) as f:
            for c in json.load(f).get("curves", []):
                if c.get("cov") is not None:
                    cov[c["kind"]] = np.array(c["cov"])
    out = {}
    for (kind, be), rs in rows.items():
        out[kind] = HeatContentCurve(kind, [float(r["t"]) for r in rs], [float(r["value"]) for r in rs],
                                     [float(r["stderr"]) for r in rs], [int(r["n"]) for r in rs], be,
                                     cov=cov.get(kind))
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_list(args) -> int:
    print("models:")
    for name in sorted(M.MODELS):
        m = M.get_model(name)
        print(f"  {name}: dim={m.dim} fields={m.n_fields} weights={m.weights} carnot={m.carnot}")
    print("domains:")
    for name in sorted(Dm.DOMAINS):
        sig = inspect.signature(Dm.DOMAINS[name])
        params = ", ".join(f"{p.name}={p.default!r}" for p in sig.parameters.values())
        print(f"  {name} [{Dm.DOMAIN_MODELS[name]}]: {params}")
    print("weights:")
    for k, v in WEIGHT_KINDS.items():
        print(f"  {k}: {v}")
    print("backends: " + ", ".join(BACKENDS))
    return EXIT_OK


def _predict(cfg: ExperimentConfig):
    _, dom, weight = build(cfg)
    return Dm.predict_coefficients(dom, weight)


PROVENANCE = (
    "omega(Omega) or int chi",
    "-(1/sqrt(pi)) int chi dsigma",
    "-(1/2) int g(grad chi, grad delta) dsigma",
    "-(1/(12 sqrt(pi))) int (4 Lap + N^2) chi dsigma + (1/(6 sqrt(pi))) int (N chi) Lap delta dsigma",
    "-(1/4) int g(grad Lap chi, grad delta) dsigma",
)


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    c = _predict(cfg)
    for k, (v, prov) in enumerate(zip(c, PROVENANCE)):
        print(f"c{k}={v:.6f}  # {prov}")
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(_results_path(cfg, "predict") + ".json",
                {"version": __version__, "config": cfg.to_dict(), "coefficients": c.tolist(),
                 "provenance": list(PROVENANCE)})
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    curves = run_estimate(cfg)
    path = write_curves(curves, cfg, args.emit_plot_data)
    for c in curves:
        print(f"{c.kind} [{c.backend}] {len(c)} points, t in [{c.t[0]:.3g}, {c.t[-1]:.3g}]")
    print(f"wrote {path}")
    return EXIT_OK


def _fit_curve(cfg: ExperimentConfig, curves: dict):
    kind = "Hchi" if "Hchi" in curves else "H"
    if kind not in curves:
        raise ConfigError("results contain neither an H nor an Hchi curve")
    curve = curves[kind]
    pin = None
    if cfg.pin_c0 and 0.0 in cfg.exponents:
        pin = float(_predict(cfg)[0])
    return fit_sqrt_t(curve, cfg.exponents, pin_c0=pin)


def cmd_fit(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    path = args.results or _results_path(cfg) + ".csv"
    if not os.path.exists(path):
        raise ConfigError(f"no results at {path}; run estimate first")
    fit = _fit_curve(cfg, read_curves(path))
    for line in fit.records():
        print(line)
    _write_json(_results_path(cfg, "fit") + ".json", {"version": __version__, "config": cfg.to_dict(),
                                                       "fit": fit.to_dict()})
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if args.results is not None:
        if not os.path.exists(args.results):
            raise ConfigError(f"no results at {args.results}")
        path = args.results
    else:
        path = write_curves(run_estimate(cfg), cfg, args.emit_plot_data)
    fit = _fit_curve(cfg, read_curves(path))
    pred_all = _predict(cfg) * args.scale
    idx = [int(round(2 * e)) for e in fit.exponents]
    pred = pred_all[idx]
    v = cfg.verify
    which = None
    if "coefficients" in v:
        c = v["coefficients"]
        which = tuple(float(x) for x in np.atleast_1d(c)) if not isinstance(c, str) else _floats(c)
    mode = v.get("mode")
    rep = compare(fit, pred, mode=mode, z_max=float(v.get("z_max", 3.0)), rel_max=float(v.get("rel_max", 1e-3)),
                  which=which)
    for line in fit.records() + rep.records():
        print(line)
    _write_json(_results_path(cfg, "verify") + ".json",
                {"version": __version__, "config": cfg.to_dict(), "scale": args.scale, "fit": fit.to_dict(),
                 "report": rep.to_dict()})
    return EXIT_OK if rep.passed else EXIT_FAIL


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srheat", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    common.add_argument("--emit-plot-data", action="store_true", help="also write two-column <kind>.dat files")
    sub.add_parser("list", parents=[common], help="built-in models, domains, weights")
    sub.add_parser("predict", parents=[common], help="predicted coefficients c0..c4")
    sub.add_parser("estimate", parents=[common], help="compute a heat content curve")
    f = sub.add_parser("fit", parents=[common], help="fit the sqrt(t) expansion to a results file")
    f.add_argument("--results", help="CSV to fit (default: <out>/curve.csv)")
    v = sub.add_parser("verify", parents=[common], help="estimate, fit and compare with predictions")
    v.add_argument("--results", help="reuse this CSV instead of recomputing")
    v.add_argument("--scale", type=float, default=1.0, help="multiply predictions (negative control)")
    return p


COMMANDS = {"list": cmd_list, "predict": cmd_predict, "estimate": cmd_estimate, "fit": cmd_fit,
            "verify": cmd_verify}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else os.environ.get(THREADS_ENV)
    try:
        if threads:
            mc.set_threads(int(threads))
        return COMMANDS[args.command](args)
    except (ConfigError, M.ModelError, Dm.DomainError, ValueError) as e:
        numeric = isinstance(e, (FitError, K.KernelError, mc.McError)) or type(e).__name__ == "GridError"
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC if numeric and not isinstance(e, ConfigError) else EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, J.JetError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
