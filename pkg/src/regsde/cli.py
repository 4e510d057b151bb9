"""Config-driven runner: ``regsde --config run.ini [command]``.

The config is an INI file. Every section and key is validated against
:data:`SCHEMA`; anything unknown is a configuration error (exit 2). Numeric
failures exit 3 and a failing acceptance suite exits 4.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, expr
from .errors import ConfigError, NumericError
from .itocheck import (ItoField, ItoFunction, Smooth, chain_rule_residual, ito_residual,
                       ito_wentzell_residual, bracket_residual, run_ensemble)
from .pathgen import CompositePath, SamplePath, gen_bifractional, gen_brownian, gen_composite, \
    gen_ensemble, gen_fbm, make_grid, write_path_csv
from .reginteg import write_integrals_csv
from .regvar import EpsLadder, mc_report
from .solver import ProblemSpec, nonuniqueness_demo, solve_sde
from .transform import coefficient

log = logging.getLogger("regsde")

COMMANDS = ("gen", "var", "integrate", "check", "solve", "demo-nonuniq", "suite")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


def _str_list(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


# section -> key -> (parser, default)
SCHEMA = {
    "run": {"command": (str, "suite"), "seed": (int, 20240611), "workers": (int, 1)},
    "grid": {"n_steps": (int, 2**14)},
    "driver": {"kind": (str, "fbm"), "hurst": (float, 0.7), "h": (float, 0.5), "k": (float, 1.0),
               "r": (str, "fbm:0.3333333333333333"), "q": (str, "w"), "n_paths": (int, 1)},
    "coefficient": {"sigma": (str, "linear"), "beta": (_opt_str, None), "alpha": (_opt_str, None),
                    "closed_form": (_bool, False)},
    "case": {"tag": (str, "hoelder"), "eta": (float, 1.0), "window_lo": (float, -10.0),
             "window_hi": (float, 10.0), "zero_tol": (float, 1e-9), "picard": (_bool, False),
             "martingale": (str, "none"), "v": (str, "t"), "bracket_eps": (float, 0.0)},
    "ladder": {"j_min": (int, 4), "j_max": (int, 8)},
    "ensemble": {"n_rep": (int, 1)},
    "var": {"order": (int, 2), "statistic": (str, "covariation"), "t": (float, 1.0)},
    "integrate": {"integrand": (str, "x")},
    "check": {"kind": (str, "ito"), "f": (str, "t*x^3"), "psi": (str, "cos(x)"),
              "phi": (str, "sin(x)"), "a": (str, "x"), "h": (str, "cos(x)"),
              "estimator": (str, "J")},
    "demo": {"a": (float, 0.5), "n_steps": (int, 2**20)},
    "suite": {"only": (_str_list, []), "determinism": (_bool, True)},
    "outputs": {"dir": (str, "out")},
}


@dataclass
class Config:
    values: dict
    sha256: str

    def __getitem__(self, key):
        section, _, name = key.partition(".")
        return self.values[section][name]


def load_config(path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    raw = p.read_bytes()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(raw.decode("utf-8"), source=str(p))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(text)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    if values["run"]["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {values['run']['command']!r}")
    return Config(values, hashlib.sha256(raw).hexdigest())


# --------------------------------------------------------------------------
# builders

def _header(cfg: Config) -> str:
    return f"regsde {__version__} config_sha256={cfg.sha256} seed={cfg['run.seed']}"


def _grid(cfg: Config):
    try:
        return make_grid(cfg["grid.n_steps"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _driver(cfg: Config):
    """replication -> SamplePath or CompositePath, from the [driver] section."""
    grid = _grid(cfg)
    seed = cfg["run.seed"]
    kind = cfg["driver.kind"]
    if kind == "fbm":
        return lambda r: gen_fbm(grid, cfg["driver.hurst"], seed, r)
    if kind == "brownian":
        return lambda r: gen_brownian(grid, seed, r)
    if kind == "bifractional":
        return lambda r: gen_bifractional(grid, cfg["driver.h"], cfg["driver.k"], seed, r)
    if kind == "composite":
        return lambda r: gen_composite(grid, cfg["driver.r"], cfg["driver.q"], seed, r)
    if kind == "t":
        return lambda r: SamplePath(grid, grid.nodes.copy(), "t", {"law": "deterministic"})
    raise ConfigError(f"unknown driver kind {kind!r}")


def _xi(p) -> SamplePath:
    return p.xi if isinstance(p, CompositePath) else p


def _ladder(cfg: Config, grid) -> EpsLadder:
    try:
        return EpsLadder.dyadic(cfg["ladder.j_min"], cfg["ladder.j_max"]).check(grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _smooth(text: str) -> Smooth:
    d = expr.derivatives(text)
    return Smooth(d["f"], (d["dx"], d["dx2"], d["dx3"]), name=text)


# --------------------------------------------------------------------------
# commands

def cmd_gen(cfg: Config, out: Path) -> int:
    gen = _driver(cfg)
    ens = gen_ensemble(gen, cfg["driver.n_paths"], cfg["run.seed"], cfg["run.workers"])
    for r, p in enumerate(ens.paths):
        write_path_csv(_xi(p), out / f"path_{r:04d}.csv", _header(cfg))
    log.info("wrote %d paths", len(ens.paths))
    return EXIT_OK


def cmd_var(cfg: Config, out: Path) -> int:
    gen = _driver(cfg)
    grid = _grid(cfg)
    ens = gen_ensemble(lambda r: _xi(gen(r)), cfg["ensemble.n_rep"], cfg["run.seed"], cfg["run.workers"])
    report, _ = mc_report(ens.paths, _ladder(cfg, grid), cfg["var.order"], cfg["var.t"],
                          cfg["var.statistic"])
    report.to_csv(out / "var_report.csv", cfg["var.t"], _header(cfg))
    log.info("limit %.6g slope %s", report.extrapolated_limit, report.slope_label)
    return EXIT_OK


def cmd_integrate(cfg: Config, out: Path) -> int:
    xi = _xi(_driver(cfg)(0))
    y = expr.derivatives(cfg["integrate.integrand"], order=0)["f"](xi.nodes, xi.values)
    for eps in _ladder(cfg, xi.grid):
        write_integrals_csv(y, xi, eps, out, header_comment=_header(cfg))
    return EXIT_OK


def cmd_check(cfg: Config, out: Path) -> int:
    gen = _driver(cfg)
    grid = _grid(cfg)
    ladder = _ladder(cfg, grid)
    kind = cfg["check.kind"]
    est = cfg["check.estimator"]
    if kind == "ito":
        d = expr.derivatives(cfg["check.f"])
        # F(v, x) with v = t (a single bounded-variation path V_t = t)
        F = ItoFunction(lambda v, x: d["f"](v[0], x), [lambda v, x: d["dt"](v[0], x)],
                        [lambda v, x, k=k: d[k](v[0], x) for k in ("dx", "dx2", "dx3")])
        v = SamplePath(grid, grid.nodes.copy(), "t")
        checker = lambda r: ito_residual(F, [v], _xi(gen(r)), ladder, estimator=est)  # noqa: E731
    elif kind == "chain":
        psi, phi = _smooth(cfg["check.psi"]), _smooth(cfg["check.phi"])
        checker = lambda r: chain_rule_residual(psi, phi, _xi(gen(r)), ladder, estimator=est)  # noqa: E731
    elif kind in ("wentzell", "bracket"):
        if cfg["driver.kind"] != "composite":
            raise ConfigError(f"check kind {kind!r} needs a composite driver")
        if kind == "wentzell":
            f, a = _smooth(cfg["check.f"]), _smooth(cfg["check.a"])

            def checker(r):
                comp = gen(r)
                fld = ItoField(f, a_coeffs=[a], martingale_paths=[comp.companions[0]])
                return ito_wentzell_residual(fld, comp, ladder, estimator=est)
        else:
            h = expr.derivatives(cfg["check.h"], order=0)["f"]

            def checker(r):
                comp = gen(r)
                w = comp.companions[0]
                return bracket_residual(comp.xi, h(grid.nodes, w.values), w, ladder)
    else:
        raise ConfigError(f"unknown check kind {kind!r}")
    report = run_ensemble(checker, cfg["ensemble.n_rep"], cfg["run.workers"])
    report.to_csv(out / f"check_{kind}.csv", _header(cfg))
    log.info("medians %s", report.median())
    return EXIT_OK


def cmd_solve(cfg: Config, out: Path) -> int:
    gen = _driver(cfg)
    coeff = coefficient(cfg["coefficient.sigma"], cfg["coefficient.beta"], cfg["coefficient.alpha"])

    def one(r):
        drv = gen(r)
        m = None
        if cfg["case.martingale"] == "companion":
            if not isinstance(drv, CompositePath):
                raise ConfigError("martingale = companion needs a composite driver")
            m = drv.companions[0]
        elif cfg["case.martingale"] != "none":
            raise ConfigError("case.martingale must be 'none' or 'companion'")
        if cfg["case.v"] != "t":
            raise ConfigError("case.v supports only 't'")
        problem = ProblemSpec(coeff, drv, cfg["case.eta"], case_tag=cfg["case.tag"], m_path=m,
                              window=(cfg["case.window_lo"], cfg["case.window_hi"]),
                              zero_tol=cfg["case.zero_tol"],
                              eps_for_brackets=cfg["case.bracket_eps"] or None,
                              picard=cfg["case.picard"], use_closed_form=cfg["coefficient.closed_form"])
        return solve_sde(problem)

    for r in range(cfg["ensemble.n_rep"]):
        b = one(r)
        lines = [f"# {_header(cfg)}", "t,x,y"]
        lines += [f"{t!r},{x!r},{y!r}" for t, x, y in
                  zip(b.x_path.nodes.tolist(), b.x_path.values.tolist(), b.y_path.values.tolist())]
        (out / f"solution_{r:04d}.csv").write_text("\n".join(lines) + "\n")
        log.info("replication %d residual %.3g", r, b.residual_report["sup"])
    return EXIT_OK


def cmd_demo(cfg: Config, out: Path) -> int:
    demo = nonuniqueness_demo(cfg["demo.a"], n_steps=cfg["demo.n_steps"])
    x1, x2 = demo.first.x_path, demo.second.x_path
    lines = [f"# {_header(cfg)}",
             f"# residuals={demo.residuals[0]!r},{demo.residuals[1]!r} "
             f"separation_t1={demo.separation_at_1!r} h2_at_zero={demo.h2_verdict}",
             "t,x1,x2"]
    step = max(1, x1.grid.n_steps // 1024)  # thin the export; the checks used every node
    lines += [f"{t!r},{a!r},{b!r}" for t, a, b in
              zip(x1.nodes[::step].tolist(), x1.values[::step].tolist(), x2.values[::step].tolist())]
    (out / "nonuniqueness.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_suite(cfg: Config, out: Path) -> int:
    from .acceptance import SuiteContext, run_suite

    ctx = SuiteContext(seed=cfg["run.seed"], workers=cfg["run.workers"])
    results = run_suite(ctx, out, cfg.sha256, only=cfg["suite.only"] or None,
                        determinism=cfg["suite.determinism"], log=log.info)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


HANDLERS = {"gen": cmd_gen, "var": cmd_var, "integrate": cmd_integrate, "check": cmd_check,
            "solve": cmd_solve, "demo-nonuniq": cmd_demo, "suite": cmd_suite}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regsde", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=COMMANDS,
                    help="overrides [run] command from the config")
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", help="output directory (overrides [outputs] dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    ap.add_argument("--workers", type=int, help="worker threads (overrides [run] workers)")
    ap.add_argument("--quiet", action="store_true")
    ap.add_argument("--version", action="version", version=f"regsde {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["run"]["seed"] = args.seed
        if args.workers is not None:
            cfg.values["run"]["workers"] = max(1, args.workers)
        command = args.command or cfg["run.command"]
        out = Path(args.out or cfg["outputs.dir"])
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[command](cfg, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
