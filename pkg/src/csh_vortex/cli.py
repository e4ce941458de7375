"""Command line driver: ``csh check | background | solve | sweep``.

Exit codes: 0 success, 1 reported failure (identity check failed or solver
did not converge; artifacts are still written), 2 usage or config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .cartan import build_cartan, exact_identities, identity_report, lambda_lower_bound
from .energy import diagnostics_json, make_params
from .errors import CSHError, DomainError, RankError
from .minimize import SolveOptions, solve, lambda_sweep
from .torus import TorusGrid, VortexConfig, write_field_bin, write_field_csv

log = logging.getLogger("csh")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["n", "domain", "grid", "vortices", "lambda"],
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 2},
        "domain": {
            "type": "object", "required": ["L1", "L2"], "additionalProperties": False,
            "properties": {"L1": _POS, "L2": _POS},
        },
        "grid": {
            "type": "object", "required": ["n1", "n2"], "additionalProperties": False,
            "properties": {"n1": {"type": "integer", "minimum": 8, "multipleOf": 2},
                           "n2": {"type": "integer", "minimum": 8, "multipleOf": 2}},
        },
        "vortices": {
            "type": "array",
            "items": {"type": "array", "items": {
                "type": "object", "required": ["x", "y"], "additionalProperties": False,
                "properties": {"x": _NUM, "y": _NUM,
                               "multiplicity": {"type": "integer", "minimum": 1}},
            }},
        },
        "lambda": {"oneOf": [
            _POS,
            {"type": "array", "items": _POS, "minItems": 1},
            {"type": "object", "required": ["multiples_of_lambda0"], "additionalProperties": False,
             "properties": {"multiples_of_lambda0": {
                 "oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]}}},
        ]},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"tol": _POS, "max_iter": {"type": "integer", "minimum": 1},
                           "init_mode": {"enum": ["limit", "scalar-cs"]}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"},
                           "formats": {"type": "array", "minItems": 1,
                                       "items": {"enum": ["csv", "bin"]}}},
        },
    },
}

DEFAULTS = {
    "solver": {"tol": 1e-8, "max_iter": 1000, "init_mode": "limit"},
    "output": {"dir": "out", "formats": ["csv"]},
}


class ConfigError(CSHError):
    pass


class Run:
    """A validated config with its grid, vortices and resolved couplings."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.n = cfg["n"]
        self.grid = TorusGrid(float(cfg["domain"]["L1"]), float(cfg["domain"]["L2"]),
                              cfg["grid"]["n1"], cfg["grid"]["n2"])
        comps = tuple(tuple((p["x"], p["y"], p.get("multiplicity", 1)) for p in comp)
                      for comp in cfg["vortices"])
        self.vortices = VortexConfig(comps)
        if self.vortices.n != self.n:
            raise ConfigError(f"vortices: {self.vortices.n} components given, n is {self.n}")
        self.vortices.check_inside(self.grid)
        self.cartan = build_cartan(self.n).with_sources(self.vortices.N, self.grid.area)
        self.lambda0 = self.cartan.lambda0
        lam = cfg["lambda"]
        if isinstance(lam, dict):
            m = lam["multiples_of_lambda0"]
            m = m if isinstance(m, list) else [m]
            if self.lambda0 == 0:
                raise ConfigError("lambda: multiples_of_lambda0 needs at least one vortex")
            self.lambdas = [float(x) * self.lambda0 for x in m]
        else:
            self.lambdas = [float(x) for x in (lam if isinstance(lam, list) else [lam])]
        solver = cfg["solver"]
        self.options = SolveOptions(gtol=solver["tol"], max_iter=solver["max_iter"],
                                    init_mode=solver["init_mode"])
        self.out = Path(cfg["output"]["dir"])
        self.formats = cfg["output"]["formats"]

    def params(self, lam):
        return make_params(self.grid, self.vortices, lam, n=self.n)

    def resolved(self, lambdas):
        cfg = copy.deepcopy(self.cfg)
        cfg["lambda"] = lambdas[0] if len(lambdas) == 1 else list(lambdas)
        for comp in cfg["vortices"]:
            for p in comp:
                p.setdefault("multiplicity", 1)
        return cfg


def _locate(text, path):
    """Best-effort line number of the JSON value at ``path``."""
    line = None
    pos = 0
    for key in path:
        if isinstance(key, str):
            idx = text.find(json.dumps(key), pos)
            if idx < 0:
                break
            pos = idx
            line = text.count("\n", 0, idx) + 1
    return line


def load_config(path, overrides=None):
    """Parse, validate and default-fill a config file.  Raises ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        line = _locate(text, list(exc.absolute_path))
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: field '{field}': {exc.message}") from None
    for key, defaults in DEFAULTS.items():
        cfg[key] = {**defaults, **cfg.get(key, {})}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "lambda":
            cfg["lambda"] = value
        elif key == "tol":
            cfg["solver"]["tol"] = value
        elif key == "out":
            cfg["output"]["dir"] = str(value)
    try:
        return Run(cfg)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    except (ValueError, RankError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _write_json(path, record):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(diagnostics_json(record))


def _write_fields(run, outdir, names_arrays):
    fdir = outdir / "fields"
    fdir.mkdir(parents=True, exist_ok=True)
    for name, arr in names_arrays:
        for i, comp in enumerate(arr, start=1):
            if "csv" in run.formats:
                write_field_csv(fdir / f"{name}_{i}.csv", run.grid, comp)
            if "bin" in run.formats:
                write_field_bin(fdir / f"{name}_{i}.bin", run.grid, comp)


def _warn_threshold(run, lam):
    if lam <= run.lambda0:
        log.warning("lambda=%.17g is below necessary threshold lambda0=%.17g; "
                    "no doubly periodic solution exists", lam, run.lambda0)


def cmd_check(args):
    if args.n is None:
        print("check: --n is required", file=sys.stderr)
        return 2
    try:
        data = build_cartan(args.n)
    except RankError as exc:
        print(f"check: {exc}", file=sys.stderr)
        return 2
    tol = args.tol if args.tol is not None else 1e-12
    ok = True
    rep = identity_report(data)
    for name, val in rep.items():
        passed = val > 0 if name.startswith("min eig") else val <= tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {val:.3e}")
    for name, passed in exact_identities(data).items():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  exact {name}")
    for m in (1, 2, 3):
        lam0 = lambda_lower_bound(data, [m] * data.n, 1.0)
        err = abs(lam0 - 16 * math.pi * m)
        passed = err <= tol * max(1.0, 16 * math.pi * m)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  lambda0 reduction N_i={m}: {err:.3e}")
    if args.seed is not None:
        passed, worst = _random_constants_check(data.n, args.seed)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  random constants systems (seed {args.seed}): "
              f"max residual {worst:.3e}")
    return 0 if ok else 1


def _random_constants_check(n, seed, count=100):
    from .constraints import solve_constants, verify_lemma1, weights_from_samples
    rng = np.random.default_rng(seed)
    area = 1.0
    worst = 0.0
    ok = True
    for _ in range(count):
        E = np.exp(rng.normal(scale=0.5, size=(n, 64)))
        wts = weights_from_samples(E, area)
        b = 4 * math.pi * build_cartan(n).M @ rng.integers(0, 3, size=n)
        lam = 4 * n * float(np.max(b * wts.adiag / wts.a ** 2)) * (1 + rng.uniform(0.05, 3)) + 1e-9
        sol = solve_constants(wts, b, lam, n, area)
        worst = max(worst, float(np.max(np.abs(sol.residuals))))
        ok &= verify_lemma1(wts, sol, area)[0]
    return ok and worst <= 1e-10, worst


def cmd_background(args):
    run = load_config(args.config, {"out": args.out})
    p = run.params(run.lambdas[0])
    _write_fields(run, run.out, [("u0", p.u0)])
    _write_json(run.out / "config.resolved.json", run.resolved(run.lambdas))
    print(f"wrote {run.n} background fields to {run.out / 'fields'}")
    return 0


def cmd_solve(args):
    run = load_config(args.config, {"out": args.out, "tol": args.tol, "lambda": args.lambda_})
    if len(run.lambdas) != 1:
        raise ConfigError("solve needs a single lambda; use the sweep subcommand for lists")
    lam = run.lambdas[0]
    _warn_threshold(run, lam)
    p = run.params(lam)
    state, rep = solve(p, run.options)
    _write_json(run.out / "config.resolved.json", run.resolved(run.lambdas))
    _write_json(run.out / "diagnostics.json", rep.to_record() | {"lambda": lam, "lambda0": run.lambda0})
    if np.all(np.isfinite(state.c)):
        v = state.v
        _write_fields(run, run.out, [("v", v), ("u0", p.u0), ("eu", np.exp(p.u0 + v))])
    print(f"{rep.status}: lambda/lambda0={lam / run.lambda0 if run.lambda0 else math.inf:.6g} "
          f"iterations={rep.iterations} J={rep.J:.12g} grad={rep.grad_norm:.3e}")
    if rep.diagnostics:
        d = rep.diagnostics
        print("Q=" + " ".join(f"{q:.10g}" for q in d["Q"]) +
              "  target=" + " ".join(f"{q:.10g}" for q in d["Q_target"]))
    return 0 if rep.converged else 1


def cmd_sweep(args):
    run = load_config(args.config, {"out": args.out, "tol": args.tol, "lambda": args.lambda_})
    lams = sorted(run.lambdas)
    for lam in lams:
        _warn_threshold(run, lam)
    base = run.params(lams[0])
    res = lambda_sweep(base, lams, run.options, warm_start=not args.cold)
    n = run.n
    header = (["lambda", "converged", "J", "grad_norm", "residual_max"]
              + [f"D_{i}" for i in range(1, n + 1)] + [f"Q_{i}" for i in range(1, n + 1)]
              + [f"Q_target_{i}" for i in range(1, n + 1)])
    run.out.mkdir(parents=True, exist_ok=True)
    f17 = lambda x: format(float(x), ".17g")
    with open(run.out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in res.rows():
            D = row["D"] or [math.nan] * n
            Q = row["Q"] or [math.nan] * n
            target = -4 * math.pi * run.cartan.Nvec / row["lambda"]
            wr.writerow([f17(row["lambda"]), int(row["converged"]), f17(row["J"]),
                         f17(row["grad_norm"]), f17(row["residual_max"])]
                        + [f17(x) for x in D] + [f17(x) for x in Q] + [f17(x) for x in target])
    for k, (lam, rep) in enumerate(zip(res.lambdas, res.reports)):
        _write_json(run.out / "sweep" / f"diagnostics_{k:03d}.json",
                    rep.to_record() | {"lambda": lam, "lambda0": run.lambda0})
    _write_json(run.out / "config.resolved.json", run.resolved(lams))
    for row in res.rows():
        print(f"lambda/lambda0={row['lambda'] / run.lambda0:.6g}  {row['status']}  D={row['D']}")
    lc = res.least_converged
    print("least converged lambda: " + ("none" if lc is None else f"{lc:.17g}"))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="csh", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--tol", type=float, help="gradient tolerance (overrides solver.tol)")
        p.add_argument("--seed", type=int, help="seed for randomized checks")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("check", help="Cartan identity suite")
    p.add_argument("--n", type=int)
    common(p, config=False)
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("background", help="write the background fields u0")
    common(p)
    p.set_defaults(func=cmd_background)
    for name, func, helptext in (("solve", cmd_solve, "minimize at one coupling"),
                                 ("sweep", cmd_sweep, "continuation over a list of couplings")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--lambda", dest="lambda_", type=float, help="coupling (overrides config)")
        if name == "sweep":
            p.add_argument("--cold", action="store_true",
                           help="no warm starts; runs up to $CSH_THREADS couplings in parallel")
        p.set_defaults(func=func)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
