"""Acceptance criteria, one test per criterion.

Every test prints a single ``[criterion k] PASS|FAIL ...`` line; the lines are
also repeated in the pytest terminal summary.  Run this file directly
(``python tests/test_acceptance.py``) to get just the nine lines.
"""
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from csh_vortex.cartan import build_cartan, lambda_lower_bound  # noqa: E402
from csh_vortex.constraints import Weights, solve_constants, verify_lemma1  # noqa: E402
from csh_vortex.energy import gradient_J, reduced_J  # noqa: E402
from csh_vortex.errors import BoundaryError  # noqa: E402
from csh_vortex.minimize import (SolveOptions, initial_guess, lambda_sweep,  # noqa: E402
                                 minimize_J, solve)
from csh_vortex.torus import integrate  # noqa: E402

from conftest import one_vortex_each, smooth_field, su3_params  # noqa: E402
from oracles import constants_oracle  # noqa: E402
from test_constraints import random_instance  # noqa: E402

RESULTS = {}


def report(k, ok, detail):
    line = f"[criterion {k}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def constants_sweep():
    rng = np.random.default_rng(20240601)
    out = []
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 11))
        wts, b, lam = random_instance(rng, n)
        out.append((n, wts, b, lam, solve_constants(wts, b, lam, n, 1.0)))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def su3_run():
    p = su3_params(n1=64, multiple=8.0)
    t0 = time.perf_counter()
    state, rep = minimize_J(p, initial_guess(p), SolveOptions(gtol=1e-8))
    return p, state, rep, time.perf_counter() - t0


def test_criterion_1_matrix_identities():
    t0 = time.perf_counter()
    worst = {"K Kinv - I": 0.0, "Ktilde - Ptilde Stilde": 0.0, "Ktilde^-1 1 - 1": 0.0}
    pd = True
    for n in range(2, 31):
        d = build_cartan(n)
        worst["K Kinv - I"] = max(worst["K Kinv - I"], np.abs(d.K @ d.Kinv - np.eye(n)).max())
        worst["Ktilde - Ptilde Stilde"] = max(worst["Ktilde - Ptilde Stilde"],
                                              np.abs(d.Ktilde - d.Ptilde[:, None] * d.Stilde).max())
        worst["Ktilde^-1 1 - 1"] = max(worst["Ktilde^-1 1 - 1"],
                                       np.abs(np.linalg.solve(d.Ktilde, np.ones(n)) - 1).max())
        pd &= bool(np.linalg.eigvalsh(d.Stilde)[0] > 0 and np.linalg.eigvalsh(d.M)[0] > 0)
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-12 and pd and dt < 1.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(1, ok, f"n=2..30: {detail}; Stilde, M positive definite: {pd}; {dt:.2f}s")


def test_criterion_2_lambda0_reduction():
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 31):
        d = build_cartan(n)
        for m in (1, 2, 3):
            worst = max(worst, abs(lambda_lower_bound(d, [m] * n, 1.0) - 16 * math.pi * m))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 1.0
    assert report(2, ok, f"max |lambda0 - 16 pi m/|Omega|| = {worst:.1e} (n=2..30, m=1..3); {dt:.2f}s")


def test_criterion_3_constants_solver(constants_sweep):
    sols, dt_sweep = constants_sweep
    worst = max(float(np.max(np.abs(s.residuals))) for *_, s in sols)
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    oracle_err = 0.0
    for n in (2, 3):
        for _ in range(8):
            wts, b, lam = random_instance(rng, n)
            t = solve_constants(wts, b, lam, n, 1.0).t
            ref = constants_oracle(wts.a, wts.adiag, wts.aoff, b, lam, 1.0)
            oracle_err = max(oracle_err, float(np.max(np.abs(t - ref))))
    one = np.ones(2)
    t_sym = solve_constants(Weights(one, one, one[:1]), [4 * math.pi] * 2, 200.0, 2, 1.0).t[0]
    dt = dt_sweep + time.perf_counter() - t0
    ok = worst <= 1e-10 and oracle_err <= 1e-8 and abs(t_sym - 0.932629) <= 1e-6 and dt < 30
    assert report(3, ok, f"1000 instances max residual {worst:.1e}; oracle gap {oracle_err:.1e} "
                         f"(n=2,3); symmetric t = {t_sym:.9f}; {dt:.1f}s")


def test_criterion_4_lemma1(constants_sweep, su3_run):
    sols, _ = constants_sweep
    inst = all(verify_lemma1(wts, s, 1.0, rtol=1e-10)[0] for _, wts, _, _, s in sols)
    _, _, rep, _ = su3_run
    iters = rep.history["lemma1"]
    ok = inst and all(iters)
    assert report(4, ok, f"criterion-3 instances: {inst}; {len(iters)} solver iterates: {all(iters)}")


def test_criterion_5_gradient():
    t0 = time.perf_counter()
    p = su3_params(n1=32, multiple=8.0)
    rng = np.random.default_rng(5)
    eps = 1e-5
    worst = 0.0
    states = 0
    while states < 5:
        w = np.stack([-p.u0[i] * rng.uniform(0.6, 1.0) + smooth_field(p.grid, rng, scale=0.4)
                      for i in range(2)])
        w -= w.mean(axis=(1, 2), keepdims=True)
        try:
            g = gradient_J(w, p)
        except BoundaryError:
            continue
        states += 1
        for _ in range(10):
            f = np.stack([smooth_field(p.grid, rng, modes=4) for _ in range(2)])
            fd = (reduced_J(w + eps * f, p)[0] - reduced_J(w - eps * f, p)[0]) / (2 * eps)
            an = float(np.sum(integrate(p.grid, g * f)))
            worst = max(worst, abs(fd - an) / abs(an))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 60
    assert report(5, ok, f"max relative FD error {worst:.1e} over 5 states x 10 directions; {dt:.1f}s")


def test_criterion_6_end_to_end(su3_run):
    p, state, rep, dt = su3_run
    d = rep.diagnostics
    target = -4 * math.pi / p.lam
    qerr = max(abs(q / target - 1) for q in d["Q"])
    res = max(rep.residuals)
    ok = rep.converged and res <= 1e-6 and qerr <= 5e-3 and d["lemma1_ok"] and dt < 300
    assert abs(p.lam - 128 * math.pi) <= 1e-9
    assert report(6, ok, f"{rep.status} in {rep.iterations} iterations; residual {res:.1e}; "
                         f"Q rel. error {qerr:.1e} (target {target:.6f}); lemma1 {d['lemma1_ok']}; {dt:.1f}s")


def test_criterion_7_asymptotics():
    t0 = time.perf_counter()
    p = su3_params(n1=64, multiple=8.0)
    mult = (2, 4, 8, 16)
    res = lambda_sweep(p, [m * p.lambda0 for m in mult])
    dt = time.perf_counter() - t0
    D = {m: (r.diagnostics["D"] if r.converged else None) for m, r in zip(mult, res.reports)}
    conv = [np.array(D[m]) for m in mult if D[m] is not None]
    decreasing = len(conv) >= 2 and all(np.all(b < a) for a, b in zip(conv, conv[1:]))
    quarter = D[2] is not None and np.all(np.array(D[16]) <= np.array(D[2]) / 4)
    status = ", ".join(f"{m}: {r.status}" for m, r in zip(mult, res.reports))
    ok = decreasing and quarter and dt < 1200
    dstr = "; ".join(f"D({m}l0)={'n/a' if D[m] is None else f'{max(D[m]):.4g}'}" for m in mult)
    why = "" if quarter or D[2] is not None else f" [2 lambda0 row: {res.reports[0].message}]"
    assert report(7, ok, f"{dstr}; strictly decreasing over converged rows: {decreasing}; "
                         f"D(16l0) <= D(2l0)/4: {quarter}{why}; rows {status}; {dt:.1f}s")


def test_criterion_8_necessary_condition():
    below = su3_params(n1=64, multiple=0.9)
    reps = [solve(below, SolveOptions(init_mode=m))[1] for m in ("limit", "scalar-cs")]
    blocked = all(not r.converged for r in reps)
    above = su3_params(n1=64, multiple=8.0)
    _, rep = solve(above, SolveOptions())
    ok = blocked and rep.converged
    assert report(8, ok, f"0.9 lambda0: {', '.join(r.status for r in reps)}; 8 lambda0: {rep.status}")


def test_criterion_9_higher_rank():
    t0 = time.perf_counter()
    parts = []
    ok = True
    for n in (3, 4):
        p = one_vortex_each(n, n1=64, multiple=8.0)
        _, rep = minimize_J(p, initial_guess(p), SolveOptions(gtol=1e-8))
        d = rep.diagnostics
        target = np.array(d["Q_target"])
        qerr = float(np.max(np.abs(np.array(d["Q"]) / target - 1)))
        res = max(rep.residuals)
        ok &= rep.converged and res <= 1e-5 and qerr <= 1e-2
        parts.append(f"n={n}: {rep.status}, residual {res:.1e}, Q rel. error {qerr:.1e}")
    dt = time.perf_counter() - t0
    ok &= dt < 900
    assert report(9, ok, "; ".join(parts) + f"; {dt:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
