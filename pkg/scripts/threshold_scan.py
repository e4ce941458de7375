"""Where does the interior minimizer stop working?

Part 1 scans lambda/lambda0 downward and reports the minimizer status for
each starting strategy.  At lambda = max_i 4 n b_i/|Omega| the admissible
set has no interior (its defining inequality becomes the reverse of
Cauchy-Schwarz), so every run below that value ends as a boundary trap.

Part 2 is exploratory and not part of the package: starting from the last
converged minimizer, it continues the PDE itself downward in lambda with a
preconditioned Newton-Krylov iteration that ignores admissibility.  The
solutions it finds show that doubly periodic solutions exist below the
minimizer's reach.

    python scripts/threshold_scan.py --n1 64
"""
import argparse

import numpy as np
from scipy.optimize import NoConvergence, newton_krylov
from scipy.sparse.linalg import LinearOperator

from csh_vortex.constraints import compute_weights, is_admissible
from csh_vortex.energy import State, diagnostics, make_params, pde_residual
from csh_vortex.minimize import SolveOptions, solve
from csh_vortex.torus import TorusGrid, VortexConfig

VORTICES = (((0.3, 0.4),), ((0.7, 0.65),))


def pde_continuation(p, v, lam, tol=1e-9):
    """Newton-Krylov on ``Lap(M v) = lam U Stilde(U-1) + b/|Omega|``."""
    q = p.with_lambda(lam)
    n, shape = p.n, p.grid.shape
    # per-mode inverse of the linearization at U = 1
    A = -p.grid.ksq[..., None, None] * p.cartan.M - lam * p.cartan.Stilde
    Ainv = np.linalg.inv(A)

    def F(x):
        v = x.reshape((n,) + shape)
        return pde_residual(State(w=v - v.mean(axis=(1, 2), keepdims=True),
                                  c=v.mean(axis=(1, 2))), q).field.ravel()

    def prec(r):
        rh = np.fft.rfft2(np.asarray(r).reshape((n,) + shape))
        xh = np.einsum("abij,jab->iab", Ainv, rh)
        return np.fft.irfft2(xh, s=shape).ravel()

    M = LinearOperator((n * shape[0] * shape[1],) * 2, matvec=prec, dtype=float)
    x = newton_krylov(F, v.ravel(), inner_M=M, f_tol=tol * lam, method="gmres", maxiter=100)
    v = np.asarray(x).reshape((n,) + shape)
    state = State(w=v - v.mean(axis=(1, 2), keepdims=True), c=v.mean(axis=(1, 2)))
    return q, state


def main():
    ap = argparse.ArgumentParser(description="minimizer threshold scan")
    ap.add_argument("--n1", type=int, default=64)
    ap.add_argument("--multiples", type=float, nargs="+",
                    default=[2.6, 2.4, 2.3, 2.2, 2.15, 2.1, 2.05, 2.0])
    ap.add_argument("--continue-to", type=float, nargs="+", default=[2.0, 1.8, 1.5, 1.2])
    args = ap.parse_args()

    grid = TorusGrid(1.0, 1.0, args.n1, args.n1)
    p = make_params(grid, VortexConfig(VORTICES), 1.0)
    thr = p.admissibility_threshold / p.lambda0
    print(f"lambda0 = {p.lambda0:.6f}; admissible interior empty at or below {thr:.6g} lambda0\n")

    print(f"{'lam/lam0':>9} {'limit':>18} {'scalar-cs':>18} {'D_1':>10}")
    last = None
    for m in sorted(args.multiples, reverse=True):
        q = p.with_lambda(m * p.lambda0)
        cols, D = [], ""
        for mode in ("limit", "scalar-cs"):
            state, rep = solve(q, SolveOptions(init_mode=mode))
            cols.append(rep.status)
            if rep.converged:
                D = f"{rep.diagnostics['D'][0]:10.5g}"
                last = (m, state)
        print(f"{m:9.3g} {cols[0]:>18} {cols[1]:>18} {D}")

    if last is None:
        return
    m0, state = last
    print(f"\nexploratory: PDE continuation from {m0:g} lambda0 (admissibility not enforced)")
    print(f"{'lam/lam0':>9} {'residual':>10} {'D_1':>10} {'Q_1/target':>11} {'admissible':>11}")
    v = state.v
    for m in sorted(args.continue_to, reverse=True):
        try:
            q, s = pde_continuation(p, v, m * p.lambda0)
        except (NoConvergence, ValueError):
            print(f"{m:9.3g}  Newton-Krylov did not converge")
            break
        d = diagnostics(s, q)
        ok, _ = is_admissible(compute_weights(q.u0, s.w, q.grid), q.b, q.lam, q.n)
        print(f"{m:9.3g} {max(d['residual']):10.2e} {d['D'][0]:10.5g} "
              f"{d['Q'][0] / d['Q_target'][0]:11.6f} {str(bool(ok)):>11}")
        v = s.v


if __name__ == "__main__":
    main()
