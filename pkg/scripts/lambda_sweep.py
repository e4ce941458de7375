"""Deviation D_i = int (e^{u_i} - 1)^2 as lambda grows.

Sweeps the two-vortex SU(3) configuration over multiples of lambda0 and
prints D together with the ratio to the previous converged row; the decay
should be roughly 1/lambda.

    python scripts/lambda_sweep.py --multiples 2.2 4 8 16 32
"""
import argparse

from csh_vortex.energy import make_params
from csh_vortex.minimize import SolveOptions, lambda_sweep
from csh_vortex.torus import TorusGrid, VortexConfig

VORTICES = (((0.3, 0.4),), ((0.7, 0.65),))


def main():
    ap = argparse.ArgumentParser(description="lambda sweep of the SU(3) deviation")
    ap.add_argument("--n1", type=int, default=64)
    ap.add_argument("--multiples", type=float, nargs="+", default=[2, 2.2, 4, 8, 16, 32])
    ap.add_argument("--init", default="scalar-cs", choices=["limit", "scalar-cs"])
    ap.add_argument("--cold", action="store_true")
    args = ap.parse_args()

    grid = TorusGrid(1.0, 1.0, args.n1, args.n1)
    p = make_params(grid, VortexConfig(VORTICES), 1.0)
    mults = sorted(args.multiples)
    res = lambda_sweep(p, [m * p.lambda0 for m in mults], SolveOptions(init_mode=args.init),
                       warm_start=not args.cold)

    print(f"{'lam/lam0':>9} {'status':>18} {'iters':>6} {'D_1':>12} {'D_2':>12} {'lam*D_1':>10} {'ratio':>7}")
    prev = None
    for m, rep in zip(mults, res.reports):
        if not rep.converged:
            print(f"{m:9.3g} {rep.status:>18} {rep.iterations:6d}")
            continue
        D = rep.diagnostics["D"]
        ratio = "" if prev is None else f"{D[0] / prev:7.3f}"
        print(f"{m:9.3g} {rep.status:>18} {rep.iterations:6d} {D[0]:12.6g} {D[1]:12.6g} "
              f"{m * p.lambda0 * D[0]:10.4f} {ratio}")
        prev = D[0]
    print(f"least converged lambda: {res.least_converged}")


if __name__ == "__main__":
    main()
