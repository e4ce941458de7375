"""Interior minimization of the reduced functional over the admissible set.

The optimizer is L-BFGS in the L2 inner product, with the spectral operator
``|k|^2 M + lam Stilde`` (the Hessian at ``U = 1``) as initial inverse-Hessian
model, and a strong-Wolfe line search in which any trial point on or outside
the admissible set counts as ``+inf``.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import newton_krylov
from scipy.sparse.linalg import LinearOperator

from .constraints import verify_lemma1
from .energy import State, diagnostics, evaluate, pde_residual
from .errors import (BoundaryError, ConstraintViolationError, NonConvergenceError,
                     StateRangeError)
from .torus import integrate, laplacian

__all__ = [
    "SolveOptions",
    "SolveReport",
    "SweepResult",
    "initial_guess",
    "minimize_J",
    "lambda_sweep",
    "solve",
]

log = logging.getLogger(__name__)

_EVAL_ERRORS = (BoundaryError, ConstraintViolationError, NonConvergenceError, StateRangeError,
                FloatingPointError)


@dataclass
class SolveOptions:
    gtol: float = 1e-8
    max_iter: int = 1000
    memory: int = 12
    init_mode: str = "limit"
    mu: float | None = None
    c1: float = 1e-4
    c2: float = 0.9
    descent_slack: float = 1e-12
    max_line_search: int = 40


@dataclass
class SolveReport:
    converged: bool
    status: str
    iterations: int
    J: float
    grad_norm: float
    margins: np.ndarray
    residuals: np.ndarray | None
    diagnostics: dict | None
    wall_time: float
    message: str = ""
    coercivity_constant: float = math.nan
    history: dict = field(default_factory=dict, repr=False)

    def to_record(self):
        """Diagnostics plus solver metadata, without timing (deterministic)."""
        rec = dict(self.diagnostics or {})
        rec.update({
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "J": self.J,
            "grad_norm": self.grad_norm,
            "margins": [float(x) for x in np.atleast_1d(self.margins)],
            "coercivity_constant": self.coercivity_constant,
            "lemma1_all_iterates": bool(all(self.history.get("lemma1", [True]))),
        })
        return rec


def _relax_scalar(grid, u0_i, N_i, mu, tol=1e-9):
    """Solve ``Lap v = mu e^{u0+v}(e^{u0+v} - 1) + 4 pi N/|Omega|`` by
    Newton-Krylov from ``v = -u0``."""
    if N_i == 0 and not np.any(u0_i):
        return np.zeros(grid.shape)
    src = 4 * math.pi * N_i / grid.area

    def F(v):
        e = np.exp(u0_i + v)
        return laplacian(grid, v) - mu * e * (e - 1.0) - src

    denom = -grid.ksq - mu

    def prec(r):
        r = np.asarray(r).reshape(grid.shape)
        return np.fft.irfft2(np.fft.rfft2(r) / denom, s=grid.shape).ravel()

    M = LinearOperator((grid.n1 * grid.n2,) * 2, matvec=prec, dtype=float)
    v = newton_krylov(F, -u0_i, inner_M=M, f_tol=tol * max(1.0, mu), method="gmres",
                      maxiter=200)
    return np.asarray(v)


def initial_guess(params, mode="limit", mu=None):
    """Interior starting point for the minimization.

    ``"limit"`` returns ``w = -u0`` (so ``U = 1`` and all weights equal the
    area); it is strictly admissible only above
    ``params.admissibility_threshold``.  ``"scalar-cs"`` solves the
    decoupled scalar vortex equation per component with parameter ``mu``
    (default ``2 lam``) and removes the mean.
    """
    grid = params.grid
    if mode == "limit":
        thr = params.admissibility_threshold
        if np.any(params.b) and params.lam <= thr:
            raise BoundaryError(
                f"initial guess w=-u0 is not interior: lambda={params.lam:.6g} <= "
                f"max 4 n b_i/|Omega| = {thr:.6g}", threshold=thr)
        w = -params.u0.copy()
    elif mode == "scalar-cs":
        mu = 2 * params.lam if mu is None else mu
        w = np.stack([_relax_scalar(grid, params.u0[i], int(params.cartan.Nvec[i]), mu)
                      for i in range(params.n)])
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    return w - w.mean(axis=(-2, -1), keepdims=True)


class _Preconditioner:
    """Inverse of ``|k|^2 M + lam Stilde`` applied mode by mode."""

    def __init__(self, params):
        grid = params.grid
        M = params.cartan.M
        S = params.cartan.Stilde
        H = grid.ksq[..., None, None] * M + params.lam * S
        self.Hinv = np.linalg.inv(H)
        self.Hinv[0, 0] = 0.0
        self.shape = grid.shape

    def __call__(self, g):
        gh = np.fft.rfft2(g)
        xh = np.einsum("abij,jab->iab", self.Hinv, gh)
        return np.fft.irfft2(xh, s=self.shape)


def _dot(grid, a, b):
    return float(np.sum(a * b)) * grid.cell_area


def _project(w):
    return w - w.mean(axis=(-2, -1), keepdims=True)


class _Objective:
    def __init__(self, params):
        self.params = params
        self.floor = params.margin_floor * params.area ** 2
        self.guess = None
        self.nfev = 0
        self.all_inadmissible = True

    def __call__(self, w):
        self.nfev += 1
        try:
            ev = evaluate(w, self.params, guess=self.guess)
        except _EVAL_ERRORS:
            return None
        if np.any(ev.margins <= self.floor):
            return None
        self.all_inadmissible = False
        return ev


def _line_search(obj, w, d, ev0, g0, opts):
    """Strong-Wolfe search (bracketing + zoom).  Returns ``(alpha, ev, g)``
    or ``None``."""
    grid = obj.params.grid
    f0 = ev0.J
    slope0 = _dot(grid, g0, d)
    slack = opts.descent_slack * max(1.0, abs(f0))
    cache = {}

    def phi(a):
        if a not in cache:
            ev = obj(w + a * d)
            if ev is None:
                cache[a] = (math.inf, math.nan, None, None)
            else:
                g = ev.gradient(obj.params)
                cache[a] = (ev.J, _dot(grid, g, d), ev, g)
        return cache[a]

    def armijo_fails(a, fa):
        return not (fa <= f0 + opts.c1 * a * slope0 + slack)

    def zoom(lo, hi):
        f_lo = phi(lo)[0] if lo > 0 else f0
        for _ in range(opts.max_line_search):
            f_hi, d_hi = phi(hi)[:2] if hi > 0 else (f0, slope0)
            d_lo = phi(lo)[1] if lo > 0 else slope0
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                # cubic interpolation on [lo, hi]
                d1 = d_lo + d_hi - 3 * (f_lo - f_hi) / (lo - hi)
                rad = d1 * d1 - d_lo * d_hi
                if rad >= 0:
                    d2 = math.copysign(math.sqrt(rad), hi - lo)
                    a = hi - (hi - lo) * (d_hi + d2 - d1) / (d_hi - d_lo + 2 * d2)
            lo_b, hi_b = min(lo, hi), max(lo, hi)
            width = hi_b - lo_b
            if a is None or not (lo_b + 0.1 * width <= a <= hi_b - 0.1 * width):
                a = 0.5 * (lo + hi)
            fa, da, ev, g = phi(a)
            if armijo_fails(a, fa) or fa >= f_lo + slack:
                hi = a
            else:
                if abs(da) <= -opts.c2 * slope0:
                    return a
                if da * (hi - lo) >= 0:
                    hi = lo
                lo = a
                f_lo = fa
            if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
                break
        return lo if lo > 0 else None

    a_prev, f_prev = 0.0, f0
    a = 1.0
    for i in range(opts.max_line_search):
        fa, da, ev, g = phi(a)
        if not math.isfinite(fa):
            # inadmissible trial: the minimizer along d lies before it
            res = zoom(a_prev, a)
            break
        if armijo_fails(a, fa) or (i > 0 and fa >= f_prev + slack):
            res = zoom(a_prev, a)
            break
        if abs(da) <= -opts.c2 * slope0:
            res = a
            break
        if da >= 0:
            res = zoom(a, a_prev)
            break
        a_prev, f_prev = a, fa
        a = 2.0 * a
    else:
        res = a_prev if a_prev > 0 else None
    if res is None:
        return None
    fa, da, ev, g = phi(res)
    if ev is None:
        return None
    return res, ev, g


def minimize_J(params, init, options=None):
    """Minimize the reduced functional from the admissible starting point ``init``.

    Returns ``(state, report)``.  Failures are reported, not raised: a
    start outside the admissible set or a search that cannot move without
    leaving it gives ``status="boundary_trap"``.
    """
    opts = options or SolveOptions()
    grid = params.grid
    t0 = time.perf_counter()
    obj = _Objective(params)
    w = _project(np.asarray(init, dtype=float))
    hist = {"J": [], "grad_norm": [], "min_margin": [], "lemma1": [], "mean_drift": [],
            "coercivity": []}

    def fail(status, message, ev=None, it=0):
        state = ev.state if ev is not None else State(w=w, c=np.full(params.n, math.nan))
        margins = ev.margins if ev is not None else getattr(message, "margins", None)
        return state, SolveReport(
            converged=False, status=status, iterations=it,
            J=ev.J if ev is not None else math.nan,
            grad_norm=hist["grad_norm"][-1] if hist["grad_norm"] else math.nan,
            margins=margins if margins is not None else np.full(params.n, math.nan),
            residuals=None if ev is None else pde_residual(ev.state, params).norms,
            diagnostics=None if ev is None else diagnostics(ev.state, params),
            wall_time=time.perf_counter() - t0, message=str(message),
            coercivity_constant=max(hist["coercivity"], default=math.nan), history=hist)

    try:
        ev = evaluate(w, params)
    except BoundaryError as exc:
        state, rep = fail("boundary_trap", exc)
        if exc.margins is not None:
            rep.margins = exc.margins
        return state, rep
    except _EVAL_ERRORS as exc:
        return fail("evaluation_error", exc)
    if np.any(ev.margins <= obj.floor):
        state, rep = fail("boundary_trap", "initial state lies within the margin floor of the boundary")
        rep.margins = ev.margins
        return state, rep

    precond = _Preconditioner(params)
    alpha0 = float(np.linalg.eigvalsh(params.cartan.M)[0])
    S, Y, RHO = [], [], []
    g = ev.gradient(params)
    status, message = "max_iter", "iteration cap reached"
    it = 0
    restarted = False
    while True:
        gnorm = math.sqrt(_dot(grid, g, g))
        lemma_ok, _ = verify_lemma1(ev.weights, ev.constants, params.area)
        grad_sq = float(np.sum(integrate(grid, w * -laplacian(grid, w))))
        hist["J"].append(ev.J)
        hist["grad_norm"].append(gnorm)
        hist["min_margin"].append(float(np.min(ev.margins)))
        hist["lemma1"].append(bool(lemma_ok))
        hist["mean_drift"].append(float(np.max(np.abs(integrate(grid, w)))))
        hist["coercivity"].append(alpha0 / 4 * grad_sq - ev.J)
        if gnorm <= opts.gtol:
            status, message = "converged", "gradient tolerance reached"
            break
        if it >= opts.max_iter:
            break
        # two-loop recursion with the spectral model as H0
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * _dot(grid, s, q)
            alphas.append(a)
            q -= a * y
        r = precond(q)
        if S:
            Hy = precond(Y[-1])
            r *= _dot(grid, S[-1], Y[-1]) / _dot(grid, Y[-1], Hy)
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            beta = rho * _dot(grid, y, r)
            r += s * (a - beta)
        d = _project(-r)
        if _dot(grid, g, d) >= 0:
            S, Y, RHO = [], [], []
            d = _project(-precond(g))
        obj.guess = ev.constants.t
        found = _line_search(obj, w, d, ev, g, opts)
        if found is None:
            if S and not restarted:
                # restart from the preconditioned gradient direction
                S, Y, RHO = [], [], []
                restarted = True
                continue
            if obj.all_inadmissible:
                status, message = "boundary_trap", "every trial step leaves the admissible set"
            else:
                status, message = "line_search_failed", "no acceptable step along the search direction"
            break
        restarted = False
        alpha, ev_new, g_new = found
        s = alpha * d
        y = g_new - g
        sy = _dot(grid, s, y)
        if sy > 1e-16 * math.sqrt(_dot(grid, s, s) * _dot(grid, y, y)):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
            if len(S) > opts.memory:
                S.pop(0), Y.pop(0), RHO.pop(0)
        w = _project(ev_new.w)
        ev, g = ev_new, g_new
        if np.any(ev.margins <= 10 * obj.floor):
            S, Y, RHO = [], [], []
        it += 1
        obj.all_inadmissible = True

    state = ev.state
    converged = status == "converged"
    res = pde_residual(state, params)
    report = SolveReport(
        converged=converged, status=status, iterations=it, J=ev.J,
        grad_norm=hist["grad_norm"][-1], margins=ev.margins, residuals=res.norms,
        diagnostics=diagnostics(state, params), wall_time=time.perf_counter() - t0,
        message=message, coercivity_constant=max(hist["coercivity"]), history=hist)
    log.info("lambda=%.6g status=%s iterations=%d J=%.12g |g|=%.3e residual=%.3e",
             params.lam, status, it, ev.J, report.grad_norm, res.max)
    return state, report


@dataclass
class SweepResult:
    lambdas: list
    reports: list
    states: list = field(repr=False)

    @property
    def converged_lambdas(self):
        return [lam for lam, r in zip(self.lambdas, self.reports) if r.converged]

    @property
    def least_converged(self):
        """Empirical upper bound for the existence threshold."""
        c = self.converged_lambdas
        return min(c) if c else None

    def D_series(self):
        return [(lam, r.diagnostics["D"]) for lam, r in zip(self.lambdas, self.reports)
                if r.converged]

    def rows(self):
        out = []
        for lam, r in zip(self.lambdas, self.reports):
            d = r.diagnostics or {}
            out.append({
                "lambda": lam,
                "converged": r.converged,
                "status": r.status,
                "iterations": r.iterations,
                "J": r.J,
                "grad_norm": r.grad_norm,
                "residual_max": float(np.max(r.residuals)) if r.residuals is not None else math.nan,
                "D": d.get("D"),
                "Q": d.get("Q"),
                "Q_target": d.get("Q_target"),
            })
        return out


def _worker_count():
    try:
        return max(1, int(os.environ.get("CSH_THREADS", "1")))
    except ValueError:
        return 1


def solve(params, options, init=None):
    try:
        if init is None:
            init = initial_guess(params, options.init_mode, options.mu)
    except (BoundaryError, NonConvergenceError, StateRangeError, ValueError) as exc:
        state = State(w=np.zeros_like(params.u0), c=np.full(params.n, math.nan))
        margins = getattr(exc, "margins", None)
        return state, SolveReport(
            converged=False, status="boundary_trap" if isinstance(exc, BoundaryError) else "init_failed",
            iterations=0, J=math.nan, grad_norm=math.nan,
            margins=margins if margins is not None else np.full(params.n, math.nan),
            residuals=None, diagnostics=None, wall_time=0.0, message=str(exc))
    return minimize_J(params, init, options)


def lambda_sweep(params, lambdas, options=None, warm_start=True, workers=None):
    """Solve at each coupling in ascending ``lambdas``.

    With ``warm_start`` each run starts from the previous converged ``w``
    when it is admissible at the new coupling, so runs are sequential.
    Cold sweeps run up to ``workers`` (default ``$CSH_THREADS``) solves
    concurrently.  Per-coupling failures are recorded, never raised.
    """
    opts = options or SolveOptions()
    lambdas = [float(x) for x in lambdas]
    if any(x <= 0 for x in lambdas) or lambdas != sorted(lambdas):
        raise ValueError("lambdas must be positive and ascending")
    results = []
    if warm_start:
        prev = None
        for lam in lambdas:
            p = params.with_lambda(lam)
            init = None
            if prev is not None:
                try:
                    ev = evaluate(prev, p)
                    if np.all(ev.margins > p.margin_floor * p.area ** 2):
                        init = prev
                except _EVAL_ERRORS:
                    init = None
            state, rep = solve(p, opts, init)
            rep.history["warm_started"] = init is not None
            if rep.converged:
                prev = state.w
            results.append((state, rep))
    else:
        workers = workers or _worker_count()
        ps = [params.with_lambda(lam) for lam in lambdas]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(lambda p: solve(p, opts), ps))
        else:
            results = [solve(p, opts) for p in ps]
    return SweepResult(lambdas=lambdas, reports=[r for _, r in results],
                       states=[s for s, _ in results])
