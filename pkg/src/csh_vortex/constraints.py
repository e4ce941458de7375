"""Integral weights, the admissible set and the quadratic constants system.

Given mean-zero fields ``w`` the constants ``c_i`` (``t_i = exp(c_i)``) are
fixed by the integrated equations, one quadratic per component::

    a_ii t_i^2 - t_i P_i(t_{i-1}, t_{i+1}) + kappa_i b_i / lam = 0

whose larger root is ``t_i = f_i(t_{i-1}, t_{i+1})``.  The unique positive
fixed point of ``t = f(t)`` is found by nested one-dimensional root finds:
``t_1 = f_1(t_2)`` is explicit, every intermediate level ``t_i = g_i(t_{i+1})``
is the zero of the increasing map ``y -> y - f_i(g_{i-1}(y), t_{i+1})``, and the
outer level is the zero of ``F(t_n) = t_n - f_n(g_{n-1}(t_n))``.  Each level
uses a safeguarded Newton-bisection iteration; implicit derivatives
``g_i'`` come for free from the chain rule and are used both for Newton
steps and to predict the next inner solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cartan import constraint_coefficients
from .errors import (BoundaryError, ConstraintViolationError, NonConvergenceError,
                     StateRangeError)
from .torus import integrate

__all__ = [
    "EXP_GUARD",
    "Weights",
    "ConstantsSolution",
    "compute_weights",
    "weights_from_samples",
    "is_admissible",
    "solve_constants",
    "constants_residuals",
    "branch_values",
    "outer_map",
    "verify_lemma1",
    "lemma2_bound",
]

EXP_GUARD = 40.0


@dataclass(frozen=True)
class Weights:
    """``a[i] = int e^{u0_i+w_i}``, ``adiag[i] = int e^{2(u0_i+w_i)}``,
    ``aoff[i] = int e^{u0_i+u0_{i+1}+w_i+w_{i+1}}``."""

    a: np.ndarray
    adiag: np.ndarray
    aoff: np.ndarray

    @property
    def n(self):
        return self.a.size

    def holder_gaps(self, area):
        """Nonnegative for genuine integrals (Cauchy-Schwarz)."""
        return (area * self.adiag - self.a ** 2,
                self.adiag[:-1] * self.adiag[1:] - self.aoff ** 2)


@dataclass(frozen=True)
class ConstantsSolution:
    c: np.ndarray
    t: np.ndarray
    residuals: np.ndarray
    evaluations: int = 0
    accelerated: bool = False


def exponentials(u0, w):
    """``exp(u0 + w)`` with the overflow guard."""
    s = np.asarray(u0) + np.asarray(w)
    top = s.reshape(s.shape[0], -1).max(axis=1) if s.ndim == 3 else np.array([s.max()])
    bad = np.flatnonzero(~(top <= EXP_GUARD))
    if bad.size:
        i = int(bad[0])
        raise StateRangeError(f"state out of range: u0+w exceeds {EXP_GUARD} in component {i + 1}",
                              component=i)
    return np.exp(s)


def compute_weights(u0, w, grid, mean_tol=1e-10):
    """Quadrature weights of the constants system for the state ``w``."""
    u0 = grid.check(u0)
    w = grid.check(w)
    means = integrate(grid, w)
    if np.any(np.abs(means) > mean_tol * grid.area):
        raise ValueError(f"w must have zero mean; got integrals {means}")
    E = exponentials(u0, w)
    return weights_from_exponentials(E, grid)


def weights_from_exponentials(E, grid):
    return Weights(
        a=integrate(grid, E),
        adiag=integrate(grid, E * E),
        aoff=integrate(grid, E[:-1] * E[1:]),
    )


def weights_from_samples(E, area):
    """Weights of the discrete measure putting mass ``area/m`` on each of the
    ``m`` columns of ``E`` (shape ``(n, m)``).  Used for randomized tests."""
    E = np.asarray(E, dtype=float)
    return Weights(
        a=E.mean(axis=1) * area,
        adiag=(E * E).mean(axis=1) * area,
        aoff=(E[:-1] * E[1:]).mean(axis=1) * area,
    )


def is_admissible(weights, b, lam, n):
    """Return ``(ok, margins)`` with ``margins = a^2 - (4 n b / lam) a_ii``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    b = np.asarray(b, dtype=float)
    margins = weights.a ** 2 - (4 * n * b / lam) * weights.adiag
    return bool(np.all(margins >= 0)), margins


class _System:
    """Coefficients and branch functions of the constants system."""

    def __init__(self, weights, b, lam, n):
        if weights.n != n:
            raise ValueError(f"weights have {weights.n} components, expected {n}")
        own, left, right, kappa = constraint_coefficients(n)
        self.n = n
        self.A = np.asarray(weights.adiag, dtype=float)
        self.base = own * weights.a
        # coupling of row i to its neighbours, already multiplied by a_{i,i+-1}
        self.cl = np.zeros(n)
        self.cr = np.zeros(n)
        self.cl[1:] = left[1:] * weights.aoff
        self.cr[:-1] = right[:-1] * weights.aoff
        self.q = kappa * np.asarray(b, dtype=float) / lam
        self.evals = 0

    def P(self, i, tl, tr):
        return self.base[i] + self.cl[i] * tl + self.cr[i] * tr

    def branch(self, i, tl, tr):
        """``(f_i, df_i/dt_{i-1}, df_i/dt_{i+1})`` on the ``+`` branch."""
        self.evals += 1
        A = self.A[i]
        P = self.P(i, tl, tr)
        disc = P * P - 4.0 * A * self.q[i]
        if disc < 0:
            raise ConstraintViolationError(
                f"negative discriminant {disc:.3e} in component {i + 1}")
        s = math.sqrt(disc)
        f = (P + s) / (2.0 * A)
        if s > 0:
            dfdP = f / s
        else:
            dfdP = math.inf
        return f, self.cl[i] * dfdP, self.cr[i] * dfdP

    def f_all(self, t):
        n = self.n
        out = np.empty(n)
        for i in range(n):
            out[i] = self.branch(i, t[i - 1] if i else 0.0, t[i + 1] if i < n - 1 else 0.0)[0]
        return out

    def residuals(self, t):
        t = np.asarray(t, dtype=float)
        tl = np.concatenate([[0.0], t[:-1]])
        tr = np.concatenate([t[1:], [0.0]])
        P = self.base + self.cl * tl + self.cr * tr
        return self.A * t * t - t * P + self.q


class _Nested:
    """Nested implicit-function solver.  Levels are 0-based: level ``i``
    returns ``t_i`` as a function of ``t_{i+1}`` (the last level has no right
    neighbour and solves the outer equation)."""

    def __init__(self, sys, tol, max_iter, guess=None):
        self.sys = sys
        self.n = sys.n
        self.tol = tol
        self.inner_tol = tol / 10.0
        self.max_iter = max_iter
        self.t = np.zeros(self.n) if guess is None else np.array(guess, dtype=float)
        self.deriv = np.zeros(self.n)
        self.last_x = np.full(self.n, np.nan)
        self.have_guess = guess is not None

    def level(self, i, x):
        """Set ``t_{i+1} = x`` and resolve ``t_0..t_i``.  Returns ``(t_i, dg_i/dx)``."""
        sys = self.sys
        if i == 0:
            f, _, dr = sys.branch(0, 0.0, x)
            self.t[0] = f
            self.deriv[0] = dr
            self.last_x[0] = x
            return f, dr
        y = self._predict(i, x)
        y, dFy, dr = self._root(i, x, y, self.inner_tol)
        self.t[i] = y
        self.deriv[i] = dr / dFy
        self.last_x[i] = x
        return y, self.deriv[i]

    def _predict(self, i, x):
        if not math.isnan(self.last_x[i]):
            y = self.t[i] + self.deriv[i] * (x - self.last_x[i])
            if y > 0:
                return y
            return self.t[i]
        if self.have_guess and self.t[i] > 0:
            return self.t[i]
        return 1.0

    def _F(self, i, y, x):
        """``F_i(y) = y - f_i(g_{i-1}(y), x)`` with its derivative in ``y``."""
        tl, dg = self.level(i - 1, y)
        f, dl, dr = self.sys.branch(i, tl, x)
        return y - f, 1.0 - dl * dg, dr

    def _root(self, i, x, y, tol):
        """Safeguarded Newton-bisection for the increasing map ``F_i``.

        ``F_i(0) < 0`` always, so ``lo = 0`` starts the bracket; ``hi`` is
        found by doubling when Newton does not supply one.
        """
        lo, hi = 0.0, math.inf
        for _ in range(self.max_iter):
            F, dF, dr = self._F(i, y, x)
            if F < 0:
                lo = y
            elif F > 0:
                hi = y
            else:
                return y, dF, dr
            scale = tol * max(1.0, y)
            if dF > 0 and math.isfinite(dF):
                step = F / dF
                if abs(step) <= scale:
                    return y, dF, dr
                y_new = y - step
            else:
                y_new = math.nan
            if not (lo < y_new < hi):
                y_new = 0.5 * (lo + hi) if math.isfinite(hi) else max(2.0 * y, 2.0 * lo, 1.0)
            if hi - lo <= scale:
                return y, dF, dr
            y = y_new
        raise NonConvergenceError(
            f"constants solver: level {i + 1} did not converge in {self.max_iter} iterations",
            diagnostics={"level": i + 1, "bracket": (lo, hi), "t": self.t.copy()})

    def solve(self):
        n = self.n
        y = self._predict(n - 1, 0.0) if self.have_guess else 1.0
        y, dF, _ = self._root(n - 1, 0.0, y, self.tol)
        # re-resolve the chain at the accepted outer value
        self.level(n - 2, y)
        self.t[n - 1] = y
        return self.t.copy()

    def outer(self, y):
        """``F(t_n)`` for diagnostics."""
        tl, _ = self.level(self.n - 2, y)
        f, _, _ = self.sys.branch(self.n - 1, tl, 0.0)
        return y - f


def _accelerate(sys, sweeps=30, newton_iter=30):
    """Monotone Gauss-Seidel sweeps from ``t = 0`` followed by full-system
    Newton on ``t - f(t)``.  Returns ``None`` when anything goes astray; the
    nested solver then runs unaided."""
    n = sys.n
    t = np.zeros(n)
    try:
        for _ in range(sweeps):
            for i in range(n):
                t[i] = sys.branch(i, t[i - 1] if i else 0.0, t[i + 1] if i < n - 1 else 0.0)[0]
        for _ in range(newton_iter):
            G = np.empty(n)
            J = np.eye(n)
            for i in range(n):
                f, dl, dr = sys.branch(i, t[i - 1] if i else 0.0, t[i + 1] if i < n - 1 else 0.0)
                G[i] = t[i] - f
                if i:
                    J[i, i - 1] = -dl
                if i < n - 1:
                    J[i, i + 1] = -dr
            step = np.linalg.solve(J, G)
            if not np.all(np.isfinite(step)):
                return None
            lam = 1.0
            while np.any(t - lam * step <= 0):
                lam *= 0.5
                if lam < 1e-8:
                    return None
            t = t - lam * step
            if np.max(np.abs(step)) <= 1e-15 * max(1.0, np.max(t)):
                break
    except (ConstraintViolationError, np.linalg.LinAlgError, FloatingPointError):
        return None
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        return None
    return t


def solve_constants(weights, b, lam, n, area, tol=1e-10, *, t_tol=1e-12, max_iter=200,
                    accelerate=False, guess=None):
    """Solve the constants system for ``c`` (``t = e^c``).

    ``tol`` bounds the residuals of the quadratic equations; ``t_tol`` is
    the (relative) tolerance of the outer root find, inner levels use
    ``t_tol/10``.  ``guess`` (a previous ``t``) seeds every level; with
    ``accelerate`` a Gauss-Seidel/Newton pre-solve supplies the seeds instead.
    Either way the nested bracketing scheme has the final word.
    """
    b = np.asarray(b, dtype=float)
    ok, margins = is_admissible(weights, b, lam, n)
    if not ok:
        raise BoundaryError("weights are not admissible", margins=margins)
    if not np.any(b) and all(np.allclose(v, area, rtol=0, atol=1e-14 * area)
                             for v in (weights.a, weights.adiag, weights.aoff)):
        t = np.ones(n)
        return ConstantsSolution(c=np.zeros(n), t=t, residuals=_System(weights, b, lam, n).residuals(t))
    sys = _System(weights, b, lam, n)
    start = guess
    accelerated = False
    if start is None and accelerate:
        start = _accelerate(sys)
        accelerated = start is not None
    t = _Nested(sys, t_tol, max_iter, guess=start).solve()
    res = sys.residuals(t)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > tol:
        raise NonConvergenceError(
            f"constants residual {np.max(np.abs(res)):.3e} exceeds tolerance {tol:.1e}",
            diagnostics={"t": t, "residuals": res})
    return ConstantsSolution(c=np.log(t), t=t, residuals=res, evaluations=sys.evals,
                             accelerated=accelerated)


def constants_residuals(weights, b, lam, n, t):
    return _System(weights, b, lam, n).residuals(t)


def branch_values(weights, b, lam, n, t):
    """``(plus, minus)`` branch values of every ``f_i`` at the neighbours of ``t``."""
    sys = _System(weights, b, lam, n)
    t = np.asarray(t, dtype=float)
    plus, minus = np.empty(n), np.empty(n)
    for i in range(n):
        P = sys.P(i, t[i - 1] if i else 0.0, t[i + 1] if i < n - 1 else 0.0)
        s = math.sqrt(max(P * P - 4 * sys.A[i] * sys.q[i], 0.0))
        plus[i] = (P + s) / (2 * sys.A[i])
        minus[i] = (P - s) / (2 * sys.A[i])
    return plus, minus


def outer_map(weights, b, lam, n, ys):
    """Sample the outer function ``F(t_n)`` at the points ``ys``."""
    nested = _Nested(_System(weights, b, lam, n), 1e-12, 200)
    return np.array([nested.outer(float(y)) for y in ys])


def verify_lemma1(weights, solution, area, rtol=1e-10):
    """Check ``e^{c_i} a_i <= |Omega|`` and ``e^{c_i} <= 1``.

    Returns ``(ok, index)`` where ``index`` is the first violating component
    (0-based) or ``None``.
    """
    # accepts a ConstantsSolution or the constants c themselves
    t = np.asarray(solution.t if hasattr(solution, "t") else np.exp(solution), dtype=float)
    bad = np.flatnonzero((t * weights.a > area * (1 + rtol)) | (t > 1 + rtol))
    if bad.size:
        return False, int(bad[0])
    return True, None


def lemma2_bound(grid, u0_i, w_i, lam, n, b_i, s):
    """Right-hand side of the interpolation bound
    ``a_i <= (lam/(4 n b_i))^{(1-s)/s} (int e^{s(u0_i+w_i)})^{1/s}``."""
    As = integrate(grid, np.exp(s * (u0_i + w_i)))
    return (lam / (4 * n * b_i)) ** ((1 - s) / s) * As ** (1 / s)
