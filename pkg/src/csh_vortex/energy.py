"""Action functional, reduced functional, its gradient and diagnostics.

The state is ``v = c + w`` with mean-zero fields ``w`` of shape
``(n, n1, n2)`` and constants ``c``.  ``U = exp(u0 + v)`` componentwise.
All nonlinear terms are evaluated pointwise on the grid and integrated with
the rectangle rule, so :func:`reduced_J` and :func:`gradient_J` are exactly
compatible at the discrete level.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cartan import CartanData, build_cartan
from .constraints import (ConstantsSolution, Weights, exponentials, is_admissible,
                          solve_constants, verify_lemma1, weights_from_exponentials)
from .errors import BoundaryError, GradientUndefinedError
from .torus import TorusGrid, VortexConfig, background_fields, integrate, laplacian

__all__ = [
    "Params",
    "State",
    "Evaluation",
    "make_params",
    "make_state",
    "evaluate",
    "action_I",
    "reduced_J",
    "gradient_J",
    "pde_residual",
    "diagnostics",
    "diagnostics_json",
]


@dataclass(frozen=True)
class Params:
    cartan: CartanData
    grid: TorusGrid
    vortices: VortexConfig
    u0: np.ndarray = field(repr=False)
    lam: float
    constants_tol: float = 1e-10
    # margins below margin_floor * area^2 count as the boundary of the admissible set
    margin_floor: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def n(self):
        return self.cartan.n

    @property
    def b(self):
        return self.cartan.b

    @property
    def area(self):
        return self.grid.area

    @property
    def lambda0(self):
        return self.cartan.lambda0

    @property
    def admissibility_threshold(self):
        """Smallest ``lam`` for which ``w = -u0`` is strictly admissible."""
        return float(np.max(4 * self.n * self.b / self.area))

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


def make_params(grid, vortices, lam, *, n=None, **kwargs):
    """Assemble :class:`Params`; ``u0`` is rebuilt from ``vortices``."""
    if not isinstance(vortices, VortexConfig):
        vortices = VortexConfig(vortices)
    n = vortices.n if n is None else n
    if vortices.n != n:
        raise ValueError(f"vortex config has {vortices.n} components, rank is {n}")
    cartan = build_cartan(n).with_sources(vortices.N, grid.area)
    u0 = background_fields(grid, vortices)
    return Params(cartan=cartan, grid=grid, vortices=vortices, u0=u0, lam=float(lam), **kwargs)


@dataclass(frozen=True)
class State:
    w: np.ndarray
    c: np.ndarray

    @property
    def v(self):
        return self.w + self.c[:, None, None]

    def U(self, params):
        return exponentials(params.u0, self.v)


def make_state(w, c, params, mean_tol=1e-10):
    w = params.grid.check(np.asarray(w, dtype=float))
    c = np.asarray(c, dtype=float)
    if w.shape[0] != params.n or c.shape != (params.n,):
        raise ValueError("state does not match the rank")
    if np.any(np.abs(integrate(params.grid, w)) > mean_tol * params.area):
        raise ValueError("w must have zero mean")
    if not np.all(np.isfinite(c)):
        raise ValueError("constants must be finite")
    return State(w=w, c=c)


def _quadratic(params, w):
    """``(1/2) sum_d int d_d w^T M d_d w`` and ``-Lap(M w)``."""
    LMw = -laplacian(params.grid, np.einsum("ij,jab->iab", params.cartan.M, w))
    return 0.5 * float(np.sum(integrate(params.grid, w * LMw))), LMw


def _nonlinear(params, U):
    """``U * (Stilde (U - 1))`` componentwise."""
    return U * np.einsum("ij,jab->iab", params.cartan.Stilde, U - 1.0)


@dataclass
class Evaluation:
    """Everything computed at one ``w``: constants, functional, gradient."""

    w: np.ndarray
    weights: Weights
    margins: np.ndarray
    constants: ConstantsSolution
    J: float
    U: np.ndarray
    LMw: np.ndarray
    quad: float
    J_reduced: float = math.nan

    @property
    def c(self):
        return self.constants.c

    @property
    def state(self):
        return State(w=self.w, c=self.constants.c)

    def gradient(self, params):
        g = self.LMw + params.lam * _nonlinear(params, self.U)
        return g - g.mean(axis=(-2, -1), keepdims=True)


def evaluate(w, params, guess=None):
    """Solve for ``c(w)`` and evaluate the reduced functional.

    Raises :class:`BoundaryError` (carrying the margins) when ``w`` is not
    admissible.
    """
    grid = params.grid
    w = grid.check(w)
    E = exponentials(params.u0, w)
    weights = weights_from_exponentials(E, grid)
    ok, margins = is_admissible(weights, params.b, params.lam, params.n)
    if not ok:
        raise BoundaryError("w is outside the admissible set", margins=margins)
    sol = solve_constants(weights, params.b, params.lam, params.n, params.area,
                          tol=params.constants_tol, guess=guess)
    quad, LMw = _quadratic(params, w)
    n = params.n
    i = np.arange(1, n + 1)
    potential = params.lam * float(np.sum(i * (n + 1 - i) / (2 * n) * (params.area - sol.t * weights.a)))
    J_reduced = quad + potential + float(params.b @ sol.c) - 0.5 * float(np.sum(params.b))
    U = sol.t[:, None, None] * E
    # The action form is stationary in c on the constraint, so the residual
    # error of the constants enters only at second order; the reduced form
    # above is first-order sensitive and is kept for cross-checking.
    Um1 = U - 1.0
    pot = 0.5 * params.lam * float(np.sum(integrate(
        grid, Um1 * np.einsum("ij,jab->iab", params.cartan.Stilde, Um1))))
    J = quad + pot + float(params.b @ sol.c)
    return Evaluation(w=w, weights=weights, margins=margins, constants=sol, J=J, U=U,
                      LMw=LMw, quad=quad, J_reduced=J_reduced)


def reduced_J(w, params):
    """Return ``(J(w), c(w))``, with ``J(w) = I(c(w) + w)``."""
    ev = evaluate(w, params)
    return ev.J, ev.c


def gradient_J(w, params):
    """L2 gradient of ``J`` (mean-zero per component).

    The variation of ``c(w)`` drops out because ``c(w)`` satisfies the
    integrated equations, so only ``-Lap(M w) + lam U Stilde(U - 1)`` remains.
    """
    ev = evaluate(w, params)
    floor = params.margin_floor * params.area ** 2
    if np.any(ev.margins <= floor):
        raise GradientUndefinedError("gradient undefined on the boundary of the admissible set",
                                     margins=ev.margins)
    return ev.gradient(params)


def action_I(state, params):
    """Unconstrained action at ``v = c + w``."""
    U = state.U(params)
    quad, _ = _quadratic(params, state.w)
    Um1 = U - 1.0
    pot = 0.5 * params.lam * float(np.sum(integrate(
        params.grid, Um1 * np.einsum("ij,jab->iab", params.cartan.Stilde, Um1))))
    lin = float(np.sum(params.b * integrate(params.grid, state.v))) / params.area
    return quad + pot + lin


@dataclass(frozen=True)
class Residual:
    norms: np.ndarray
    means: np.ndarray
    field: np.ndarray = field(repr=False)

    @property
    def max(self):
        return float(np.max(self.norms))


def pde_residual(state, params):
    """``Lap(M v) - lam U Stilde(U-1) - b/|Omega|`` per component.

    ``norms`` are L2 norms over the cell, ``means`` the cell averages (these
    vanish exactly when the integrated equations hold).
    """
    U = state.U(params)
    LMv = laplacian(params.grid, np.einsum("ij,jab->iab", params.cartan.M, state.v))
    r = LMv - params.lam * _nonlinear(params, U) - (params.b / params.area)[:, None, None]
    norms = np.sqrt(integrate(params.grid, r * r))
    return Residual(norms=norms, means=r.mean(axis=(-2, -1)), field=r)


def quantized_integrals(state, params):
    """``int (Ktilde U Ktilde (U-1))_i`` and the targets ``-4 pi N_i / lam``."""
    U = state.U(params)
    Kt = params.cartan.Ktilde
    inner = np.einsum("jk,kab->jab", Kt, U - 1.0)
    Q = integrate(params.grid, np.einsum("ij,jab->iab", Kt, U * inner))
    target = -4 * math.pi * params.cartan.Nvec / params.lam
    return Q, target


def diagnostics(state, params):
    """Flat record of the checkable consequences of a solution."""
    U = state.U(params)
    Q, target = quantized_integrals(state, params)
    D = integrate(params.grid, (U - 1.0) ** 2)
    weights = weights_from_exponentials(exponentials(params.u0, state.w), params.grid)
    lemma1_ok, _ = verify_lemma1(weights, state.c, params.area)
    res = pde_residual(state, params)
    lam0 = params.lambda0
    return {
        "lambda": float(params.lam),
        "lambda0": float(lam0),
        "lambda_ratio": float(params.lam / lam0) if lam0 > 0 else math.inf,
        "Q": [float(x) for x in Q],
        "Q_target": [float(x) for x in target],
        "D": [float(x) for x in D],
        "lemma1_ok": bool(lemma1_ok),
        "residual": [float(x) for x in res.norms],
        "residual_mean": [float(x) for x in res.means],
        "c": [float(x) for x in state.c],
    }


def _fmt(obj):
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return json.dumps(str(x))
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def diagnostics_json(record):
    """Serialise a flat record with every float at 17 significant digits."""
    return _fmt(record) + "\n"
