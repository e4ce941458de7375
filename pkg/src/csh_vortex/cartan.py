"""Matrices derived from the SU(n+1) Cartan matrix.

Everything is built in exact rational arithmetic (``fractions.Fraction``)
and converted to float64 arrays once.  The rational versions stay available
on ``CartanData.exact`` for identity checks that should not depend on the
conditioning of a numerical inverse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidCoefficientError, RankError

__all__ = [
    "CartanData",
    "GeneralTridiagonal",
    "build_cartan",
    "build_general",
    "source_vector",
    "lambda_lower_bound",
    "constraint_coefficients",
    "identity_report",
    "exact_identities",
    "is_positive_definite",
]


def _to_array(rows):
    return np.array([[float(x) for x in row] for row in rows], dtype=float)


def _matmul(A, B):
    n, m, p = len(A), len(B), len(B[0])
    return [[sum((A[i][k] * B[k][j] for k in range(m)), Fraction(0)) for j in range(p)]
            for i in range(n)]


@dataclass(frozen=True)
class CartanData:
    """All matrices and scalars derived from the rank-``n`` Cartan matrix.

    ``area``, ``Nvec`` and ``b`` are unset (``None``) until
    :meth:`with_sources` attaches a vortex configuration.
    """

    n: int
    K: np.ndarray
    Kinv: np.ndarray
    R: np.ndarray
    Ktilde: np.ndarray
    Ptilde: np.ndarray
    Stilde: np.ndarray
    M: np.ndarray
    exact: dict = field(repr=False, compare=False)
    area: float | None = None
    Nvec: np.ndarray | None = None
    b: np.ndarray | None = None

    def with_sources(self, Nvec, area):
        Nvec = np.asarray(Nvec, dtype=int)
        if Nvec.shape != (self.n,):
            raise ValueError(f"Nvec must have length {self.n}, got shape {Nvec.shape}")
        if area <= 0:
            raise ValueError("area must be positive")
        return replace(self, area=float(area), Nvec=Nvec, b=source_vector(self, Nvec, area))

    @property
    def lambda0(self):
        if self.Nvec is None:
            raise ValueError("no vortex numbers attached; call with_sources first")
        return lambda_lower_bound(self, self.Nvec, self.area)

    @property
    def degenerate(self):
        """True when no vortices are present (b == 0)."""
        return self.b is not None and not np.any(self.b)


@lru_cache(maxsize=64)
def _exact_cartan(n):
    idx = range(1, n + 1)
    K = [[Fraction(2 if i == j else (-1 if abs(i - j) == 1 else 0)) for j in idx] for i in idx]
    Kinv = [[Fraction(min(i, j) * (n + 1 - max(i, j)), n + 1) for j in idx] for i in idx]
    R = [Fraction(i * (n + 1 - i), 2) for i in idx]
    Ktilde = [[K[i][j] * R[j] for j in range(n)] for i in range(n)]
    Ptilde = [Fraction(n, i * (n + 1 - i)) for i in idx]
    Stilde = [[Ktilde[i][j] / Ptilde[i] for j in range(n)] for i in range(n)]
    M = [[Fraction(2, n) * Kinv[i][j] for j in range(n)] for i in range(n)]
    return dict(K=K, Kinv=Kinv, R=R, Ktilde=Ktilde, Ptilde=Ptilde, Stilde=Stilde, M=M)


def build_cartan(n):
    """Build :class:`CartanData` for SU(n+1), ``n >= 2``.

    ``Kinv`` uses the closed form ``i(n+1-j)/(n+1)`` for ``i <= j``, and
    ``Ktilde = K diag(R)`` is split as ``diag(Ptilde) @ Stilde`` with
    ``Stilde`` symmetric.
    """
    if isinstance(n, bool) or int(n) != n:
        raise RankError(f"rank must be an integer, got {n!r}")
    n = int(n)
    if n < 2:
        raise RankError("rank must be ≥ 2")
    ex = _exact_cartan(n)
    return CartanData(
        n=n,
        K=_to_array(ex["K"]),
        Kinv=_to_array(ex["Kinv"]),
        R=np.array([float(x) for x in ex["R"]]),
        Ktilde=_to_array(ex["Ktilde"]),
        Ptilde=np.array([float(x) for x in ex["Ptilde"]]),
        Stilde=_to_array(ex["Stilde"]),
        M=_to_array(ex["M"]),
        exact=ex,
    )


def source_vector(data, Nvec, area=None):
    """Return ``b = 4*pi*M @ Nvec``.

    ``area`` is accepted for signature symmetry with
    :func:`lambda_lower_bound`; ``b`` does not depend on it.
    """
    Nvec = np.asarray(Nvec, dtype=float)
    if np.any(Nvec < 0):
        raise ValueError("vortex numbers must be nonnegative")
    return 4.0 * math.pi * data.M @ Nvec


def lambda_lower_bound(data, Nvec, area):
    """Coupling below which no doubly periodic solution exists."""
    if area <= 0:
        raise ValueError("area must be positive")
    Nvec = [Fraction(int(x)) for x in np.asarray(Nvec).ravel()]
    Kinv = data.exact["Kinv"]
    num = sum(Kinv[i][j] * Nvec[j] for i in range(data.n) for j in range(data.n))
    den = sum(Kinv[i][j] for i in range(data.n) for j in range(data.n))
    return 16.0 * math.pi / area * float(num / den)


@lru_cache(maxsize=64)
def constraint_coefficients(n):
    """Coefficients of the per-component quadratic constraint.

    Component ``i`` of the integrated equation, divided by ``Stilde_ii``, reads
    ``a_ii t_i^2 - t_i P_i + kappa_i b_i / lam = 0`` with
    ``P_i = own_i a_i + left_i a_{i,i-1} t_{i-1} + right_i a_{i,i+1} t_{i+1}``.
    Returns float arrays ``(own, left, right, kappa)``.
    """
    S = _exact_cartan(n)["Stilde"]
    own, left, right, kappa = [], [], [], []
    for i in range(n):
        rowsum = sum(S[i], Fraction(0))
        own.append(rowsum / S[i][i])
        left.append(-S[i][i - 1] / S[i][i] if i > 0 else Fraction(0))
        right.append(-S[i][i + 1] / S[i][i] if i < n - 1 else Fraction(0))
        kappa.append(1 / S[i][i])
    return tuple(np.array([float(x) for x in v]) for v in (own, left, right, kappa))


def is_positive_definite(A):
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return bool(np.linalg.eigvalsh(A)[0] > 0)


def exact_identities(data):
    """Rational-arithmetic checks of the row-sum and inverse identities."""
    ex = data.exact
    n = data.n
    one, zero = Fraction(1), Fraction(0)
    eye = [[one if i == j else zero for j in range(n)] for i in range(n)]
    return {
        "K Kinv = I": _matmul(ex["K"], ex["Kinv"]) == eye,
        "Ktilde 1 = 1": all(sum(row, zero) == one for row in ex["Ktilde"]),
        "Kinv 1 = R": all(sum(row, zero) == r for row, r in zip(ex["Kinv"], ex["R"])),
        "Ktilde = diag(Ptilde) Stilde": all(
            ex["Ktilde"][i][j] == ex["Ptilde"][i] * ex["Stilde"][i][j]
            for i in range(n) for j in range(n)),
        "Stilde symmetric": all(
            ex["Stilde"][i][j] == ex["Stilde"][j][i] for i in range(n) for j in range(n)),
    }


def identity_report(data):
    """Float-level residuals of the structural identities, keyed by name."""
    n = data.n
    ones = np.ones(n)
    I = np.eye(n)
    inf = lambda A: float(np.max(np.abs(A)))
    return {
        "K Kinv = I": inf(data.K @ data.Kinv - I),
        "Ktilde = diag(Ptilde) Stilde": inf(data.Ktilde - data.Ptilde[:, None] * data.Stilde),
        "Ktilde = K diag(R)": inf(data.Ktilde - data.K * data.R[None, :]),
        "Stilde symmetric": inf(data.Stilde - data.Stilde.T),
        "Ktilde^-1 1 = 1": inf(np.linalg.solve(data.Ktilde, ones) - ones),
        "Kinv 1 = R": inf(data.Kinv @ ones - data.R),
        "M = (2/n) Kinv": inf(data.M - 2.0 / n * data.Kinv),
        "min eig Stilde": float(np.linalg.eigvalsh(data.Stilde)[0]),
        "min eig M": float(np.linalg.eigvalsh(data.M)[0]),
    }


@dataclass(frozen=True)
class GeneralTridiagonal:
    """Tridiagonal ``Khat`` with unit row sums and its ``diag(Phat) Shat`` split.

    ``upper[i]`` is the coupling of row ``i`` to ``i+1`` and ``lower[i]`` the
    coupling of row ``i+1`` to ``i`` (0-based).
    """

    n: int
    upper: np.ndarray
    lower: np.ndarray
    Khat: np.ndarray
    Phat: np.ndarray
    Shat: np.ndarray


def build_general(upper, lower):
    upper = np.asarray(upper, dtype=float).ravel()
    lower = np.asarray(lower, dtype=float).ravel()
    if upper.shape != lower.shape or upper.size < 1:
        raise InvalidCoefficientError("upper and lower couplings must have equal length n-1 >= 1")
    if not (np.all(upper > 0) and np.all(lower > 0)) or not np.all(np.isfinite(upper + lower)):
        raise InvalidCoefficientError("all couplings must be positive and finite")
    n = upper.size + 1
    K = np.zeros((n, n))
    for i in range(n - 1):
        K[i, i + 1] = -upper[i]
        K[i + 1, i] = -lower[i]
    K[np.diag_indices(n)] = 1.0 - K.sum(axis=1)
    P = np.ones(n)
    for i in range(n - 1):
        P[i + 1] = P[i] * lower[i] / upper[i]
    S = K / P[:, None]
    return GeneralTridiagonal(n=n, upper=upper, lower=lower, Khat=K, Phat=P, Shat=S)


def general_from_cartan(n):
    """Couplings for which ``Khat`` reproduces ``Ktilde`` of SU(n+1)."""
    i = np.arange(1, n)
    upper = (i + 1) * (n - i) / 2.0
    lower = i * (n + 1 - i) / 2.0
    return build_general(upper, lower)
