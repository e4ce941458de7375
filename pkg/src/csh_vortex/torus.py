"""Uniform periodic grids, spectral operators and the singular background.

Fields are float64 arrays of shape ``(n1, n2)``; stacks of ``n`` components
have shape ``(n, n1, n2)``.  Axis 0 is ``x`` (period ``L1``), axis 1 is ``y``.
Node ``(j1, j2)`` sits at ``(j1*L1/n1, j2*L2/n2)``.

Field files
-----------
CSV: first line ``n1,n2,L1,L2``, second line the four values, then ``n1``
rows of ``n2`` comma-separated values (row-major), 17 significant digits.

Binary: little-endian.  ``uint64`` item count (``n1*n2``), then ``int64``
``n1``, ``n2``, ``float64`` ``L1``, ``L2``, then the items as ``float64``
in row-major order.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DomainError, GridMismatchError

__all__ = [
    "TorusGrid",
    "Vortex",
    "VortexConfig",
    "background_solution",
    "background_fields",
    "laplacian",
    "laplacian_weighted",
    "gradient",
    "integrate",
    "resample",
    "evaluate_series",
    "write_field_csv",
    "read_field_csv",
    "write_field_bin",
    "read_field_bin",
]


@dataclass(frozen=True)
class TorusGrid:
    L1: float
    L2: float
    n1: int
    n2: int

    def __post_init__(self):
        for name in ("n1", "n2"):
            v = getattr(self, name)
            if int(v) != v or v < 8 or v % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {v}")
        if not (self.L1 > 0 and self.L2 > 0):
            raise ValueError("periods must be positive")

    @property
    def area(self):
        return self.L1 * self.L2

    @property
    def shape(self):
        return (self.n1, self.n2)

    @property
    def cell_area(self):
        return self.area / (self.n1 * self.n2)

    @cached_property
    def coords(self):
        x = np.arange(self.n1) * (self.L1 / self.n1)
        y = np.arange(self.n2) * (self.L2 / self.n2)
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def k1(self):
        return 2 * np.pi * np.fft.fftfreq(self.n1, d=self.L1 / self.n1)

    @cached_property
    def k2(self):
        return 2 * np.pi * np.fft.rfftfreq(self.n2, d=self.L2 / self.n2)

    @cached_property
    def ksq(self):
        """``|k|^2`` on the real-to-complex layout ``(n1, n2//2+1)``."""
        return self.k1[:, None] ** 2 + self.k2[None, :] ** 2

    def check(self, arr):
        arr = np.asarray(arr)
        if arr.shape[-2:] != self.shape:
            raise GridMismatchError(f"field shape {arr.shape} does not match grid {self.shape}")
        return arr


class Vortex(NamedTuple):
    x: float
    y: float
    multiplicity: int = 1


@dataclass(frozen=True)
class VortexConfig:
    """Vortex points per component; ``components[i]`` lists the ``p_ij``."""

    components: tuple

    def __post_init__(self):
        comps = tuple(tuple(Vortex(*p) for p in comp) for comp in self.components)
        for comp in comps:
            for p in comp:
                if int(p.multiplicity) != p.multiplicity or p.multiplicity < 1:
                    raise ValueError(f"multiplicity must be a positive integer, got {p.multiplicity}")
        object.__setattr__(self, "components", comps)

    @property
    def n(self):
        return len(self.components)

    @property
    def N(self):
        return np.array([sum(int(p.multiplicity) for p in comp) for comp in self.components], dtype=int)

    def check_inside(self, grid):
        for i, comp in enumerate(self.components):
            for p in comp:
                if not (0 <= p.x < grid.L1 and 0 <= p.y < grid.L2):
                    raise DomainError(
                        f"vortex outside domain: component {i + 1} point ({p.x}, {p.y}) "
                        f"not in [0,{grid.L1})x[0,{grid.L2})")


def _phase(k, pos, n):
    # e^{-ikp}, with the Nyquist entry replaced by its real part so that the
    # truncated series is real and symmetric in +/- Nyquist
    ph = np.exp(-1j * k * pos)
    ph[n // 2] = math.cos(k[n // 2] * pos)
    return ph


def background_solution(grid, vortices):
    """Zero-mean band-limited solution of
    ``Lap u = 4 pi sum_s m_s delta_{p_s} - 4 pi N/|Omega|``.

    ``vortices`` is a sequence of :class:`Vortex` (or ``(x, y[, m])``) for one
    component.  Dirac masses are represented exactly in Fourier space, so the
    result is the truncated Fourier series of the periodic Green's function
    sampled at the nodes.
    """
    vortices = [Vortex(*p) for p in vortices]
    VortexConfig((tuple(vortices),)).check_inside(grid)
    if not vortices:
        return np.zeros(grid.shape)
    k1 = grid.k1
    k2 = 2 * np.pi * np.fft.fftfreq(grid.n2, d=grid.L2 / grid.n2)
    ksq = k1[:, None] ** 2 + k2[None, :] ** 2
    phases = np.zeros(grid.shape, dtype=complex)
    for p in vortices:
        phases += p.multiplicity * np.outer(_phase(k1, p.x, grid.n1), _phase(k2, p.y, grid.n2))
    ksq[0, 0] = 1.0
    coef = -4 * np.pi / grid.area * phases / ksq
    coef[0, 0] = 0.0
    u = np.fft.ifft2(coef).real * (grid.n1 * grid.n2)
    return u - u.mean()


def background_fields(grid, config):
    """Stack of background solutions, one per component of ``config``."""
    config.check_inside(grid)
    return np.stack([background_solution(grid, comp) for comp in config.components])


def laplacian(grid, f):
    """Spectral Laplacian over the last two axes (Nyquist modes kept)."""
    f = grid.check(f)
    return np.fft.irfft2(-grid.ksq * np.fft.rfft2(f), s=grid.shape)


def inverse_laplacian(grid, f):
    """Zero-mean solution of ``Lap u = f - mean(f)``."""
    f = grid.check(f)
    ksq = grid.ksq.copy()
    ksq[0, 0] = 1.0
    fh = -np.fft.rfft2(f) / ksq
    fh[..., 0, 0] = 0.0
    return np.fft.irfft2(fh, s=grid.shape)


def laplacian_weighted(grid, w, M):
    """``Lap (M w)`` for a stack ``w`` of shape ``(n, n1, n2)``."""
    w = grid.check(w)
    M = np.asarray(M)
    if w.ndim != 3 or M.shape != (w.shape[0], w.shape[0]):
        raise GridMismatchError(f"cannot combine stack of shape {w.shape} with matrix {M.shape}")
    return laplacian(grid, np.einsum("ij,jab->iab", M, w))


def gradient(grid, f):
    """Spectral ``(d/dx f, d/dy f)``; Nyquist modes of the first derivative are zeroed."""
    f = grid.check(f)
    fh = np.fft.rfft2(f)
    k1 = grid.k1.copy()
    k1[grid.n1 // 2] = 0.0
    k2 = grid.k2.copy()
    k2[-1] = 0.0
    dx = np.fft.irfft2(1j * k1[:, None] * fh, s=grid.shape)
    dy = np.fft.irfft2(1j * k2[None, :] * fh, s=grid.shape)
    return dx, dy


def integrate(grid, f):
    """Rectangle rule on the periodic grid; integrates over the last two axes."""
    f = grid.check(f)
    return f.mean(axis=(-2, -1)) * grid.area


def resample(f, grid_from, grid_to):
    """Spectral (zero-padding / truncating) interpolation between grids
    sharing the same periods.  Nyquist content is split evenly on refinement.
    """
    f = grid_from.check(f)
    if (grid_from.L1, grid_from.L2) != (grid_to.L1, grid_to.L2):
        raise GridMismatchError("resample requires equal periods")
    lead = f.shape[:-2]
    F = np.fft.fft2(f) / (grid_from.n1 * grid_from.n2)
    out = np.zeros(lead + grid_to.shape, dtype=complex)
    i1 = _mode_map(grid_from.n1, grid_to.n1)
    i2 = _mode_map(grid_from.n2, grid_to.n2)
    for src1, dst1, w1 in i1:
        for src2, dst2, w2 in i2:
            out[..., dst1[:, None], dst2[None, :]] += w1 * w2 * F[..., src1[:, None], src2[None, :]]
    return np.fft.ifft2(out).real * (grid_to.n1 * grid_to.n2)


def _mode_map(n_from, n_to):
    """List of ``(src_indices, dst_indices, weight)`` blocks moving 1-D modes."""
    m = min(n_from, n_to) // 2
    pos = np.arange(0, m)
    neg = np.arange(-m + 1, 0)
    blocks = [(pos, pos, 1.0), (neg % n_from, neg % n_to, 1.0)]
    if n_to > n_from:
        ny = np.array([n_from // 2])
        blocks += [(ny, np.array([m]), 0.5), (ny, np.array([n_to - m]), 0.5)]
    elif n_to < n_from:
        # fold +/-m of the source onto the target Nyquist
        blocks += [(np.array([m]), np.array([m]), 1.0), (np.array([n_from - m]), np.array([m]), 1.0)]
    else:
        ny = np.array([m])
        blocks += [(ny, ny, 1.0)]
    return blocks


def evaluate_series(grid, f, x, y):
    """Evaluate the trigonometric interpolant of grid field ``f`` at points.

    The Nyquist terms use the cosine (symmetric) convention.
    """
    f = grid.check(f)
    F = np.fft.fft2(f) / (grid.n1 * grid.n2)
    k1 = 2 * np.pi * np.fft.fftfreq(grid.n1, d=grid.L1 / grid.n1)
    k2 = 2 * np.pi * np.fft.fftfreq(grid.n2, d=grid.L2 / grid.n2)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(x.shape)
    for idx, (px, py) in enumerate(zip(x.ravel(), y.ravel())):
        e1 = np.exp(1j * k1 * px)
        e1[grid.n1 // 2] = math.cos(k1[grid.n1 // 2] * px)
        e2 = np.exp(1j * k2 * py)
        e2[grid.n2 // 2] = math.cos(k2[grid.n2 // 2] * py)
        out.flat[idx] = (e1 @ F @ e2).real
    return out


def write_field_csv(path, grid, f):
    f = grid.check(f)
    with open(path, "w", newline="\n") as fh:
        fh.write("n1,n2,L1,L2\n")
        fh.write(f"{grid.n1},{grid.n2},{grid.L1:.17g},{grid.L2:.17g}\n")
        for row in f:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def read_field_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "n1,n2,L1,L2":
            raise ValueError(f"{path}: bad header {header!r}")
        n1, n2, L1, L2 = fh.readline().strip().split(",")
        grid = TorusGrid(float(L1), float(L2), int(n1), int(n2))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != grid.shape:
        raise ValueError(f"{path}: data shape {data.shape} != {grid.shape}")
    return grid, data


_BIN_HEADER = struct.Struct("<Qqqdd")


def write_field_bin(path, grid, f):
    f = grid.check(f)
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(f.size, grid.n1, grid.n2, grid.L1, grid.L2))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def read_field_bin(path):
    with open(path, "rb") as fh:
        count, n1, n2, L1, L2 = _BIN_HEADER.unpack(fh.read(_BIN_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != count or count != n1 * n2:
        raise ValueError(f"{path}: expected {count} items, found {data.size}")
    return TorusGrid(L1, L2, n1, n2), data.reshape(n1, n2).astype(float)
