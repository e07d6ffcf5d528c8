"""Tridiagonal systems for the 1D implicit solves behind every sweep.

All systems assembled here discretize (1 - theta * d2/dx2) on one grid
line of a uniform MAC grid, so they are strictly diagonally dominant and
the Thomas algorithm needs no pivoting.  On a uniform grid every line
along an axis shares one matrix; the factorization is computed once and
reused for the whole batch and all time steps.

Batched solves run line-parallel through a numba kernel; each line is an
independent recurrence with no cross-line reductions, so results are
bitwise identical for any worker count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# the probe for the optional TBB threading layer warns on older TBB installs;
# any available layer serves the line-parallel kernels equally well
warnings.filterwarnings("ignore",
                        message="The TBB threading layer requires TBB version")
from numba import njit, prange


def set_workers(n):
    """Clamp and apply the worker-thread count for the batched kernels."""
    import numba

    cap = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(int(n), cap)))

CELL = "cell"
FACE = "face"

from .grid import DIRICHLET, NEUMANN


class SingularSystemError(ValueError):
    pass


@dataclass
class TridiagonalSystem:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        if len(self.lower) != n - 1 or len(self.upper) != n - 1:
            raise ValueError("off-diagonal length must be n-1")

    @property
    def n(self):
        return len(self.diag)

    def to_dense(self):
        return (np.diag(self.diag) + np.diag(self.lower, -1)
                + np.diag(self.upper, 1))

    def matvec(self, x):
        y = self.diag * x
        y[1:] += self.lower * x[:-1]
        y[:-1] += self.upper * x[1:]
        return y


def thomas_solve(system, rhs):
    """Solve one tridiagonal system; inputs are left unmodified."""
    a, b, c = system.lower, system.diag, system.upper
    n = system.n
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (n,):
        raise ValueError(f"rhs length {rhs.shape} != {n}")
    cp = np.empty(n)
    dp = np.empty(n)
    beta = b[0]
    if beta == 0.0:
        raise SingularSystemError("zero pivot at row 0")
    cp[0] = c[0] / beta if n > 1 else 0.0
    dp[0] = rhs[0] / beta
    for i in range(1, n):
        beta = b[i] - a[i - 1] * cp[i - 1]
        if beta == 0.0:
            raise SingularSystemError(f"zero pivot at row {i}")
        cp[i] = c[i] / beta if i < n - 1 else 0.0
        dp[i] = (rhs[i] - a[i - 1] * dp[i - 1]) / beta
    x = dp
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return x


@dataclass
class FactoredTridiagonal:
    """Thomas factorization shared by all lines of a uniform-grid batch."""

    lower: np.ndarray
    cp: np.ndarray   # normalized superdiagonal
    w: np.ndarray    # reciprocal pivots

    @property
    def n(self):
        return len(self.w)

    @classmethod
    def from_system(cls, system):
        a, b, c = system.lower, system.diag, system.upper
        n = system.n
        cp = np.zeros(n)
        w = np.empty(n)
        beta = b[0]
        if beta == 0.0:
            raise SingularSystemError("zero pivot at row 0")
        w[0] = 1.0 / beta
        if n > 1:
            cp[0] = c[0] / beta
        for i in range(1, n):
            beta = b[i] - a[i - 1] * cp[i - 1]
            if beta == 0.0:
                raise SingularSystemError(f"zero pivot at row {i}")
            w[i] = 1.0 / beta
            if i < n - 1:
                cp[i] = c[i] / beta
        return cls(lower=np.ascontiguousarray(a, dtype=float), cp=cp, w=w)


_BLOCK = 256  # lines per worker block; blocks are disjoint, so results are
              # identical for any worker count (no cross-line arithmetic)


@njit(cache=True, parallel=True)
def _batch_thomas(lower, cp, w, rhs, out):  # pragma: no cover - compiled
    n, nlines = rhs.shape
    nblocks = (nlines + _BLOCK - 1) // _BLOCK
    for b in prange(nblocks):
        j0 = b * _BLOCK
        j1 = min(nlines, j0 + _BLOCK)
        for j in range(j0, j1):
            out[0, j] = rhs[0, j] * w[0]
        for i in range(1, n):
            li = lower[i - 1]
            wi = w[i]
            for j in range(j0, j1):
                out[i, j] = (rhs[i, j] - li * out[i - 1, j]) * wi
        for i in range(n - 2, -1, -1):
            ci = cp[i]
            for j in range(j0, j1):
                out[i, j] -= ci * out[i + 1, j]


def solve_batch(fact, rhs, use_kernel=True):
    """Solve the shared system against every column of rhs (n, nlines).

    The unknown index comes first so the inner recurrence strides across
    contiguous lines.  use_kernel=False runs the identical recurrence in
    plain numpy (the sequential oracle for bitwise comparison).
    """
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if rhs.ndim != 2 or rhs.shape[0] != fact.n:
        raise ValueError(f"rhs shape {rhs.shape} incompatible with n={fact.n}")
    out = np.empty_like(rhs)
    if use_kernel:
        _batch_thomas(fact.lower, fact.cp, fact.w, rhs, out)
    else:
        lower, cp, w = fact.lower, fact.cp, fact.w
        n = fact.n
        out[0] = rhs[0] * w[0]
        for i in range(1, n):
            out[i] = (rhs[i] - lower[i - 1] * out[i - 1]) * w[i]
        for i in range(n - 2, -1, -1):
            out[i] -= cp[i] * out[i + 1]
    return out


@dataclass
class HelmholtzLine:
    """Assembled (1 - theta d2) line operator with boundary handling.

    `system` covers the unknowns only.  For face-staggered lines a
    Dirichlet end pins the boundary node; the eliminated coupling moves
    theta/h^2 * g to the neighbouring rhs entry.  For cell-staggered
    lines a Dirichlet wall folds the ghost reflection into the first row
    (diag + theta/h^2, rhs + 2 theta/h^2 * g) and a Neumann wall mirrors
    (diag - theta/h^2).  Face Neumann keeps the boundary node with the
    off-diagonal doubled onto the interior neighbour.
    """

    system: TridiagonalSystem
    fact: FactoredTridiagonal
    n_full: int
    stagger: str
    lo_pinned: bool
    hi_pinned: bool
    rhs_lo_coeff: float
    rhs_hi_coeff: float

    @property
    def unknown_slice(self):
        return slice(1 if self.lo_pinned else 0,
                     self.n_full - 1 if self.hi_pinned else self.n_full)


def assemble_helmholtz_line(n, h, theta, bc_lo=NEUMANN, bc_hi=NEUMANN,
                            stagger=CELL):
    """Build the 1D (1 - theta d2) operator for one axis of the grid.

    n is the cell count of the axis; cell-staggered lines have n
    unknowns, face-staggered lines n+1 nodes minus pinned Dirichlet ends.
    """
    if theta <= 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    if stagger not in (CELL, FACE):
        raise ValueError(f"unknown stagger {stagger!r}")
    r = theta / h**2
    if stagger == CELL:
        m = n
        lo_pinned = hi_pinned = False
    else:
        n_nodes = n + 1
        lo_pinned = bc_lo == DIRICHLET
        hi_pinned = bc_hi == DIRICHLET
        m = n_nodes - int(lo_pinned) - int(hi_pinned)
    if m < 1:
        raise ValueError("no unknowns left on line")
    diag = np.full(m, 1.0 + 2.0 * r)
    lower = np.full(m - 1, -r)
    upper = np.full(m - 1, -r)
    rhs_lo = 0.0
    rhs_hi = 0.0
    if stagger == CELL:
        if bc_lo == NEUMANN:
            diag[0] -= r
        else:
            diag[0] += r
            rhs_lo = 2.0 * r
        if bc_hi == NEUMANN:
            diag[-1] -= r
        else:
            diag[-1] += r
            rhs_hi = 2.0 * r
    else:
        if lo_pinned:
            rhs_lo = r
        else:
            upper[0] = -2.0 * r
        if hi_pinned:
            rhs_hi = r
        else:
            lower[-1] = -2.0 * r
    system = TridiagonalSystem(lower=lower, diag=diag, upper=upper)
    fact = FactoredTridiagonal.from_system(system)
    n_full = n if stagger == CELL else n + 1
    return HelmholtzLine(system=system, fact=fact, n_full=n_full,
                         stagger=stagger, lo_pinned=lo_pinned,
                         hi_pinned=hi_pinned, rhs_lo_coeff=rhs_lo,
                         rhs_hi_coeff=rhs_hi)


def _as_lines(values, axis):
    moved = np.moveaxis(values, axis, 0)
    return (np.ascontiguousarray(moved).reshape(values.shape[axis], -1),
            moved.shape)


def _from_lines(lines, shape, axis):
    # restore C-contiguity: downstream stencils traverse the result often
    return np.ascontiguousarray(np.moveaxis(lines.reshape(shape), 0, axis))


def batch_solve(helm, values, axis, g_lo=0.0, g_hi=0.0, use_kernel=True):
    """Solve (1 - theta d2) along `axis` for every line of a field array.

    `values` holds the full-line rhs (including boundary node positions
    for face staggering).  g_lo / g_hi are Dirichlet data per line
    (scalar or array shaped like the field with `axis` dropped); pinned
    nodes of the result are set to them.  Identical to looping
    thomas_solve over extract_line/scatter_line.
    """
    if values.shape[axis] != helm.n_full:
        raise ValueError(
            f"axis length {values.shape[axis]} != line length {helm.n_full}")
    lines, moved_shape = _as_lines(values, axis)
    nlines = lines.shape[1]

    def flat(g):
        g = np.asarray(g, dtype=float)
        if g.ndim == 0:
            return np.full(nlines, float(g))
        return np.ascontiguousarray(g).reshape(nlines)

    glo = flat(g_lo)
    ghi = flat(g_hi)
    s = helm.unknown_slice
    rhs = lines[s]
    if helm.rhs_lo_coeff or helm.rhs_hi_coeff:
        rhs = rhs.copy()  # keep the caller's (possibly aliased) rhs intact
        if helm.rhs_lo_coeff:
            rhs[0] += helm.rhs_lo_coeff * glo
        if helm.rhs_hi_coeff:
            rhs[-1] += helm.rhs_hi_coeff * ghi
    x = solve_batch(helm.fact, rhs, use_kernel=use_kernel)
    out = np.empty_like(lines)
    out[s] = x
    if helm.lo_pinned:
        out[0] = glo
    if helm.hi_pinned:
        out[-1] = ghi
    return _from_lines(out, moved_shape, axis)
