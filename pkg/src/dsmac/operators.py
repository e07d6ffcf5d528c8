"""Discrete MAC-grid operators: div, grad, second differences, the
direction-factorized pressure operator and its inverse cascade, and the
mixed-difference diagnostic norm.

Divergence and gradient are the standard compact MAC pair and are exact
negative adjoints (sum-by-parts) when the normal boundary velocity
vanishes.  The penalty operator is (1 - d2/dx2)(1 - d2/dy2)[(1 - d2/dz2)]
with zero-Neumann closures per axis; on a uniform grid the 1D factors
commute, so both application and inversion run one axis at a time.
"""

from __future__ import annotations

import numpy as np

from .grid import DIRICHLET, NEUMANN, LO, HI, ScalarField, StaggeredVectorField
from .tridiag import CELL, assemble_helmholtz_line, batch_solve

MIRROR = "mirror"            # ghost = edge value (cell-centered zero-Neumann)
NODE_MIRROR = "node-mirror"  # ghost = second value in (node on the wall)
PINNED = "pinned"            # boundary node is data; stencil result zeroed there


def _ghost(values, axis, side, rule):
    """Ghost layer just outside the wall, shaped like the boundary slice."""
    nd = values.ndim
    idx = [slice(None)] * nd

    def layer(i):
        idx[axis] = slice(i, i + 1) if i >= 0 else slice(i, i + 1 if i != -1 else None)
        return values[tuple(idx)]

    edge = layer(0) if side == LO else layer(-1)
    if rule == MIRROR or rule == PINNED:
        return edge
    if rule == NODE_MIRROR:
        return layer(1) if side == LO else layer(-2)
    kind, g = rule
    if kind != "reflect":
        raise ValueError(f"unknown ghost rule {rule!r}")
    g = np.asarray(g, dtype=float)
    if g.ndim == edge.ndim - 1:
        g = np.expand_dims(g, axis)
    return 2.0 * g - edge


def pad_axis(values, axis, lo_rule=MIRROR, hi_rule=MIRROR):
    """Extend a field by one ghost layer on both sides of one axis."""
    lo = _ghost(values, axis, LO, lo_rule)
    hi = _ghost(values, axis, HI, hi_rule)
    return np.concatenate([lo, values, hi], axis=axis)


def second_difference(values, axis, h, lo_rule=MIRROR, hi_rule=MIRROR):
    """3-point second difference along one axis, same-shaped result.

    Ghost closures realize the boundary rules; for PINNED sides the
    boundary entry of the result is set to zero (that node carries
    Dirichlet data and its stencil row is never used).
    """
    padded = pad_axis(values, axis, lo_rule, hi_rule)
    nd = values.ndim
    sl = lambda a, b: tuple(slice(a, b) if d == axis else slice(None)
                            for d in range(nd))
    out = (padded[sl(0, -2)] - 2.0 * padded[sl(1, -1)] + padded[sl(2, None)]) / h**2
    for side, rule in ((LO, lo_rule), (HI, hi_rule)):
        if rule == PINNED:
            idx = [slice(None)] * nd
            idx[axis] = 0 if side == LO else -1
            out[tuple(idx)] = 0.0
    return out


def divergence(u):
    """Cell-centered divergence of a face velocity field."""
    grid = u.grid
    div = np.zeros(grid.shape_cell)
    for a in range(grid.dim):
        div += np.diff(u.comp[a], axis=a) / grid.h[a]
    return ScalarField(grid, div)


def gradient_to_faces(p, pressure_bc=None):
    """Pressure gradient on velocity faces.

    Boundary faces get zero except on sides where the pressure carries a
    Dirichlet-zero condition (step-case outflow); there the ghost-cell
    reflection supplies the one-sided value read by the unpinned normal
    velocity.
    """
    grid = p.grid
    q = p.values
    comps = []
    for a in range(grid.dim):
        g = np.zeros(grid.shape_face(a))
        nd = grid.dim
        interior = tuple(slice(1, -1) if d == a else slice(None) for d in range(nd))
        g[interior] = np.diff(q, axis=a) / grid.h[a]
        if pressure_bc is not None:
            for side in (LO, HI):
                if pressure_bc.get((a, side)) == DIRICHLET:
                    idx = [slice(None)] * nd
                    edge = [slice(None)] * nd
                    idx[a] = 0 if side == LO else -1
                    edge[a] = 0 if side == LO else -1
                    sign = -1.0 if side == LO else 1.0
                    # ghost cell: p_ghost = -p_edge (zero wall value)
                    g[tuple(idx)] = sign * (-2.0 * q[tuple(edge)]) / grid.h[a]
        comps.append(g)
    return StaggeredVectorField(grid, comps)


def mean_zero_project(q):
    """Subtract the mean; idempotent, exact for constants."""
    if isinstance(q, ScalarField):
        return ScalarField(q.grid, q.values - q.values.mean())
    q = np.asarray(q, dtype=float)
    return q - q.mean()


class PenaltyOperator:
    """The factorized operator A = prod_d (1 - d2_d) on cell fields.

    Each 1D factor carries a zero-Neumann closure (or Dirichlet-zero on a
    declared pressure-Dirichlet side).  Solving runs one batched
    tridiagonal solve per axis; with all-Neumann closures each factor
    preserves the mean, so compatibility is handled by a single mean
    subtraction at the end, landing the result in the zero-mean space.
    """

    def __init__(self, grid, pressure_bc=None):
        self.grid = grid
        self.kinds = {(a, s): NEUMANN for a in range(grid.dim) for s in (LO, HI)}
        if pressure_bc:
            self.kinds.update(pressure_bc)
        self.anchored = any(k == DIRICHLET for k in self.kinds.values())
        self.lines = [
            assemble_helmholtz_line(grid.n[a], grid.h[a], theta=1.0,
                                    bc_lo=self.kinds[(a, LO)],
                                    bc_hi=self.kinds[(a, HI)], stagger=CELL)
            for a in range(grid.dim)
        ]

    def _rule(self, axis, side):
        if self.kinds[(axis, side)] == NEUMANN:
            return MIRROR
        return ("reflect", 0.0)

    def apply_values(self, q):
        out = np.array(q, dtype=float)
        for a in range(self.grid.dim):
            out = out - second_difference(out, a, self.grid.h[a],
                                          self._rule(a, LO), self._rule(a, HI))
        return out

    def solve_values(self, g):
        x = np.asarray(g, dtype=float)
        for a in range(self.grid.dim):
            x = batch_solve(self.lines[a], x, axis=a)
        if not self.anchored:
            x = x - x.mean()
        return x

    def apply(self, q):
        return ScalarField(self.grid, self.apply_values(q.values))

    def solve(self, g):
        return ScalarField(self.grid, self.solve_values(g.values))


def apply_A(q, pressure_bc=None):
    return PenaltyOperator(q.grid, pressure_bc).apply(q)


def solve_A(g, pressure_bc=None):
    return PenaltyOperator(g.grid, pressure_bc).solve(g)


def _mixed_square(grid, comp, values, axes):
    """Integral of the squared mixed difference over the given axes.

    Differencing along the component's own axis uses the stored boundary
    nodes; along tangential axes the homogeneous-Dirichlet trace is
    extended by ghost reflection so the corner stencils reach the walls
    (trapezoid end-weights there keep the quadrature second order).
    """
    e = values
    trapz_axes = []
    for a in sorted(axes):
        if a == comp:
            e = np.diff(e, axis=a) / grid.h[a]
        else:
            e = np.diff(pad_axis(e, a, ("reflect", 0.0), ("reflect", 0.0)),
                        axis=a) / grid.h[a]
            trapz_axes.append(a)
    if comp not in axes:
        trapz_axes.append(comp)
    w = np.ones_like(e)
    for a in trapz_axes:
        idx = [slice(None)] * e.ndim
        for end in (0, -1):
            idx[a] = end
            w[tuple(idx)] *= 0.5
    return float(np.sum(e * e * w) * grid.cell_volume)


def b_inner(v, tau=0.0):
    """Mixed-difference diagnostic: sum of squared mixed differences of
    every component (plus tau/2 times the triple-mixed term in 3D).

    Requires homogeneous Dirichlet traces; nonnegative, scales as s^2
    under v -> s v.
    """
    grid = v.grid
    total = 0.0
    if grid.dim == 2:
        for c in range(2):
            total += _mixed_square(grid, c, v.comp[c], (0, 1))
        return total
    for c in range(3):
        for pair in ((0, 1), (1, 2), (0, 2)):
            total += _mixed_square(grid, c, v.comp[c], pair)
        total += 0.5 * tau * _mixed_square(grid, c, v.comp[c], (0, 1, 2))
    return total


def grad_norm_sq(q, grid):
    """Squared interior-face gradient norm of a cell field."""
    total = 0.0
    for a in range(grid.dim):
        total += float(np.sum((np.diff(q, axis=a) / grid.h[a]) ** 2))
    return total * grid.cell_volume


def inner_cells(a, b, grid):
    return float(np.sum(a * b) * grid.cell_volume)
