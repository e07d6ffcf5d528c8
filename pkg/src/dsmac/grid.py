"""Uniform staggered (MAC) grid: geometry, field storage, boundary data.

Staggering convention (classic MAC):
  - pressure-like scalars live at cell centers, shape (nx, ny[, nz]);
    the center of cell i along an axis is at (i + 1/2) * h
  - velocity component d lives on faces normal to axis d: n_d + 1 entries
    along axis d (face i at i * h, including the two boundary faces),
    cell-centered along the other axes

Arrays are indexed [ix, iy(, iz)].  Dumps and flat orderings iterate with
x fastest.  Ghost values for tangential Dirichlet data use linear
reflection (ghost = 2*g - interior) so the wall midpoint equals g exactly;
zero-Neumann sides mirror the interior value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

LO, HI = 0, 1


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform Cartesian MAC grid in 2 or 3 dimensions."""

    dim: int
    n: tuple
    length: tuple
    h: tuple

    @property
    def shape_cell(self):
        return self.n

    def shape_face(self, comp):
        return tuple(m + 1 if a == comp else m for a, m in enumerate(self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def cell_centers(self, axis):
        return (np.arange(self.n[axis]) + 0.5) * self.h[axis]

    def face_coords(self, axis):
        return np.arange(self.n[axis] + 1) * self.h[axis]

    def cell_coords(self):
        """1D center coordinates per axis."""
        return [self.cell_centers(a) for a in range(self.dim)]

    def staggered_coords(self, comp):
        """1D coordinates per axis for velocity component `comp`."""
        return [self.face_coords(a) if a == comp else self.cell_centers(a)
                for a in range(self.dim)]


def build_grid(dim, n, length=None):
    """Validate and build a GridSpec; length defaults to 1.0 per axis."""
    if dim not in (2, 3):
        raise GridError(f"dim must be 2 or 3, got {dim}")
    n = tuple(int(m) for m in n)
    if len(n) != dim:
        raise GridError(f"expected {dim} cell counts, got {len(n)}")
    if any(m < 2 for m in n):
        raise GridError(f"need at least 2 cells per axis, got {n}")
    if length is None:
        length = (1.0,) * dim
    length = tuple(float(ell) for ell in length)
    if len(length) != dim or any(ell <= 0.0 for ell in length):
        raise GridError(f"domain extents must be positive, got {length}")
    h = tuple(ell / m for ell, m in zip(length, n))
    return GridSpec(dim=dim, n=n, length=length, h=h)


def _mesh(coords):
    return np.meshgrid(*coords, indexing="ij", sparse=True)


def sample_on(coords, fn, t):
    """Evaluate fn(*coords, t) on the tensor grid of 1D coordinate arrays."""
    shape = tuple(len(c) for c in coords)
    vals = fn(*_mesh(coords), t)
    return np.broadcast_to(np.asarray(vals, dtype=float), shape).copy()


class ScalarField:
    """Cell-centered scalar field (pressure, pressure correction)."""

    def __init__(self, grid, values=None):
        self.grid = grid
        if values is None:
            values = np.zeros(grid.shape_cell)
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape_cell:
            raise GridError(f"cell field shape {values.shape} != {grid.shape_cell}")
        self.values = values

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    @classmethod
    def sample(cls, grid, fn, t=0.0):
        return cls(grid, sample_on(grid.cell_coords(), fn, t))


class StaggeredVectorField:
    """Velocity field with component d stored on d-normal faces."""

    def __init__(self, grid, comp=None):
        self.grid = grid
        if comp is None:
            comp = [np.zeros(grid.shape_face(c)) for c in range(grid.dim)]
        comp = [np.asarray(a, dtype=float) for a in comp]
        for c, a in enumerate(comp):
            if a.shape != grid.shape_face(c):
                raise GridError(
                    f"component {c} shape {a.shape} != {grid.shape_face(c)}")
        self.comp = comp

    def copy(self):
        return StaggeredVectorField(self.grid, [a.copy() for a in self.comp])

    def max_abs(self):
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.comp)

    @classmethod
    def sample(cls, grid, fns, t=0.0):
        return cls(grid, [sample_on(grid.staggered_coords(c), fns[c], t)
                          for c in range(grid.dim)])


@dataclass
class BoundaryCondition:
    """Kind and Dirichlet value function for one (component, axis, side).

    `value` is called as value(*coords, t) on broadcastable coordinate
    arrays; None means homogeneous.  Neumann is always zero-flux.
    """

    kind: str = DIRICHLET
    value: Optional[Callable] = None


class BoundarySpec:
    """Per-axis, per-side boundary kinds and data for velocity and pressure.

    Velocity defaults to homogeneous Dirichlet on every side; pressure
    defaults to Neumann (only the step-case outflow uses Dirichlet-zero).
    Normal-component Dirichlet values sit exactly on boundary faces;
    tangential Dirichlet values are imposed through ghost reflection.
    """

    def __init__(self, dim):
        self.dim = dim
        self.velocity = {(c, a, s): BoundaryCondition()
                         for c in range(dim) for a in range(dim) for s in (LO, HI)}
        self.pressure = {(a, s): NEUMANN for a in range(dim) for s in (LO, HI)}
        self.time_dependent = False

    def set_velocity(self, comp, axis, side, kind=DIRICHLET, value=None):
        self.velocity[(comp, axis, side)] = BoundaryCondition(kind, value)
        return self

    def set_pressure(self, axis, side, kind):
        self.pressure[(axis, side)] = kind
        return self

    def kind(self, comp, axis, side):
        return self.velocity[(comp, axis, side)].kind

    @classmethod
    def no_slip(cls, dim):
        return cls(dim)

    @classmethod
    def from_exact(cls, dim, velocity_fns):
        """All-Dirichlet data taken from exact velocity components."""
        bc = cls(dim)
        for c in range(dim):
            for a in range(dim):
                for s in (LO, HI):
                    bc.set_velocity(c, a, s, DIRICHLET, velocity_fns[c])
        bc.time_dependent = True
        return bc

    # -- sampling ---------------------------------------------------------

    def _side_coords(self, grid, comp, axis, side):
        coords = grid.staggered_coords(comp)
        wall = 0.0 if side == LO else grid.length[axis]
        coords = list(coords)
        coords[axis] = np.array([wall])
        return coords

    def normal_values(self, grid, comp, side, t):
        """Dirichlet data on the boundary face layer (axis == comp).

        Returns an array shaped like the face layer with the comp axis
        dropped, or None for a Neumann side.
        """
        bc = self.velocity[(comp, comp, side)]
        if bc.kind != DIRICHLET:
            return None
        shape = tuple(m for a, m in enumerate(grid.shape_face(comp)) if a != comp)
        if bc.value is None:
            return np.zeros(shape)
        vals = sample_on(self._side_coords(grid, comp, comp, side), bc.value, t)
        return vals.reshape(shape)

    def wall_values(self, grid, comp, axis, side, t):
        """Tangential Dirichlet data at wall midpoints (axis != comp)."""
        bc = self.velocity[(comp, axis, side)]
        if bc.kind != DIRICHLET:
            return None
        shape = tuple(m for a, m in enumerate(grid.shape_face(comp)) if a != axis)
        if bc.value is None:
            return np.zeros(shape)
        vals = sample_on(self._side_coords(grid, comp, axis, side), bc.value, t)
        return vals.reshape(shape)


def ghost_value(kind, interior_value, bc_value=0.0, tangential=True):
    """Ghost scalar just outside the wall for one boundary sample.

    Tangential Dirichlet reflects linearly so the wall midpoint equals the
    boundary value; normal Dirichlet is imposed directly on the face;
    zero-Neumann mirrors the interior value.
    """
    if kind == NEUMANN:
        return interior_value
    if not tangential:
        return bc_value
    return 2.0 * bc_value - interior_value


@dataclass
class ComponentBC:
    """Sampled boundary data of one velocity component at one time level.

    normal[side]: Dirichlet face data (axis == comp), None on Neumann sides.
    wall[(axis, side)]: tangential Dirichlet wall-midpoint data, None where
    Neumann.  Levels combine linearly, so time averages and increments of
    the data are ComponentBC values as well.
    """

    comp: int
    normal: dict
    wall: dict

    def combine(self, other, ca, cb):
        def mix(x, y):
            if x is None or y is None:
                return None
            return ca * x + cb * y

        return ComponentBC(
            comp=self.comp,
            normal={s: mix(self.normal[s], other.normal[s]) for s in self.normal},
            wall={k: mix(self.wall[k], other.wall[k]) for k in self.wall},
        )


def sample_component_bc(grid, bc, comp, t):
    normal = {side: bc.normal_values(grid, comp, side, t) for side in (LO, HI)}
    wall = {(a, s): bc.wall_values(grid, comp, a, s, t)
            for a in range(grid.dim) if a != comp for s in (LO, HI)}
    return ComponentBC(comp=comp, normal=normal, wall=wall)


def _edge_layer(values, axis, pos):
    idx = [slice(None)] * values.ndim
    idx[axis] = slice(pos, pos + 1 if pos != -1 else None)
    return values[tuple(idx)]


def component_ghost_layers(values, comp, axis, grid, bc, cbc):
    """The two ghost layers of one component just outside one axis.

    Tangential sides follow the ghost reflection / mirror rules with the
    wall data from `cbc`; zero-Neumann normal sides mirror about the
    boundary node; Dirichlet normal sides carry their data on the stored
    boundary face, so their (never-read) ghost is an inert edge copy.
    """
    if axis == comp:
        lo = _edge_layer(values, axis, 1 if bc.kind(comp, axis, LO) == NEUMANN
                         else 0)
        hi = _edge_layer(values, axis, -2 if bc.kind(comp, axis, HI) == NEUMANN
                         else -1)
        return lo, hi
    return (_tangential_ghost(values, axis, LO, bc.kind(comp, axis, LO),
                              cbc.wall[(axis, LO)]),
            _tangential_ghost(values, axis, HI, bc.kind(comp, axis, HI),
                              cbc.wall[(axis, HI)]))


def pad_component(values, comp, grid, bc, cbc):
    """Extend one velocity component by a ghost layer on every axis."""
    out = values
    for a in range(grid.dim):
        lo, hi = component_ghost_layers(out, comp, a, grid, bc, cbc)
        out = np.concatenate([lo, out, hi], axis=a)
    return out


def _tangential_ghost(values, axis, side, kind, g):
    edge = _edge_layer(values, axis, 0 if side == LO else -1)
    if kind == NEUMANN:
        return edge
    g = np.expand_dims(np.asarray(g, dtype=float), axis)
    if g.shape != edge.shape:
        # padding runs axis by axis, so earlier axes are already extended;
        # grow the wall data into the corner ghosts by edge copy (corners
        # are never read by the axis-aligned stencils)
        pads = [(1, 1) if g.shape[a] == edge.shape[a] - 2 else (0, 0)
                for a in range(g.ndim)]
        g = np.pad(g, pads, mode="edge")
    return 2.0 * g - edge


def set_normal_boundary(values, comp, bc, cbc):
    """Write Dirichlet data onto the pinned boundary faces of a component."""
    for side in (LO, HI):
        g = cbc.normal[side]
        if g is None:
            continue
        idx = [slice(None)] * values.ndim
        idx[comp] = 0 if side == LO else -1
        values[tuple(idx)] = g


def extract_line(values, axis, index):
    """Copy one grid line along `axis`; `index` fixes the other axes."""
    index = tuple(index)
    if len(index) != values.ndim - 1:
        raise GridError(f"need {values.ndim - 1} station indices, got {len(index)}")
    key = list(index)
    key.insert(axis, slice(None))
    line = values[tuple(key)]
    if line.ndim != 1:
        raise GridError("line index out of range")
    return np.ascontiguousarray(line)


def scatter_line(values, axis, index, line):
    """Inverse of extract_line: write the 1D line back in place."""
    key = list(tuple(index))
    key.insert(axis, slice(None))
    values[tuple(key)] = line


def interpolate_to_centers(u):
    """Average each velocity component to cell centers (for output)."""
    out = []
    for c, a in enumerate(u.comp):
        sl_lo = [slice(None)] * u.grid.dim
        sl_hi = [slice(None)] * u.grid.dim
        sl_lo[c] = slice(0, -1)
        sl_hi[c] = slice(1, None)
        out.append(0.5 * (a[tuple(sl_lo)] + a[tuple(sl_hi)]))
    return out


def dump_fields_csv(path, grid, u, p):
    """Write cell-centered x,y[,z],u,v[,w],p rows, x varying fastest."""
    dim = grid.dim
    coords = np.meshgrid(*grid.cell_coords(), indexing="ij")
    vel = interpolate_to_centers(u)
    cols = [c.ravel(order="F") for c in coords]
    cols += [v.ravel(order="F") for v in vel]
    cols += [p.values.ravel(order="F")]
    header = ["x", "y", "z"][:dim] + ["u", "v", "w"][:dim] + ["p"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*cols):
            writer.writerow([repr(float(v)) for v in row])


def dump_structured_points(path, grid, u, p):
    """Legacy structured-points volume dump (visualization convenience)."""
    dim = grid.dim
    n = grid.n + (1,) * (3 - dim)
    h = grid.h + (1.0,) * (3 - dim)
    vel = interpolate_to_centers(u)
    npts = int(np.prod(n))
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ndsmac fields\nASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {n[0]} {n[1]} {n[2]}\n")
        fh.write(f"ORIGIN {h[0] / 2} {h[1] / 2} {0.0 if dim == 2 else h[2] / 2}\n")
        fh.write(f"SPACING {h[0]} {h[1]} {h[2]}\n")
        fh.write(f"POINT_DATA {npts}\n")
        fh.write("SCALARS p double 1\nLOOKUP_TABLE default\n")
        for v in p.values.ravel(order="F"):
            fh.write(f"{v}\n")
        fh.write("VECTORS velocity double\n")
        zero = np.zeros(npts)
        flat = [v.ravel(order="F") for v in vel]
        while len(flat) < 3:
            flat.append(zero)
        for vx, vy, vz in zip(*flat):
            fh.write(f"{vx} {vy} {vz}\n")
