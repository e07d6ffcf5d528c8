"""Case-level physical terms: explicit convective operator, its two-level
extrapolation, and pointwise body-force sampling on velocity faces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import (StaggeredVectorField, pad_component, sample_component_bc,
                   sample_on)


@dataclass
class ForcingSpec:
    """Closed-form body force per component, or zero."""

    fns: Optional[Sequence[Callable]] = None

    @classmethod
    def zero(cls):
        return cls(fns=None)


def sample_forcing(spec, t, grid):
    """Evaluate the body force at face centers; deterministic pointwise."""
    if spec is None or spec.fns is None:
        return StaggeredVectorField(grid)
    return StaggeredVectorField(
        grid, [sample_on(grid.staggered_coords(c), spec.fns[c], t)
               for c in range(grid.dim)])


def ab2_extrapolate(n_k, n_km1):
    """Two-level extrapolation to the half step: 1.5 N^k - 0.5 N^{k-1}."""
    if n_km1 is None:
        return n_k.copy()
    return StaggeredVectorField(
        n_k.grid, [1.5 * a - 0.5 * b for a, b in zip(n_k.comp, n_km1.comp)])


def _pview(padded, shape, spec):
    """View of a once-padded array over original index ranges.

    spec maps axis -> (lo, hi) inclusive original indices (ghosts are -1
    and shape[a]); unmentioned axes take their full original range.
    """
    sl = []
    for a in range(padded.ndim):
        lo, hi = spec.get(a, (0, shape[a] - 1))
        sl.append(slice(lo + 1, hi + 2))
    return padded[tuple(sl)]


def advection_term(u, bc, t, bclevels=None):
    """Convective term (u . grad) u at the faces of every component.

    Central differences for the transported component; transporting
    velocities reach the face by 4-point plane averages.  Ghost fills
    follow the boundary spec at time t.  Values on pinned boundary faces
    are computed from ghosts but never consumed by the sweeps.
    """
    grid = u.grid
    dim = grid.dim
    if bclevels is None:
        bclevels = [sample_component_bc(grid, bc, c, t) for c in range(dim)]
    pads = [pad_component(u.comp[c], c, grid, bc, bclevels[c])
            for c in range(dim)]
    out = []
    for c in range(dim):
        shape_c = u.comp[c].shape
        total = None
        for d in range(dim):
            nd = shape_c[d]
            deriv = _pview(pads[c], shape_c, {d: (1, nd)}) \
                - _pview(pads[c], shape_c, {d: (-1, nd - 2)})
            deriv /= 2.0 * grid.h[d]
            if d == c:
                deriv *= u.comp[c]
            else:
                shape_d = u.comp[d].shape
                pd = pads[d]
                nc_d = shape_d[c]  # cell count along axis c in component d
                trans = _pview(pd, shape_d, {c: (-1, nc_d - 1),
                                             d: (0, shape_c[d] - 1)}) \
                    + _pview(pd, shape_d, {c: (-1, nc_d - 1),
                                           d: (1, shape_c[d])}) \
                    + _pview(pd, shape_d, {c: (0, nc_d),
                                           d: (0, shape_c[d] - 1)}) \
                    + _pview(pd, shape_d, {c: (0, nc_d), d: (1, shape_c[d])})
                trans *= 0.25
                deriv *= trans
            if total is None:
                total = deriv
            else:
                total += deriv
        out.append(total)
    return StaggeredVectorField(grid, out)
