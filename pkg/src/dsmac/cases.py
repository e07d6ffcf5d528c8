"""Benchmark cases and their scalar outputs: lid-driven cavity centerline
profiles, backward-facing step recirculation length, steadiness detection.

Reynolds number convention: nu = 1/Re with unit reference length (cavity
side, step-channel height) and unit reference velocity (lid speed, bulk
velocity of the half-channel inflow parabola).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .grid import (DIRICHLET, HI, LO, NEUMANN, BoundarySpec, GridSpec,
                   ScalarField, StaggeredVectorField, build_grid, sample_on)
from .operators import divergence
from .scheme import PR2D, SchemeConfig, Stepper


@dataclass
class CaseSpec:
    grid: GridSpec
    re: float
    bc: BoundarySpec
    config: SchemeConfig
    u0: Optional[StaggeredVectorField] = None
    steady_tol: Optional[float] = None
    max_time: float = 0.0

    def __post_init__(self):
        if self.re <= 0.0:
            raise ValueError(f"Reynolds number must be positive, got {self.re}")


def steady_detect(u_prev, u_curr, tau, tol=1e-6):
    """True when the discrete time derivative max-norm drops below tol."""
    if u_prev is None:
        return False
    rate = max(float(np.max(np.abs(a - b)))
               for a, b in zip(u_curr.comp, u_prev.comp)) / tau
    return rate <= tol


# -- lid-driven cavity -------------------------------------------------------


def cavity_case(re=100.0, n=40, tau=0.01, t_end=10.0, chi=0.0):
    grid = build_grid(2, (n, n))
    bc = BoundarySpec.no_slip(2)
    lid = lambda x, y, t: np.ones_like(x * y)
    bc.set_velocity(0, 1, HI, DIRICHLET, lid)
    cfg = SchemeConfig(variant=PR2D, tau=tau, chi=chi, nu=1.0 / re,
                       t_end=t_end, advection=True)
    return CaseSpec(grid=grid, re=re, bc=bc, config=cfg, max_time=t_end)


def centerline_profiles(u, grid):
    """u(y) on the vertical centerline and v(x) on the horizontal one.

    The centerlines x = Lx/2 and y = Ly/2 are face lines when the cell
    counts are even, so the samples are stored values, not interpolants.
    """
    nx, ny = grid.n
    if nx % 2 or ny % 2:
        raise ValueError("centerline profiles need even cell counts")
    u_line = (grid.cell_centers(1).copy(), u.comp[0][nx // 2, :].copy())
    v_line = (grid.cell_centers(0).copy(), u.comp[1][:, ny // 2].copy())
    return u_line, v_line


def profile_difference(coarse, fine):
    """Max-norm of coarse minus fine after sampling fine at the coarse
    coordinates (linear interpolation)."""
    xc, yc = coarse
    xf, yf = fine
    return float(np.max(np.abs(yc - np.interp(xc, xf, yf))))


@dataclass
class CavityRun:
    spec: CaseSpec
    profiles: Dict[float, Tuple[Tuple[np.ndarray, np.ndarray],
                                Tuple[np.ndarray, np.ndarray]]]
    mass_residual: float
    state: object


def lid_driven_cavity(re=100.0, n=40, tau=0.01, t_end=10.0, chi=0.0,
                      sample_times=(1.0, 10.0)):
    """Run the cavity and capture centerline profiles at the sample times."""
    spec = cavity_case(re=re, n=n, tau=tau, t_end=t_end, chi=chi)
    stepper = Stepper(spec.grid, spec.config, spec.bc)
    state = stepper.initialize()
    profiles = {}
    remaining = sorted(t for t in sample_times if t <= t_end + 1e-12)
    mass = [0.0]

    def on_step(s):
        mass[0] = max(mass[0],
                      abs(float(np.sum(divergence(s.u).values))
                          * spec.grid.cell_volume))
        while remaining and s.t >= remaining[0] - 0.5 * tau:
            profiles[remaining.pop(0)] = centerline_profiles(s.u, spec.grid)

    stepper.run(state, t_end, on_step=on_step)
    return CavityRun(spec=spec, profiles=profiles, mass_residual=mass[0],
                     state=state)


# -- backward-facing step ----------------------------------------------------


def inflow_profile(y):
    """Parabolic inflow on the upper half channel, peak 3/2 at y = 3/4.

    u(y) = 24 (y - 1/2)(1 - y) on [1/2, 1], zero on the lower half; the
    bulk (mean over the upper half) is exactly 1, the reference velocity.
    """
    y = np.asarray(y, dtype=float)
    return np.where(y >= 0.5, 24.0 * (y - 0.5) * (1.0 - y), 0.0)


def _step_initial_state(grid):
    """Discretely divergence-free start: streamfunction blend from the
    half-channel inflow parabola to the developed full-channel parabola
    (same flux 1/2) over the first two channel heights.  Starting near
    the developed downstream profile keeps the slow cross-channel
    diffusive relaxation out of the transient.
    """
    x = grid.face_coords(0)[:, None]
    y = grid.face_coords(1)[None, :]
    w = np.clip(y - 0.5, 0.0, None)
    psi_in = 6.0 * w**2 - 8.0 * w**3          # integral of the inflow profile
    psi_dev = 1.5 * y**2 - y**3               # integral of 3 y (1 - y)
    s = np.clip(x / 2.0, 0.0, 1.0)
    s = 3.0 * s**2 - 2.0 * s**3
    psi = (1.0 - s) * psi_in + s * psi_dev    # corner values (nx+1, ny+1)
    u0 = StaggeredVectorField(grid)
    u0.comp[0][:, :] = np.diff(psi, axis=1) / grid.h[1]
    u0.comp[1][:, :] = -np.diff(psi, axis=0) / grid.h[0]
    return u0


def step_case(re=100.0, h=0.01, tau=0.002, chi=0.0, steady_tol=1e-6,
              max_time=400.0):
    nx = int(round(16.0 / h))
    ny = int(round(1.0 / h))
    grid = build_grid(2, (nx, ny), (16.0, 1.0))
    bc = BoundarySpec.no_slip(2)
    bc.set_velocity(0, 0, LO, DIRICHLET, lambda x, y, t: inflow_profile(y))
    bc.set_velocity(0, 0, HI, NEUMANN)
    bc.set_velocity(1, 0, HI, NEUMANN)
    bc.set_pressure(0, HI, DIRICHLET)
    cfg = SchemeConfig(variant=PR2D, tau=tau, chi=chi, nu=1.0 / re,
                       t_end=max_time, advection=True)
    return CaseSpec(grid=grid, re=re, bc=bc, config=cfg,
                    u0=_step_initial_state(grid),
                    steady_tol=steady_tol, max_time=max_time)


def recirculation_length(u, grid):
    """Reattachment abscissa: first negative-to-positive sign change of
    the wall-adjacent streamwise velocity, interpolated between faces.

    Returns None when the wall flow never reverses or never reattaches.
    """
    wall_u = u.comp[0][:, 0]
    x = grid.face_coords(0)
    neg = np.nonzero(wall_u < 0.0)[0]
    if len(neg) == 0:
        return None
    for i in range(neg[0], len(wall_u) - 1):
        if wall_u[i] < 0.0 and wall_u[i + 1] >= 0.0:
            frac = wall_u[i] / (wall_u[i] - wall_u[i + 1])
            return float(x[i] + frac * grid.h[0])
    return None


@dataclass
class StepReport:
    re: float
    r: Optional[float]
    s: float
    r_over_s: Optional[float]
    steady_steps: int
    steady: bool

    def csv_line(self):
        r = "nan" if self.r is None else repr(float(self.r))
        ros = "nan" if self.r_over_s is None else repr(float(self.r_over_s))
        return f"{self.re},{r},{self.s},{ros},{self.steady_steps}"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("re,r,s,r_over_s,steady_steps\n")
            fh.write(self.csv_line() + "\n")


def backward_facing_step(re=100.0, h=0.01, tau=0.002, chi=0.0,
                         steady_tol=1e-6, max_time=400.0, check_every=10):
    """Run the step channel to steadiness and report r/s (s = 1/2)."""
    spec = step_case(re=re, h=h, tau=tau, chi=chi, steady_tol=steady_tol,
                     max_time=max_time)
    stepper = Stepper(spec.grid, spec.config, spec.bc)
    state = stepper.initialize(spec.u0)
    steps = int(np.ceil(max_time / tau - 1e-9))
    steady = False
    for k in range(steps):
        stepper.advance(state)
        if (k + 1) % check_every == 0 and steady_detect(
                state.u_prev, state.u, tau, spec.steady_tol):
            steady = True
            break
    r = recirculation_length(state.u, spec.grid)
    s = 0.5
    return StepReport(re=re, r=r, s=s,
                      r_over_s=None if r is None else r / s,
                      steady_steps=state.k, steady=steady), state
