"""Direction-splitting fractional-step time advance.

One step runs four substeps:

  1. pressure predictor      p* = p + phi            (BDF2: p + 4/3 phi - 1/3 phi_prev)
  2. velocity update         batched 1D implicit sweeps, one axis at a time
  3. penalty step            A phi_new = -(1/tau) div u_new   (BDF2: -3/(2 tau))
  4. pressure update         p_new = p + phi_new - chi * nu * div(u_bar)

Velocity variants: two-stage alternating sweeps in 2D (x-implicit half step,
then y-implicit), and in 3D an explicit predictor followed by three implicit
increment corrections (one per axis); the BDF2 variant replaces the
time-derivative weights and solves on 2*tau/3 coefficients.  All Laplacian
terms carry the viscosity nu; the rotational pressure correction is
chi * nu * div so the standard/rotational correspondence survives Reynolds
scaling.

Boundary data placement: the 2D x-implicit half step uses time-averaged
Dirichlet data, final stages use the new-time data, and the 3D increment
systems use the increment of the data; normal Dirichlet faces are pinned
after every sweep, tangential traces enter through ghost reflection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import (DIRICHLET, HI, LO, NEUMANN, ScalarField,
                   StaggeredVectorField, component_ghost_layers,
                   pad_component, sample_component_bc, set_normal_boundary)
from .operators import (PenaltyOperator, divergence, gradient_to_faces,
                        mean_zero_project, second_difference, MIRROR,
                        NODE_MIRROR, PINNED)
from .physics import ForcingSpec, ab2_extrapolate, advection_term, sample_forcing
from .tridiag import CELL, FACE, assemble_helmholtz_line, batch_solve

PR2D = "pr2d"
DOUGLAS3D = "douglas3d"
BDF2 = "bdf2_3d"
VARIANTS = (PR2D, DOUGLAS3D, BDF2)

PHI_ZERO = "zero"
PHI_SUPPLIED = "supplied"


class SchemeError(ValueError):
    pass


class NumericalBlowup(RuntimeError):
    pass


@dataclass
class SchemeConfig:
    variant: str
    tau: float
    chi: float = 1.0
    nu: float = 1.0
    t_end: float = 1.0
    advection: bool = False
    phi_policy: str = PHI_ZERO

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SchemeError(f"unknown variant {self.variant!r}")
        if not self.tau > 0.0:
            raise SchemeError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.chi <= 1.0:
            raise SchemeError(f"chi must lie in [0, 1], got {self.chi}")
        if not self.nu > 0.0:
            raise SchemeError(f"nu must be positive, got {self.nu}")
        if self.phi_policy not in (PHI_ZERO, PHI_SUPPLIED):
            raise SchemeError(f"unknown phi policy {self.phi_policy!r}")

    @property
    def steps(self):
        return int(np.ceil(self.t_end / self.tau - 1e-9))


@dataclass
class FlowState:
    """Full time-level state; pressure and correction sit at k-1/2 for the
    theta variants and at integer levels for BDF2."""

    u: StaggeredVectorField
    p: ScalarField
    phi: ScalarField
    u_prev: Optional[StaggeredVectorField] = None
    phi_prev: Optional[ScalarField] = None
    adv_prev: Optional[StaggeredVectorField] = None
    k: int = 0
    t: float = 0.0


@dataclass
class SweepWorkspace:
    """Intermediates of the last velocity update (diagnostics only)."""

    u_half: Optional[StaggeredVectorField] = None
    xi: Optional[StaggeredVectorField] = None
    eta: Optional[StaggeredVectorField] = None
    zeta: Optional[StaggeredVectorField] = None
    rhs0: Optional[list] = None


class Stepper:
    """Owns the prefactored line operators and advances a FlowState."""

    def __init__(self, grid, config, bc, forcing=None):
        if config.variant == PR2D and grid.dim != 2:
            raise SchemeError("pr2d variant needs a 2D grid")
        if config.variant in (DOUGLAS3D, BDF2) and grid.dim != 3:
            raise SchemeError(f"{config.variant} variant needs a 3D grid")
        self.grid = grid
        self.config = config
        self.bc = bc
        self.forcing = forcing if forcing is not None else ForcingSpec.zero()
        self.pressure_bc = dict(bc.pressure)
        self.penalty = PenaltyOperator(grid, self.pressure_bc)
        self.enclosed = not self.penalty.anchored
        nu, tau = config.nu, config.tau
        self.theta = 0.5 * nu * tau
        thetas = {"cn": self.theta}
        if config.variant == BDF2:
            thetas["bdf2"] = 2.0 * nu * tau / 3.0
        self.lines = {
            key: self._build_lines(theta) for key, theta in thetas.items()
        }
        # active station range of each component along its own axis
        self.active = []
        for c in range(grid.dim):
            lo = 1 if bc.kind(c, c, LO) == DIRICHLET else 0
            hi = grid.n[c] + (0 if bc.kind(c, c, HI) == DIRICHLET else 1)
            self.active.append(slice(lo, hi))
        self._bc_cache = {}
        self.workspace = SweepWorkspace()

    def _build_lines(self, theta):
        lines = {}
        for c in range(self.grid.dim):
            for a in range(self.grid.dim):
                lines[(c, a)] = assemble_helmholtz_line(
                    self.grid.n[a], self.grid.h[a], theta,
                    bc_lo=self.bc.kind(c, a, LO), bc_hi=self.bc.kind(c, a, HI),
                    stagger=FACE if a == c else CELL)
        return lines

    # -- boundary data ----------------------------------------------------

    def bc_level(self, t):
        key = round(t / self.config.tau * 2)
        if not self.bc.time_dependent:
            key = 0
        if key not in self._bc_cache:
            if len(self._bc_cache) > 8:
                self._bc_cache.clear()
            self._bc_cache[key] = [
                sample_component_bc(self.grid, self.bc, c, t)
                for c in range(self.grid.dim)]
        return self._bc_cache[key]

    def bc_combine(self, l0, l1, c0, c1):
        return [a.combine(b, c0, c1) for a, b in zip(l0, l1)]

    # -- substeps ----------------------------------------------------------

    def pressure_predictor(self, state):
        if self.config.variant == BDF2:
            vals = (state.p.values + (4.0 / 3.0) * state.phi.values
                    - (1.0 / 3.0) * state.phi_prev.values)
        else:
            vals = state.p.values + state.phi.values
        return ScalarField(self.grid, vals)

    def _implicit(self, key, comp, axis, rhs_full, cbc):
        """One batched 1D solve; inactive stations keep their rhs values."""
        helm = self.lines[key][(comp, axis)]
        if axis == comp:
            g_lo = cbc.normal[LO] if cbc.normal[LO] is not None else 0.0
            g_hi = cbc.normal[HI] if cbc.normal[HI] is not None else 0.0
            return batch_solve(helm, rhs_full, axis, g_lo, g_hi)
        sl = [slice(None)] * self.grid.dim
        sl[comp] = self.active[comp]
        sub = rhs_full[tuple(sl)]

        def wall(side):
            g = cbc.wall[(axis, side)]
            if g is None:
                return 0.0
            pos = comp if comp < axis else comp - 1
            key_w = [slice(None)] * g.ndim
            key_w[pos] = self.active[comp]
            return g[tuple(key_w)]

        solved = batch_solve(helm, sub, axis, wall(LO), wall(HI))
        out = rhs_full.copy()
        out[tuple(sl)] = solved
        return out

    def momentum_sweep_2d(self, u, t, p_star, f_eff, record=False):
        grid, cfg = self.grid, self.config
        tau, nu = cfg.tau, cfg.nu
        bc_k = self.bc_level(t)
        bc_n = self.bc_level(t + tau)
        bc_h = self.bc_combine(bc_k, bc_n, 0.5, 0.5)
        gp = gradient_to_faces(p_star, self.pressure_bc)
        new = []
        halves = []
        for c in range(2):
            arr = u.comp[c]
            drive = f_eff.comp[c] - gp.comp[c]  # shared by both stages
            drive *= 0.5 * tau
            rhs1 = _d2_axis(arr, c, 1, grid, self.bc, bc_k[c])
            rhs1 *= 0.5 * tau * nu
            rhs1 += arr
            rhs1 += drive
            uh = self._implicit("cn", c, 0, rhs1, bc_h[c])
            set_normal_boundary(uh, c, self.bc, bc_h[c])
            rhs2 = _d2_axis(uh, c, 0, grid, self.bc, bc_h[c])
            rhs2 *= 0.5 * tau * nu
            rhs2 += uh
            rhs2 += drive
            un = self._implicit("cn", c, 1, rhs2, bc_n[c])
            set_normal_boundary(un, c, self.bc, bc_n[c])
            new.append(un)
            halves.append(uh)
        if record:
            self.workspace.u_half = StaggeredVectorField(grid, halves)
        return StaggeredVectorField(grid, new)

    def _sweep_increments(self, key, u, t, p_star, f_eff, dt_expl,
                          extra_rhs=None, record=False):
        """Shared 3D machinery: explicit predictor + per-axis corrections.

        dt_expl multiplies the explicit (Laplacian - grad p + f) block;
        extra_rhs (BDF2) adds (u^k - u^{k-1})/3 to the increment rhs.
        """
        grid, cfg = self.grid, self.config
        nu = cfg.nu
        bc_k = self.bc_level(t)
        bc_n = self.bc_level(t + cfg.tau)
        bc_d = self.bc_combine(bc_n, bc_k, 1.0, -1.0)
        gp = gradient_to_faces(p_star, self.pressure_bc)
        new = []
        stages = [[], [], []] if record else None
        for c in range(3):
            arr = u.comp[c]
            w = _d2_axis(arr, c, 0, grid, self.bc, bc_k[c])
            w += _d2_axis(arr, c, 1, grid, self.bc, bc_k[c])
            w += _d2_axis(arr, c, 2, grid, self.bc, bc_k[c])
            w *= dt_expl * nu
            w += dt_expl * (f_eff.comp[c] - gp.comp[c])
            if extra_rhs is not None:
                w += extra_rhs[c]
            if record:
                xi = arr + w
                set_normal_boundary(xi, c, self.bc, bc_n[c])
                stages[0].append(xi)
            for a in range(3):
                w = self._implicit(key, c, a, w, bc_d[c])
                set_normal_boundary(w, c, self.bc, bc_d[c])
                if record and a < 2:
                    inter = arr + w
                    set_normal_boundary(inter, c, self.bc, bc_n[c])
                    stages[a + 1].append(inter)
            un = arr + w
            set_normal_boundary(un, c, self.bc, bc_n[c])
            new.append(un)
        if record:
            self.workspace.xi = StaggeredVectorField(grid, stages[0])
            self.workspace.eta = StaggeredVectorField(grid, stages[1])
            self.workspace.zeta = StaggeredVectorField(grid, stages[2])
        return StaggeredVectorField(grid, new)

    def momentum_sweep_3d(self, u, t, p_star, f_eff, record=False):
        return self._sweep_increments("cn", u, t, p_star, f_eff,
                                      dt_expl=self.config.tau, record=record)

    def momentum_sweep_bdf2(self, u, u_prev, t, p_star, f_eff, record=False):
        if u_prev is None:
            raise SchemeError("BDF2 sweep needs the previous velocity level")
        extra = [(a - b) / 3.0 for a, b in zip(u.comp, u_prev.comp)]
        return self._sweep_increments("bdf2", u, t, p_star, f_eff,
                                      dt_expl=2.0 * self.config.tau / 3.0,
                                      extra_rhs=extra, record=record)

    def penalty_step(self, u_new, factor):
        div = divergence(u_new)
        return ScalarField(self.grid,
                           self.penalty.solve_values(-factor * div.values))

    def pressure_update(self, state, phi_new, u_new):
        vals = state.p.values + phi_new.values
        if self.config.chi != 0.0:
            ubar = StaggeredVectorField(
                self.grid,
                [0.5 * (a + b) for a, b in zip(u_new.comp, state.u.comp)])
            vals = vals - self.config.chi * self.config.nu \
                * divergence(ubar).values
        if self.enclosed:
            vals = vals - vals.mean()
        return ScalarField(self.grid, vals)

    # -- step driver --------------------------------------------------------

    def _forcing_with_advection(self, state, t_sample):
        n_k = None
        if not self.config.advection:
            return sample_forcing(self.forcing, t_sample, self.grid), None
        n_k = advection_term(state.u, self.bc, state.t,
                             bclevels=self.bc_level(state.t))
        prev = state.adv_prev if state.adv_prev is not None else n_k
        if self.forcing.fns is None:
            comps = [0.5 * b - 1.5 * a for a, b in zip(n_k.comp, prev.comp)]
        else:
            f = sample_forcing(self.forcing, t_sample, self.grid)
            comps = [fc - 1.5 * a + 0.5 * b
                     for fc, a, b in zip(f.comp, n_k.comp, prev.comp)]
        return StaggeredVectorField(self.grid, comps), n_k

    def advance(self, state, record=False):
        cfg = self.config
        tau = cfg.tau
        variant = cfg.variant
        t_sample = state.t + (tau if variant == BDF2 else 0.5 * tau)
        f_eff, n_k = self._forcing_with_advection(state, t_sample)
        p_star = self.pressure_predictor(state)
        if variant == PR2D:
            u_new = self.momentum_sweep_2d(state.u, state.t, p_star, f_eff,
                                           record=record)
            factor = 1.0 / tau
        elif variant == DOUGLAS3D:
            u_new = self.momentum_sweep_3d(state.u, state.t, p_star, f_eff,
                                           record=record)
            factor = 1.0 / tau
        else:
            u_new = self.momentum_sweep_bdf2(state.u, state.u_prev, state.t,
                                             p_star, f_eff, record=record)
            factor = 1.5 / tau
        for a in u_new.comp:
            if not np.all(np.isfinite(a)):
                raise NumericalBlowup(
                    f"velocity became non-finite at step {state.k + 1}")
        phi_new = self.penalty_step(u_new, factor)
        p_new = self.pressure_update(state, phi_new, u_new)
        state.u_prev = state.u
        state.u = u_new
        state.phi_prev = state.phi
        state.phi = phi_new
        state.p = p_new
        state.adv_prev = n_k
        state.k += 1
        state.t += tau
        return state

    def initialize(self, u0=None, p0=None, phi0=None):
        """State at k=0 (BDF2: one lower-order startup step to level 1)."""
        grid, cfg = self.grid, self.config
        u = u0.copy() if u0 is not None else StaggeredVectorField(grid)
        p = p0.copy() if p0 is not None else ScalarField(grid)
        if self.enclosed:
            p = mean_zero_project(p)
        if cfg.phi_policy == PHI_SUPPLIED:
            if phi0 is None:
                raise SchemeError("phi policy 'supplied' needs phi0 data")
            phi = mean_zero_project(phi0) if self.enclosed else phi0.copy()
        else:
            phi = ScalarField(grid)
        state = FlowState(u=u, p=p, phi=phi,
                          phi_prev=ScalarField(grid))
        if cfg.variant != BDF2:
            return state
        # startup: one Crank-Nicolson (Douglas) step supplies level 1
        f_eff, n_k = self._forcing_with_advection(state, 0.5 * cfg.tau)
        p_star = self.pressure_predictor_cn(state)
        u1 = self.momentum_sweep_3d(state.u, 0.0, p_star, f_eff)
        phi1 = self.penalty_step(u1, 1.0 / cfg.tau)
        p1 = self.pressure_update(state, phi1, u1)
        return FlowState(u=u1, p=p1, phi=phi1, u_prev=state.u,
                         phi_prev=ScalarField(grid), adv_prev=n_k,
                         k=1, t=cfg.tau)

    def pressure_predictor_cn(self, state):
        return ScalarField(self.grid, state.p.values + state.phi.values)

    def run(self, state, t_end=None, on_step=None):
        t_end = self.config.t_end if t_end is None else t_end
        steps = int(np.ceil((t_end - state.t) / self.config.tau - 1e-9))
        for _ in range(steps):
            self.advance(state)
            if on_step is not None:
                on_step(state)
        return state


def _d2_from_pad(padded, axis, h):
    nd = padded.ndim
    sl = lambda a, b: tuple(
        slice(a, b) if d == axis else slice(1, -1) for d in range(nd))
    return (padded[sl(0, -2)] - 2.0 * padded[sl(1, -1)]
            + padded[sl(2, None)]) / h**2


def _d2_axis(arr, comp, axis, grid, bc, cbc):
    """Ghost-closed second difference along one axis, without padding."""
    lo, hi = component_ghost_layers(arr, comp, axis, grid, bc, cbc)
    h2 = grid.h[axis] ** 2
    nd = arr.ndim

    def sl(a, b):
        return tuple(slice(a, b) if d == axis else slice(None)
                     for d in range(nd))

    out = np.empty_like(arr)
    out[sl(1, -1)] = (arr[sl(0, -2)] - 2.0 * arr[sl(1, -1)]
                      + arr[sl(2, None)]) / h2
    out[sl(0, 1)] = (lo - 2.0 * arr[sl(0, 1)] + arr[sl(1, 2)]) / h2
    out[sl(-1, None)] = (arr[sl(-2, -1)] - 2.0 * arr[sl(-1, None)] + hi) / h2
    return out
