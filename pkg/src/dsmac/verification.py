"""Manufactured solutions, discrete error norms, convergence-rate fits,
divergence diagnostics, and the combined-form momentum residuals.

The residual oracles re-assemble the single-equation form of each split
velocity update from (u^k, u^{k+1}, p*, f) alone, with the same ghost
and pinning conventions the sweeps use, so they must vanish to roundoff
at every step for any boundary data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .grid import (HI, LO, BoundarySpec, ScalarField, StaggeredVectorField,
                   pad_component, sample_component_bc, set_normal_boundary)
from .operators import mean_zero_project, second_difference, MIRROR, NODE_MIRROR, PINNED
from .physics import ForcingSpec, sample_forcing
from .scheme import (BDF2, DOUGLAS3D, PR2D, FlowState, SchemeConfig, Stepper,
                     PHI_SUPPLIED, _d2_from_pad)
from .grid import NEUMANN, DIRICHLET


# -- manufactured solutions ------------------------------------------------

@dataclass
class ManufacturedSolution:
    """Closed forms for an exact unsteady Stokes solution and its source."""

    dim: int
    velocity: Sequence[Callable]
    pressure: Callable
    pressure_dt: Callable
    forcing: Sequence[Callable]

    def sample_velocity(self, grid, t):
        return StaggeredVectorField.sample(grid, self.velocity, t)

    def sample_pressure(self, grid, t, mean_zero=True):
        p = ScalarField.sample(grid, self.pressure, t)
        return mean_zero_project(p) if mean_zero else p

    def boundary_spec(self):
        return BoundarySpec.from_exact(self.dim, self.velocity)

    def forcing_spec(self):
        return ForcingSpec(self.forcing)


def mms_2d(nu=1.0):
    """Divergence-free 2D test solution u=(sin x sin(y+t), cos x cos(y+t)),
    p = cos x sin(y+t), with the matching unsteady Stokes source."""
    u = lambda x, y, t: np.sin(x) * np.sin(y + t)
    v = lambda x, y, t: np.cos(x) * np.cos(y + t)
    p = lambda x, y, t: np.cos(x) * np.sin(y + t)
    dpdt = lambda x, y, t: np.cos(x) * np.cos(y + t)
    fu = lambda x, y, t: (np.sin(x) * np.cos(y + t)
                          + (2.0 * nu - 1.0) * np.sin(x) * np.sin(y + t))
    fv = lambda x, y, t: (-np.cos(x) * np.sin(y + t)
                          + (2.0 * nu + 1.0) * np.cos(x) * np.cos(y + t))
    return ManufacturedSolution(2, (u, v), p, dpdt, (fu, fv))


def mms_3d(nu=1.0):
    """Divergence-free 3D test solution with p = cos(x+y+z+t); the spatial
    velocity factors are eigenfunctions of the Laplacian (lap = -3)."""
    sin, cos = np.sin, np.cos
    shape = (
        lambda x, y, z: sin(x) * cos(y) * sin(z) - sin(x) * sin(y) * cos(z),
        lambda x, y, z: sin(x) * sin(y) * cos(z) - cos(x) * sin(y) * sin(z),
        lambda x, y, z: cos(x) * sin(y) * sin(z) - sin(x) * cos(y) * sin(z),
    )

    def vel(s):
        return lambda x, y, z, t: s(x, y, z) * sin(t)

    def force(s):
        return lambda x, y, z, t: (s(x, y, z) * (cos(t) + 3.0 * nu * sin(t))
                                   - sin(x + y + z + t))

    def p(x, y, z, t):
        return cos(x + y + z + t)

    def dpdt(x, y, z, t):
        return -sin(x + y + z + t)

    return ManufacturedSolution(3, tuple(vel(s) for s in shape), p, dpdt,
                                tuple(force(s) for s in shape))


# -- error norms -------------------------------------------------------------

def l2_norm_cells(values, grid):
    return float(np.sqrt(np.sum(np.asarray(values) ** 2) * grid.cell_volume))


def l2_norm_faces(u):
    grid = u.grid
    total = sum(float(np.sum(a * a)) for a in u.comp)
    return float(np.sqrt(total * grid.cell_volume))


def l2_error_velocity(u_h, exact, t):
    """Cell-volume weighted L2 distance to the exact velocity at time t;
    all faces (normal boundary faces included)."""
    grid = u_h.grid
    ue = exact.sample_velocity(grid, t)
    diff = StaggeredVectorField(grid, [a - b for a, b in zip(u_h.comp, ue.comp)])
    return l2_norm_faces(diff)


def l2_error_pressure(p_h, exact, t):
    """L2 distance of the mean-zero representatives at time t."""
    grid = p_h.grid
    pe = exact.sample_pressure(grid, t, mean_zero=True)
    dif = mean_zero_project(p_h).values - pe.values
    return l2_norm_cells(dif, grid)


@dataclass
class ErrorReport:
    e_u_l2: float
    e_p_l2: float
    e_div_l2: float
    t_final: float

    def __post_init__(self):
        assert min(self.e_u_l2, self.e_p_l2, self.e_div_l2) >= 0.0


def divergence_history(history):
    """Max over recorded steps of the L2 divergence norm."""
    return float(max(history)) if len(history) else 0.0


# -- MMS runs and convergence studies ---------------------------------------

def run_mms(mms, grid, variant, tau, t_end, chi=1.0, nu=1.0,
            phi_policy=PHI_SUPPLIED, collect_div=True):
    """Advance the scheme against a manufactured solution; returns the
    final-time error report and the per-step divergence history."""
    from .operators import divergence

    cfg = SchemeConfig(variant=variant, tau=tau, chi=chi, nu=nu, t_end=t_end,
                       advection=False, phi_policy=phi_policy)
    stepper = Stepper(grid, cfg, mms.boundary_spec(), mms.forcing_spec())
    u0 = mms.sample_velocity(grid, 0.0)
    p0 = mms.sample_pressure(grid, 0.0)
    if p0 is None:
        raise ValueError("manufactured run needs exact initial pressure")
    phi0 = None
    if phi_policy == PHI_SUPPLIED:
        phi0 = ScalarField.sample(grid, mms.pressure_dt, 0.0)
        phi0.values *= 0.5 * tau
    state = stepper.initialize(u0, p0, phi0)
    history = []

    def on_step(s):
        if collect_div:
            history.append(l2_norm_cells(divergence(s.u).values, grid))

    stepper.run(state, t_end, on_step=on_step)
    e_u = l2_error_velocity(state.u, mms, state.t)
    t_p = state.t if variant == BDF2 else state.t - 0.5 * tau
    e_p = l2_error_pressure(state.p, mms, t_p)
    e_div = l2_norm_cells(divergence(state.u).values, grid)
    return ErrorReport(e_u, e_p, e_div, state.t), history


def fit_rate(taus, errors):
    """Least-squares slope of log(err) against log(tau); None if fewer
    than two usable (positive-error) rows remain."""
    pairs = [(t, e) for t, e in zip(taus, errors) if e > 0.0]
    if len(pairs) < 2:
        return None
    lt = np.log([q[0] for q in pairs])
    le = np.log([q[1] for q in pairs])
    return float(np.polyfit(lt, le, 1)[0])


@dataclass
class ConvergenceTable:
    taus: List[float]
    err_u: List[float]
    err_p: List[float]
    err_div: List[float]
    rate_u: Optional[float] = None
    rate_p: Optional[float] = None
    rate_div: Optional[float] = None
    used_u: List[bool] = field(default_factory=list)
    used_p: List[bool] = field(default_factory=list)
    used_div: List[bool] = field(default_factory=list)
    floor: Optional[ErrorReport] = None

    def to_csv(self, path):
        def fmt(r):
            return "nan" if r is None else f"{r:.6g}"

        with open(path, "w") as fh:
            fh.write("tau,err_u_l2,err_p_l2,err_div_l2\n")
            for row in zip(self.taus, self.err_u, self.err_p, self.err_div):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
            fh.write(f"# rate_u={fmt(self.rate_u)} rate_p={fmt(self.rate_p)}"
                     f" rate_div={fmt(self.rate_div)}\n")


def run_convergence_study(mms, grid, variant, taus, t_end=2.0, chi=1.0,
                          nu=1.0, phi_policy=PHI_SUPPLIED, floor_factor=3.0):
    """MMS study over a decreasing tau list with spatial-floor exclusion.

    The floor is estimated by one extra run at tau_min/2; rows whose error
    is below floor_factor times the floor are dropped from the fit (they
    measure the spatial truncation, not the time discretization).
    """
    taus = list(taus)
    if len(taus) < 3:
        raise ValueError("need at least 3 tau values for a study")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau values must be strictly decreasing")
    reports = []
    div_max = []
    for tau in taus:
        rep, hist = run_mms(mms, grid, variant, tau, t_end, chi=chi, nu=nu,
                            phi_policy=phi_policy)
        reports.append(rep)
        div_max.append(divergence_history(hist))
    floor, _ = run_mms(mms, grid, variant, taus[-1] / 2.0, t_end, chi=chi,
                       nu=nu, phi_policy=phi_policy, collect_div=False)

    def usable(errs, floor_val):
        return [e >= floor_factor * floor_val for e in errs]

    err_u = [r.e_u_l2 for r in reports]
    err_p = [r.e_p_l2 for r in reports]
    used_u = usable(err_u, floor.e_u_l2)
    used_p = usable(err_p, floor.e_p_l2)
    used_div = [True] * len(taus)
    table = ConvergenceTable(
        taus=taus, err_u=err_u, err_p=err_p, err_div=div_max,
        used_u=used_u, used_p=used_p, used_div=used_div, floor=floor)
    table.rate_u = fit_rate([t for t, m in zip(taus, used_u) if m],
                            [e for e, m in zip(err_u, used_u) if m])
    table.rate_p = fit_rate([t for t, m in zip(taus, used_p) if m],
                            [e for e, m in zip(err_p, used_p) if m])
    table.rate_div = fit_rate(taus, div_max)
    return table


# -- combined-form residual oracles ------------------------------------------

def _active_region(stepper, comp):
    sl = [slice(None)] * stepper.grid.dim
    sl[comp] = stepper.active[comp]
    return tuple(sl)


def combined_residual_2d(stepper, t, u_old, u_new, p_star, f_eff):
    """Max relative residual of the one-equation form of the 2D update:
    du/tau - nu lap(u_bar) + grad p* + (nu^2 tau / 4) dxx(dyy du) = f."""
    from .operators import gradient_to_faces

    grid, cfg = stepper.grid, stepper.config
    tau, nu = cfg.tau, cfg.nu
    bc_k = stepper.bc_level(t)
    bc_n = stepper.bc_level(t + tau)
    bc_h = stepper.bc_combine(bc_k, bc_n, 0.5, 0.5)
    bc_d = stepper.bc_combine(bc_n, bc_k, 1.0, -1.0)
    gp = gradient_to_faces(p_star, stepper.pressure_bc)
    worst = 0.0
    for c in range(2):
        du = u_new.comp[c] - u_old.comp[c]
        ubar = 0.5 * (u_new.comp[c] + u_old.comp[c])
        pad_bar = pad_component(ubar, c, grid, stepper.bc, bc_h[c])
        lap = sum(_d2_from_pad(pad_bar, a, grid.h[a]) for a in range(2))
        pad_du = pad_component(du, c, grid, stepper.bc, bc_d[c])
        mixed_inner = _d2_from_pad(pad_du, 1, grid.h[1])
        if c == 0:
            _zero_pinned_stations(stepper, mixed_inner, c)
            lo = NODE_MIRROR if stepper.bc.kind(c, 0, LO) == NEUMANN else PINNED
            hi = NODE_MIRROR if stepper.bc.kind(c, 0, HI) == NEUMANN else PINNED
        else:
            lo = hi = ("reflect", 0.0)
        mixed = second_difference(mixed_inner, 0, grid.h[0], lo, hi)
        resid = (du / tau - nu * lap + gp.comp[c]
                 + 0.25 * nu * nu * tau * mixed - f_eff.comp[c])
        region = _active_region(stepper, c)
        scale = max(np.max(np.abs(du / tau)), np.max(np.abs(nu * lap)),
                    np.max(np.abs(f_eff.comp[c])), np.max(np.abs(gp.comp[c])),
                    1e-30)
        worst = max(worst, float(np.max(np.abs(resid[region]))) / scale)
    return worst


def _zero_pinned_stations(stepper, arr, comp):
    for side, pinned in ((LO, stepper.active[comp].start == 1),
                         (HI, stepper.active[comp].stop == stepper.grid.n[comp])):
        if pinned:
            idx = [slice(None)] * arr.ndim
            idx[comp] = 0 if side == LO else -1
            arr[tuple(idx)] = 0.0


def combined_residual_3d(stepper, t, u_old, u_new, p_star, f_eff,
                         u_prev=None):
    """Max relative residual of the factored increment identity
    prod_d (1 - theta d2_d) (u^{k+1} - u^k) = rhs0, equivalent to the
    one-equation form with the three mixed and the triple-mixed terms."""
    from .operators import gradient_to_faces

    grid, cfg = stepper.grid, stepper.config
    tau, nu = cfg.tau, cfg.nu
    bdf2 = cfg.variant == BDF2
    theta = 2.0 * nu * tau / 3.0 if bdf2 else 0.5 * nu * tau
    dt_expl = 2.0 * tau / 3.0 if bdf2 else tau
    bc_k = stepper.bc_level(t)
    bc_n = stepper.bc_level(t + tau)
    bc_d = stepper.bc_combine(bc_n, bc_k, 1.0, -1.0)
    gp = gradient_to_faces(p_star, stepper.pressure_bc)
    worst = 0.0
    for c in range(3):
        arr = u_old.comp[c]
        pad_k = pad_component(arr, c, grid, stepper.bc, bc_k[c])
        lap = sum(_d2_from_pad(pad_k, a, grid.h[a]) for a in range(3))
        rhs0 = dt_expl * (nu * lap - gp.comp[c] + f_eff.comp[c])
        if bdf2:
            rhs0 = rhs0 + (u_old.comp[c] - u_prev.comp[c]) / 3.0
        w = u_new.comp[c] - arr
        for axis in (2, 1, 0):
            pad_w = pad_component(w, c, grid, stepper.bc, bc_d[c])
            w = w - theta * _d2_from_pad(pad_w, axis, grid.h[axis])
            set_normal_boundary(w, c, stepper.bc, bc_d[c])
        resid = w - rhs0
        region = _active_region(stepper, c)
        scale = max(np.max(np.abs(rhs0)), np.max(np.abs(u_new.comp[c] - arr)),
                    1e-30)
        worst = max(worst, float(np.max(np.abs(resid[region]))) / scale)
    return worst


def bdf2_displayed_residuals(stepper, t, u_old, u_prev, p_star, f_eff,
                             eta, zeta, u_new):
    """Residuals of the three displayed BDF2 sweep equations, assembled
    directly from the recorded intermediates."""
    from .operators import gradient_to_faces

    grid, cfg = stepper.grid, stepper.config
    tau, nu = cfg.tau, cfg.nu
    bc_k = stepper.bc_level(t)
    bc_n = stepper.bc_level(t + tau)
    gp = gradient_to_faces(p_star, stepper.pressure_bc)
    worst = 0.0
    for c in range(3):
        uo, up = u_old.comp[c], u_prev.comp[c]
        pad_o = pad_component(uo, c, grid, stepper.bc, bc_k[c])
        pad_eta = pad_component(eta.comp[c], c, grid, stepper.bc, bc_n[c])
        pad_zeta = pad_component(zeta.comp[c], c, grid, stepper.bc, bc_n[c])
        pad_new = pad_component(u_new.comp[c], c, grid, stepper.bc, bc_n[c])
        d2 = lambda p, a: _d2_from_pad(p, a, grid.h[a])
        common = gp.comp[c] - f_eff.comp[c]
        r1 = ((3.0 * eta.comp[c] - 4.0 * uo + up) / (2.0 * tau)
              - nu * d2(pad_eta, 0) - nu * (d2(pad_o, 1) + d2(pad_o, 2))
              + common)
        r2 = ((3.0 * zeta.comp[c] - 4.0 * uo + up) / (2.0 * tau)
              - nu * d2(pad_eta, 0) - nu * d2(pad_zeta, 1) - nu * d2(pad_o, 2)
              + common)
        r3 = ((3.0 * u_new.comp[c] - 4.0 * uo + up) / (2.0 * tau)
              - nu * d2(pad_eta, 0) - nu * d2(pad_zeta, 1)
              - nu * d2(pad_new, 2) + common)
        region = _interior_region(stepper, c)
        scale = max(np.max(np.abs(uo / tau)), np.max(np.abs(f_eff.comp[c])),
                    np.max(np.abs(nu * d2(pad_eta, 0))), 1e-30)
        for r in (r1, r2, r3):
            worst = max(worst, float(np.max(np.abs(r[region]))) / scale)
    return worst


def _interior_region(stepper, comp):
    """Strictly interior nodes (one layer off every wall)."""
    sl = []
    for a in range(stepper.grid.dim):
        if a == comp:
            sl.append(slice(1, stepper.grid.n[a]))
        else:
            sl.append(slice(1, -1))
    return tuple(sl)
