"""Macroscopic reaction-diffusion(-advection) time stepping.

Concentration and porosity live on the nodes of a MacroGrid.  Space is a
vertex-centred finite-volume discretisation (dual cells around the nodes,
arithmetic face means of the nodal coefficients), so the implicit diffusion
matrix is a symmetric M-matrix and no-flux boundaries conserve mass exactly.

Three steppers:

* ``step_partial``: porosity etc. prescribed through s(t, x) and a parameter
  table; implicit Euler on the divergence term, Picard on the right-hand side.
* ``step_full``: porosity-indexed coefficients with the coupled porosity
  equation; diffusion solve followed by a per-node Picard update of the local
  reaction system.
* ``step_advective``: ``step_partial`` plus explicit first-order upwind
  transport by a Darcy velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .darcy import EDGES, DarcyData, MacroGrid, permeability_field, solve_darcy
from .errors import (BandViolationError, ConfigError, DegeneracyError, NonlinearityError,
                     StabilityError)

MODES = ("partial_diffusive", "full_diffusive", "partial_advective")
PICARD_TOL = 1e-8
PICARD_MAX = 50
CFL_MAX = 0.9


@dataclass(frozen=True)
class ReactionRate:
    f: Callable
    lipschitz_bound: float | None = None
    name: str = "custom"

    @classmethod
    def linear(cls) -> ReactionRate:
        return cls(lambda c: c, 1.0, "linear")

    @classmethod
    def zero(cls) -> ReactionRate:
        return cls(lambda c: np.zeros_like(c), 0.0, "zero")

    def __call__(self, c):
        return self.f(c)


@dataclass(frozen=True)
class CouplingMode:
    mode: str
    s_field: Callable | None = None     # (t, X, Y) -> s
    vn_sign: int = 1

    def __post_init__(self):
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode.startswith("partial") and self.s_field is None:
            problems.append(f"mode {self.mode} needs an order-parameter field s(t, x)")
        if self.vn_sign not in (1, -1):
            problems.append(f"vn_sign must be +1 or -1, got {self.vn_sign}")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class TransportSetup:
    """Grid, boundary data and numerical controls shared by all steppers.

    ``dirichlet`` maps edge names to constant boundary concentrations; edges
    not listed are no-flux.  ``diffusion_scale`` multiplies every tabulated
    diffusion tensor.
    """

    grid: MacroGrid
    dirichlet: dict = field(default_factory=dict)
    rate: ReactionRate = field(default_factory=ReactionRate.linear)
    diffusion_scale: float = 1.0
    picard_tol: float = PICARD_TOL
    picard_max: int = PICARD_MAX

    def __post_init__(self):
        bad = [e for e in self.dirichlet if e not in EDGES]
        if bad:
            raise ConfigError([f"unknown boundary edge {e!r}" for e in bad])

    @property
    def shape(self) -> tuple:
        return (self.grid.ny + 1, self.grid.nx + 1)

    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for e in self.dirichlet:
            mask.ravel()[self.grid.edge_nodes(e)] = True
        return mask

    def dirichlet_values(self) -> np.ndarray:
        vals = np.zeros(self.shape)
        for e in EDGES:
            if e in self.dirichlet:
                vals.ravel()[self.grid.edge_nodes(e)] = float(self.dirichlet[e])
        return vals

    def node_weights(self) -> np.ndarray:
        """Dual-cell areas: full interior cells, halves on edges, quarters at corners."""
        g = self.grid
        wx = np.full(g.nx + 1, g.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(g.ny + 1, g.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wy, wx)

    def nodes(self):
        return self.grid.node_coords()


@dataclass(frozen=True)
class TransportState:
    c: np.ndarray
    phi: np.ndarray
    t: float
    s: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.c)):
            raise NonlinearityError(f"concentration is not finite at t={self.t:.6g}")


@dataclass
class StepInfo:
    picard_iterations: int
    picard_change: float


# --- spatial operators ---

def diffusion_matrix(grid: MacroGrid, ax: np.ndarray, ay: np.ndarray) -> sp.csr_matrix:
    """Finite-volume matrix of -div(a grad .) times the dual-cell areas.

    ``ax`` and ``ay`` are nodal coefficients for the x and y fluxes.  The
    result is symmetric with zero row sums.
    """
    ny1, nx1 = ax.shape
    idx = np.arange(nx1 * ny1).reshape(ny1, nx1)
    ly = np.full(ny1, grid.hy)
    ly[[0, -1]] *= 0.5
    lx = np.full(nx1, grid.hx)
    lx[[0, -1]] *= 0.5
    tx = 0.5 * (ax[:, 1:] + ax[:, :-1]) * ly[:, None] / grid.hx
    ty = 0.5 * (ay[1:, :] + ay[:-1, :]) * lx[None, :] / grid.hy
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    t = np.concatenate([tx.ravel(), ty.ravel()])
    n = nx1 * ny1
    off = sp.coo_matrix((-t, (a, b)), shape=(n, n))
    diag = np.bincount(a, t, n) + np.bincount(b, t, n)
    return (off + off.T + sp.diags(diag)).tocsr()


def _with_dirichlet(A: sp.csr_matrix, mask: np.ndarray) -> sp.csc_matrix:
    """Replace Dirichlet rows by identity rows (columns stay, rhs is adjusted by the caller)."""
    keep = sp.diags((~mask.ravel()).astype(float))
    fix = sp.diags(mask.ravel().astype(float))
    return (keep @ A + fix).tocsc()


def node_gradient(grid: MacroGrid, u: np.ndarray):
    """Centred differences inside, one-sided at the boundary: (du/dx, du/dy)."""
    gy, gx = np.gradient(u, grid.hy, grid.hx)
    return gx, gy


def face_fluxes(grid: MacroGrid, v: np.ndarray):
    """Volume fluxes through the dual-cell faces from cell-centre velocities.

    Returns (Fx, Fy, B): Fx (ny+1, nx) positive in +x, Fy (ny, nx+1)
    positive in +y, and B (ny+1, nx+1) the outward flux through the domain
    boundary part of each boundary node's dual cell.
    """
    ny, nx = grid.ny, grid.nx
    vx, vy = v[..., 0], v[..., 1]
    px = np.zeros((ny + 2, nx))
    px[1:-1] = vx
    Fx = 0.5 * grid.hy * (px[:-1] + px[1:])
    py = np.zeros((ny, nx + 2))
    py[:, 1:-1] = vy
    Fy = 0.5 * grid.hx * (py[:, :-1] + py[:, 1:])
    B = np.zeros((ny + 1, nx + 1))
    B[:, 0] -= _edge_half_sums(vx[:, 0], grid.hy)
    B[:, -1] += _edge_half_sums(vx[:, -1], grid.hy)
    B[0, :] -= _edge_half_sums(vy[0, :], grid.hx)
    B[-1, :] += _edge_half_sums(vy[-1, :], grid.hx)
    return Fx, Fy, B


def _edge_half_sums(vals: np.ndarray, h: float) -> np.ndarray:
    """Integrate a piecewise-constant edge velocity onto the edge nodes."""
    out = np.zeros(len(vals) + 1)
    out[:-1] += 0.5 * h * vals
    out[1:] += 0.5 * h * vals
    return out


def upwind_divergence(grid: MacroGrid, v: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Net upwind outflow of v c from every dual cell (not divided by its area)."""
    Fx, Fy, B = face_fluxes(grid, v)
    out = np.zeros_like(c)
    qx = np.where(Fx > 0, Fx * c[:, :-1], Fx * c[:, 1:])
    out[:, :-1] += qx
    out[:, 1:] -= qx
    qy = np.where(Fy > 0, Fy * c[:-1, :], Fy * c[1:, :])
    out[:-1, :] += qy
    out[1:, :] -= qy
    out += B * c
    return out


def advective_flux_audit(grid: MacroGrid, v: np.ndarray, c: np.ndarray) -> tuple:
    """(sum of dual-cell divergences, boundary advective outflow)."""
    _, _, B = face_fluxes(grid, v)
    return float(upwind_divergence(grid, v, c).sum()), float((B * c).sum())


def cfl_number(grid: MacroGrid, v: np.ndarray, phi_min: float, dt: float) -> float:
    """Courant number of the explicit upwind step for the speed v / phi."""
    speed = np.abs(v[..., 0]) / grid.hx + np.abs(v[..., 1]) / grid.hy
    return float(dt * speed.max() / phi_min) if speed.size else 0.0


# --- coefficient lookup ---

def table_coefficients(table, s: np.ndarray, scale: float = 1.0):
    """Nodal (phi, sigma, D11, D22) from a parameter table at order parameters s.

    Off-diagonal D entries are not used by the five-point operator.
    """
    return (table.column("phi", s), table.column("sigma", s),
            scale * table.column("D11", s), scale * table.column("D22", s))


def _check_band(phi: np.ndarray, lo: float, hi: float, t: float) -> None:
    bad = (phi < lo) | (phi > hi) | ~np.isfinite(phi)
    if np.any(bad):
        k = int(np.flatnonzero(bad.ravel())[0])
        j, i = np.unravel_index(k, phi.shape)
        raise BandViolationError(
            f"porosity {phi.ravel()[k]:.6g} at node {k} (i={i}, j={j}) left the band "
            f"[{lo:.6g}, {hi:.6g}] at t={t:.6g}", node=k, t=t)


# --- steppers ---

def _picard(solve, rhs_of, c_start: np.ndarray, setup: TransportSetup, t: float):
    c_tilde = c_start
    for k in range(1, setup.picard_max + 1):
        c_new = solve(rhs_of(c_tilde))
        change = float(np.max(np.abs(c_new - c_tilde)))
        if change <= setup.picard_tol * max(1.0, float(np.max(np.abs(c_new)))):
            return c_new, StepInfo(k, change)
        c_tilde = c_new
    raise NonlinearityError(
        f"Picard iteration did not converge in {setup.picard_max} sweeps at t={t:.6g} "
        f"(last change {change:.3e}); reduce dt")


def _partial_like(state: TransportState, s_field, table, dt: float, setup: TransportSetup,
                  advect=None):
    if dt <= 0:
        raise ValueError("time step must be positive")
    grid = setup.grid
    X, Y = setup.nodes()
    t1 = state.t + dt
    s0 = np.broadcast_to(np.asarray(s_field(state.t, X, Y), dtype=float), X.shape)
    s1 = np.broadcast_to(np.asarray(s_field(t1, X, Y), dtype=float), X.shape)
    phi0 = table.column("phi", s0)
    phi1, sig1, d11, d22 = table_coefficients(table, s1, setup.diffusion_scale)
    _check_band(phi1, table.delta, 1.0 - table.delta, t1)
    dphi_dt = (phi1 - phi0) / dt
    gphi_x, gphi_y = node_gradient(grid, phi1)
    W = setup.node_weights()
    mask = setup.dirichlet_mask()
    cD = setup.dirichlet_values()
    A = sp.diags(W.ravel() / dt) + diffusion_matrix(grid, d11 / phi1, d22 / phi1)
    lu = spla.splu(_with_dirichlet(A, mask))
    extra = 0.0
    if advect is not None:
        extra = -upwind_divergence(grid, advect, state.c) / (W * phi1)

    def rhs_of(ct):
        gx, gy = node_gradient(grid, ct)
        r = (-dphi_dt / phi1 * ct + sig1 / phi1 * setup.rate(ct)
             + (d11 * gphi_x * gx + d22 * gphi_y * gy) / phi1 ** 2 + extra)
        b = W * (state.c / dt + r)
        return np.where(mask, cD, b)

    def solve(b):
        return lu.solve(b.ravel()).reshape(b.shape)

    c, info = _picard(solve, rhs_of, state.c, setup, t1)
    return TransportState(c, phi1, t1, np.array(s1)), info


def step_partial(state: TransportState, s_field, table, dt: float, setup: TransportSetup):
    """One implicit-Euler step with prescribed geometry; returns (state, StepInfo).

    Coefficients are frozen at t + dt, the porosity rate is a backward
    difference and the porosity gradient is centred.
    """
    return _partial_like(state, s_field, table, dt, setup)


def step_advective(state: TransportState, s_field, table, darcy, dt: float, setup: TransportSetup):
    """``step_partial`` with explicit upwind transport by the Darcy velocity."""
    v = darcy.v if hasattr(darcy, "v") else np.asarray(darcy, dtype=float)
    phi_min = float(np.min(table.column("phi", np.asarray(s_field(state.t + dt, *setup.nodes())))))
    cfl = cfl_number(setup.grid, v, phi_min, dt)
    if cfl > CFL_MAX:
        raise StabilityError(f"CFL number {cfl:.3f} exceeds {CFL_MAX} at t={state.t:.6g}; reduce dt")
    return _partial_like(state, s_field, table, dt, setup, advect=v)


def full_coupling_rates(c, phi, sigma, vn_sign: int = 1):
    """Local reaction rates (dc/dt, dphi/dt) of the fully coupled system.

    The quadratic term is the porosity-change term -(dphi/dt) c written out
    with dphi/dt = -vn_sign sigma c.
    """
    dphi = -vn_sign * sigma * c
    dc = (vn_sign * sigma * c ** 2 - sigma * c) / phi
    return dc, dphi


def step_full(state: TransportState, phi_table, dt: float, setup: TransportSetup, vn_sign: int = 1):
    """Operator-split step of the porosity-coupled system; returns (state, StepInfo).

    Stage one solves phi^n (c* - c^n)/dt - div(D(phi^n) grad c*) = 0.  Stage
    two integrates the local system per node with implicit Euler in the
    fluid mass u = phi c and in phi, iterated by Picard on sigma(phi).  For
    vn_sign = +1 the update keeps u + (1 - phi) unchanged node by node.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    grid = setup.grid
    t1 = state.t + dt
    lo, hi = _full_band(phi_table)
    _check_band(state.phi, lo, hi, state.t)
    phi_n = state.phi
    Dn = phi_table.D_hat(phi_n) * setup.diffusion_scale
    W = setup.node_weights()
    mask = setup.dirichlet_mask()
    cD = setup.dirichlet_values()
    A = sp.diags((W * phi_n).ravel() / dt) + diffusion_matrix(grid, Dn[..., 0, 0], Dn[..., 1, 1])
    b = np.where(mask, cD, W * phi_n * state.c / dt)
    c_star = spla.splu(_with_dirichlet(A, mask)).solve(b.ravel()).reshape(b.shape)

    u_star = phi_n * c_star
    phi_k = phi_n
    c_prev = state.c
    for k in range(1, setup.picard_max + 1):
        _check_band(phi_k, lo, hi, t1)
        sig = phi_table.sigma_hat(phi_k)
        c_next = u_star / (phi_k + dt * sig)
        phi_next = phi_n - dt * vn_sign * sig * c_next
        change = max(float(np.max(np.abs(phi_next - phi_k))),
                     float(np.max(np.abs(c_next - c_prev))) / max(1.0, float(np.max(np.abs(c_next)))))
        if change <= setup.picard_tol:
            break
        phi_k, c_prev = phi_next, c_next
    else:
        raise NonlinearityError(
            f"local Picard update did not converge in {setup.picard_max} sweeps at t={t1:.6g} "
            f"(last change {change:.3e}); reduce dt")
    _check_band(phi_next, lo, hi, t1)
    # close the step with one consistent set of rates so u + (1 - phi) is exact
    u_new = u_star - dt * sig * c_next
    c_new = np.where(mask, cD, u_new / phi_next)
    return TransportState(c_new, phi_next, t1), StepInfo(k, change)


def _full_band(phi_table) -> tuple:
    lo, hi = phi_table.phi_range
    d = phi_table.table.delta
    return max(lo, d), min(hi, 1.0 - d)


# --- runs ---

DIAGNOSTIC_COLUMNS = ["t", "mass_fluid", "mass_solid", "mass_total", "phi_min", "phi_max", "picard_iters"]


def diagnostics(state: TransportState, setup: TransportSetup, picard_iters: int, band=None) -> dict:
    W = setup.node_weights()
    fluid = float(np.sum(W * state.phi * state.c))
    solid = float(np.sum(W * (1.0 - state.phi)))
    row = {"t": state.t, "mass_fluid": fluid, "mass_solid": solid, "mass_total": fluid + solid,
           "phi_min": float(state.phi.min()), "phi_max": float(state.phi.max()),
           "picard_iters": int(picard_iters)}
    if band is not None:
        row["band_margin"] = float(min(state.phi.min() - band[0], band[1] - state.phi.max()))
    return row


@dataclass
class RunResult:
    states: list
    diagnostics: list
    horizon: float
    completed: bool
    error: Exception | None = None

    @property
    def final(self) -> TransportState:
        return self.states[-1]

    def max_picard(self) -> int:
        return max((d["picard_iters"] for d in self.diagnostics), default=0)


def initial_state(setup: TransportSetup, c0, mode: CouplingMode, table=None, phi_table=None,
                  phi0=None) -> TransportState:
    """Initial nodal state; porosity from s(0, x) in partial modes, ``phi0`` otherwise."""
    X, Y = setup.nodes()
    c = np.broadcast_to(np.asarray(c0(X, Y) if callable(c0) else c0, dtype=float), X.shape).copy()
    if mode.mode.startswith("partial"):
        s = np.broadcast_to(np.asarray(mode.s_field(0.0, X, Y), dtype=float), X.shape)
        return TransportState(c, table.column("phi", s), 0.0, np.array(s))
    phi = np.broadcast_to(np.asarray(phi0(X, Y) if callable(phi0) else phi0, dtype=float), X.shape)
    return TransportState(c, phi.copy(), 0.0)


def run(mode: CouplingMode, setup: TransportSetup, state0: TransportState, T: float, dt: float,
        table=None, phi_table=None, darcy_grid: MacroGrid | None = None,
        darcy_data: DarcyData = DarcyData(), keep_states: bool = True) -> RunResult:
    """Time loop over [0, T] dispatching on the coupling mode.

    A degeneracy error ends the run early; the result then holds the last
    valid state, the time reached and the error.
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    band = None
    if mode.mode == "full_diffusive":
        band = _full_band(phi_table)
    elif table is not None:
        band = (table.delta, 1.0 - table.delta)
    states = [state0]
    diag = [diagnostics(state0, setup, 0, band)]
    state = state0
    steps = int(np.ceil(T / dt - 1e-9)) if T > 0 else 0
    try:
        for k in range(steps):
            h = min(dt, T - state.t) if k == steps - 1 else dt
            if mode.mode == "partial_diffusive":
                state, info = step_partial(state, mode.s_field, table, h, setup)
            elif mode.mode == "full_diffusive":
                state, info = step_full(state, phi_table, h, setup, mode.vn_sign)
            else:
                grid = darcy_grid or setup.grid
                Xc, Yc = grid.cell_centers()
                s_cells = np.broadcast_to(np.asarray(mode.s_field(state.t, Xc, Yc), dtype=float), Xc.shape)
                flow = solve_darcy(grid, permeability_field(table, s_cells), darcy_data)
                state, info = step_advective(state, mode.s_field, table, flow, h, setup)
            if keep_states:
                states.append(state)
            else:
                states[-1:] = [state]
            diag.append(diagnostics(state, setup, info.picard_iterations, band))
    except DegeneracyError as exc:
        return RunResult(states, diag, state.t, False, exc)
    return RunResult(states, diag, state.t, True)
