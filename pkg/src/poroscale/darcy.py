"""Macroscopic Darcy flow with a cellwise tensor permeability.

Bilinear (Q1) finite elements on a uniform rectangular grid.  Pressure lives
on the nodes, velocity v = -K grad p is reported at cell centres.  Boundary
edges carry either Dirichlet pressure or an inflow flux g = -v.n.  The
viscosity is fixed to one.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import CoercivityError, ConfigError
from .linalg import SolveInfo, pcg

EDGES = ("left", "right", "bottom", "top")
DIRICHLET, FLUX = "dirichlet", "flux"

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def _shape(xi, eta):
    return np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])


def _shape_grad(xi, eta):
    """Reference-coordinate gradients, shape (2, 4)."""
    return np.array([[-(1 - eta), 1 - eta, eta, -eta],
                     [-(1 - xi), -xi, xi, 1 - xi]])


@dataclass(frozen=True)
class MacroGrid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    boundary_tags: dict = field(default_factory=lambda: {"left": FLUX, "right": DIRICHLET,
                                                          "bottom": FLUX, "top": FLUX})

    def __post_init__(self):
        problems = []
        if self.nx < 1 or self.ny < 1:
            problems.append(f"grid needs at least one cell per axis (nx={self.nx}, ny={self.ny})")
        if not (self.lx > 0 and self.ly > 0):
            problems.append(f"domain lengths must be positive (lx={self.lx}, ly={self.ly})")
        tags = dict(self.boundary_tags)
        for e in EDGES:
            tags.setdefault(e, FLUX)
        for e, t in tags.items():
            if e not in EDGES:
                problems.append(f"unknown boundary edge {e!r}")
            elif t not in (DIRICHLET, FLUX):
                problems.append(f"edge {e}: tag must be 'dirichlet' or 'flux', got {t!r}")
        if not any(t == DIRICHLET for t in tags.values()):
            problems.append("at least one edge must carry Dirichlet pressure")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "boundary_tags", tags)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def x_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.lx, self.nx + 1)

    def y_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.ly, self.ny + 1)

    def node_coords(self):
        """Meshgrid (X, Y), each (ny+1, nx+1)."""
        return np.meshgrid(self.x_nodes(), self.y_nodes())

    def cell_centers(self):
        xc = (np.arange(self.nx) + 0.5) * self.hx
        yc = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(xc, yc)

    def edge_nodes(self, edge: str) -> np.ndarray:
        """Flat node indices along an edge, ordered by increasing coordinate."""
        idx = np.arange(self.n_nodes).reshape(self.ny + 1, self.nx + 1)
        return {"left": idx[:, 0], "right": idx[:, -1], "bottom": idx[0, :], "top": idx[-1, :]}[edge]

    def edge_normal(self, edge: str) -> np.ndarray:
        return {"left": np.array([-1.0, 0.0]), "right": np.array([1.0, 0.0]),
                "bottom": np.array([0.0, -1.0]), "top": np.array([0.0, 1.0])}[edge]

    def cell_nodes(self) -> np.ndarray:
        """(ny*nx, 4) flat node indices in local order."""
        j, i = np.meshgrid(np.arange(self.ny), np.arange(self.nx), indexing="ij")
        j, i = j.ravel(), i.ravel()
        w = self.nx + 1
        return np.stack([j * w + i, j * w + i + 1, (j + 1) * w + i + 1, (j + 1) * w + i], axis=1)

    @cached_property
    def _element_blocks(self):
        """Element integrals of d_a N_i d_b N_j (a, b in x, y) and of N_i N_j."""
        hx, hy = self.hx, self.hy
        S = np.zeros((2, 2, 4, 4))
        M = np.zeros((4, 4))
        w = 0.5 * 0.5 * hx * hy
        for xi in _GAUSS:
            for eta in _GAUSS:
                G = _shape_grad(xi, eta) / np.array([[hx], [hy]])
                N = _shape(xi, eta)
                for a in range(2):
                    for b in range(2):
                        S[a, b] += w * np.outer(G[a], G[b])
                M += w * np.outer(N, N)
        return S, M

    def stiffness(self, Kcells: np.ndarray) -> sp.csr_matrix:
        """Assemble int K grad u . grad v for cellwise-constant K (ny, nx, 2, 2)."""
        S, _ = self._element_blocks
        Kc = Kcells.reshape(-1, 2, 2)
        # sum_ab K_ab S_ab, with S_ab[i, j] pairing d_a N_i and d_b N_j
        Ke = np.einsum("cab,abij->cij", Kc, S)
        return self._assemble(Ke)

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        _, M = self._element_blocks
        return self._assemble(np.broadcast_to(M, (self.nx * self.ny, 4, 4)))

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return self.stiffness(np.broadcast_to(np.eye(2), (self.ny, self.nx, 2, 2)))

    def _assemble(self, Ke: np.ndarray) -> sp.csr_matrix:
        cn = self.cell_nodes()
        rows = np.repeat(cn, 4, axis=1).ravel()
        cols = np.tile(cn, (1, 4)).ravel()
        A = sp.coo_matrix((np.ascontiguousarray(Ke).ravel(), (rows, cols)),
                          shape=(self.n_nodes, self.n_nodes))
        return A.tocsr()

    def with_tags(self, **tags) -> MacroGrid:
        merged = dict(self.boundary_tags)
        merged.update(tags)
        return MacroGrid(self.nx, self.ny, self.lx, self.ly, merged)

    def pure_dirichlet(self) -> bool:
        return all(t == DIRICHLET for t in self.boundary_tags.values())


def as_kfield(grid: MacroGrid, K) -> np.ndarray:
    """Broadcast a scalar, a 2x2 matrix or a per-cell array to (ny, nx, 2, 2)."""
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(2)
    if K.shape == (2, 2):
        K = np.broadcast_to(K, (grid.ny, grid.nx, 2, 2))
    if K.shape != (grid.ny, grid.nx, 2, 2):
        raise ValueError(f"permeability field has shape {K.shape}, expected {(grid.ny, grid.nx, 2, 2)}")
    return np.array(K)


def coercivity_bounds(Kcells: np.ndarray, sym_tol: float = 1e-12) -> tuple:
    """(lambda, K_max): smallest and largest eigenvalue over all cells."""
    asym = np.max(np.abs(Kcells - np.swapaxes(Kcells, -1, -2)))
    scale = max(1.0, float(np.max(np.abs(Kcells))))
    if asym > sym_tol * scale:
        raise CoercivityError(f"permeability field is not symmetric (max asymmetry {asym:.3e})")
    eig = np.linalg.eigvalsh(Kcells)
    lam, kmax = float(eig.min()), float(eig.max())
    if not lam > 0.0:
        j, i = np.unravel_index(np.argmin(eig[..., 0]), eig.shape[:2])
        raise CoercivityError(f"permeability not coercive: min eigenvalue {lam:.3e} in cell (i={i}, j={j})")
    return lam, kmax


def _edge_values(data, x, y):
    if callable(data):
        return np.asarray(data(x, y), dtype=float) * np.ones_like(x)
    return float(data) * np.ones_like(x)


@dataclass(frozen=True)
class DarcyData:
    """Source per cell, inflow flux per flux edge and pressure per Dirichlet edge.

    Edge data are constants or callables f(x, y).  Missing flux edges are
    no-flow, missing Dirichlet edges are p = 0.
    """

    source: object = 0.0
    flux: dict = field(default_factory=dict)
    pressure: dict = field(default_factory=dict)


@dataclass
class DarcyField:
    grid: MacroGrid
    p: np.ndarray            # (ny+1, nx+1)
    v: np.ndarray            # (ny, nx, 2) at cell centres
    Kfield: np.ndarray       # (ny, nx, 2, 2)
    coercivity: float
    k_max: float
    info: SolveInfo
    reactions: np.ndarray    # nodal residual of the full system, flat
    source_integral: float
    flux_inflow: float

    @property
    def dirichlet_inflow(self) -> float:
        mask = _dirichlet_mask(self.grid)
        return float(self.reactions[mask].sum())

    def mass_balance(self) -> float:
        """Net boundary inflow plus integrated source; zero up to solver tolerance."""
        return self.flux_inflow + self.dirichlet_inflow + self.source_integral

    def nodal_balance(self) -> np.ndarray:
        """Flux balance on the dual cells of the free nodes."""
        return self.reactions[~_dirichlet_mask(self.grid)]

    def velocity_gauss(self) -> np.ndarray:
        """v at the 2x2 Gauss points of each cell, shape (ny, nx, 4, 2)."""
        return _velocity_at(self.grid, self.p, self.Kfield,
                            [(a, b) for b in _GAUSS for a in _GAUSS])


def _dirichlet_mask(grid: MacroGrid) -> np.ndarray:
    mask = np.zeros(grid.n_nodes, dtype=bool)
    for e in EDGES:
        if grid.boundary_tags[e] == DIRICHLET:
            mask[grid.edge_nodes(e)] = True
    return mask


def _velocity_at(grid: MacroGrid, p: np.ndarray, Kcells: np.ndarray, points) -> np.ndarray:
    pf = p.ravel()[grid.cell_nodes()].reshape(grid.ny, grid.nx, 4)
    out = []
    for xi, eta in points:
        G = _shape_grad(xi, eta) / np.array([[grid.hx], [grid.hy]])
        grad = np.einsum("ak,jik->jia", G, pf)
        out.append(-np.einsum("jiab,jib->jia", Kcells, grad))
    return np.stack(out, axis=2)


def _flux_load(grid: MacroGrid, data: DarcyData) -> tuple:
    F = np.zeros(grid.n_nodes)
    total = 0.0
    X, Y = grid.node_coords()
    for e in EDGES:
        if grid.boundary_tags[e] != FLUX or e not in data.flux:
            continue
        nodes = grid.edge_nodes(e)
        xs, ys = X.ravel()[nodes], Y.ravel()[nodes]
        seg = grid.hy if e in ("left", "right") else grid.hx
        for q in _GAUSS:
            xq = xs[:-1] + q * (xs[1:] - xs[:-1])
            yq = ys[:-1] + q * (ys[1:] - ys[:-1])
            g = _edge_values(data.flux[e], xq, yq) * 0.5 * seg
            np.add.at(F, nodes[:-1], g * (1.0 - q))
            np.add.at(F, nodes[1:], g * q)
            total += float(g.sum())
    return F, total


def _dirichlet_values(grid: MacroGrid, data: DarcyData) -> np.ndarray:
    vals = np.zeros(grid.n_nodes)
    X, Y = grid.node_coords()
    # later edges in EDGES order win at shared corners
    for e in EDGES:
        if grid.boundary_tags[e] != DIRICHLET:
            continue
        nodes = grid.edge_nodes(e)
        vals[nodes] = _edge_values(data.pressure.get(e, 0.0), X.ravel()[nodes], Y.ravel()[nodes])
    return vals


def solve_darcy(grid: MacroGrid, Kfield, data: DarcyData = DarcyData(), tol: float = 1e-12,
                maxiter: int | None = None) -> DarcyField:
    """Q1 pressure solve followed by v = -K grad p at the cell centres.

    The CG tolerance defaults well below 1e-10 so linear-exact data are
    reproduced to 1e-10 in the nodal values.
    """
    Kc = as_kfield(grid, Kfield)
    lam, kmax = coercivity_bounds(Kc)
    A = grid.stiffness(Kc)
    f = np.broadcast_to(np.asarray(data.source, dtype=float), (grid.ny, grid.nx))
    F = np.zeros(grid.n_nodes)
    np.add.at(F, grid.cell_nodes().ravel(),
              np.repeat(f.ravel() * 0.25 * grid.hx * grid.hy, 4))
    Fg, g_total = _flux_load(grid, data)
    F += Fg
    dmask = _dirichlet_mask(grid)
    p = _dirichlet_values(grid, data) * dmask
    free = ~dmask
    A_ff = A[free][:, free]
    b = F[free] - A[free][:, dmask] @ p[dmask]
    diag = A_ff.diagonal()
    if maxiter is None:
        maxiter = 20 * max(50, int(np.sqrt(A_ff.shape[0])) * 20)
    if free.any():
        x, info = pcg(A_ff, b, tol=tol, maxiter=maxiter, M_inv_diag=1.0 / diag)
        p[free] = x
    else:
        info = SolveInfo()
    reactions = A @ p - F
    P = p.reshape(grid.ny + 1, grid.nx + 1)
    v = _velocity_at(grid, P, Kc, [(0.5, 0.5)])[:, :, 0, :]
    return DarcyField(grid, P, v, Kc, lam, kmax, info, reactions,
                      float(f.sum() * grid.hx * grid.hy), g_total)


# --- continuous-dependence experiments ---

@dataclass
class ContinuityReport:
    dp_h1: float
    dv_l2: float
    dv_linf: float
    dK_linf: float
    coercivity: float
    k_max: float

    def ratios(self) -> dict:
        d = self.dK_linf
        if d == 0.0:
            return {"v_l2": 0.0, "p_h1": 0.0, "v_linf_sqrt": 0.0}
        return {"v_l2": self.dv_l2 / d, "p_h1": self.dp_h1 / d, "v_linf_sqrt": self.dv_linf / np.sqrt(d)}


def continuity_experiment(grid: MacroGrid, K1field, K2field, data: DarcyData = DarcyData()) -> ContinuityReport:
    """Solve with two permeability fields and measure the solution differences."""
    s1 = solve_darcy(grid, K1field, data)
    s2 = solve_darcy(grid, K2field, data)
    dp = (s2.p - s1.p).ravel()
    h1 = float(np.sqrt(max(dp @ (grid.mass_matrix @ dp) + dp @ (grid.laplacian @ dp), 0.0)))
    dv_g = s2.velocity_gauss() - s1.velocity_gauss()
    l2 = float(np.sqrt(np.sum(dv_g ** 2) * 0.25 * grid.hx * grid.hy))
    dv_c = s2.v - s1.v
    linf = float(np.max(np.linalg.norm(np.concatenate([dv_g, dv_c[:, :, None, :]], axis=2), axis=-1)))
    dK = s2.Kfield - s1.Kfield
    dK_inf = float(np.max(np.linalg.norm(dK, ord=2, axis=(-2, -1))))
    return ContinuityReport(h1, l2, linf, dK_inf, min(s1.coercivity, s2.coercivity), max(s1.k_max, s2.k_max))


@dataclass
class ContinuitySweep:
    eps: np.ndarray
    reports: list
    l2_ratio_spread: float      # max/min of |dv|_L2 / |dK|_inf
    linf_slope: float           # log-log slope of |dv|_inf against |dK|_inf
    dirichlet_exponent: float | None   # 1 - d/4 for pure-Dirichlet runs, else None


def continuity_sweep(grid: MacroGrid, K1field, perturb: Callable[[float], np.ndarray], eps,
                     data: DarcyData = DarcyData()) -> ContinuitySweep:
    """Run the continuity experiment for K2 = perturb(eps) over several eps."""
    eps = np.asarray(eps, dtype=float)
    reports = [continuity_experiment(grid, K1field, perturb(e), data) for e in eps]
    ratios = np.array([r.ratios()["v_l2"] for r in reports])
    spread = float(ratios.max() / ratios.min()) if np.all(ratios > 0) else float("inf")
    dk = np.array([r.dK_linf for r in reports])
    dv = np.array([r.dv_linf for r in reports])
    if np.all(dk > 0) and np.all(dv > 0):
        slope = float(np.polyfit(np.log(dk), np.log(dv), 1)[0])
    else:
        slope = float("nan")
    return ContinuitySweep(eps, reports, spread, slope, 1.0 - 2 / 4 if grid.pure_dirichlet() else None)


# --- time slices ---

def permeability_field(table, s_cells: np.ndarray) -> np.ndarray:
    """Symmetrised K from a parameter table at per-cell order parameters."""
    if table.K is None:
        raise ValueError("parameter table was built without permeability")
    s_cells = np.asarray(s_cells, dtype=float)
    k11, k22 = table.column("K11", s_cells), table.column("K22", s_cells)
    k12 = 0.5 * (table.column("K12", s_cells) + table.column("K21", s_cells))
    return np.stack([np.stack([k11, k12], -1), np.stack([k12, k22], -1)], -2)


@dataclass
class SliceResult:
    fields: list
    differences: np.ndarray     # |v(t_{k+1}) - v(t_k)|_L2

    @property
    def max_difference(self) -> float:
        return float(self.differences.max()) if len(self.differences) else 0.0


def velocity_l2(grid: MacroGrid, a: DarcyField, b: DarcyField) -> float:
    dv = a.velocity_gauss() - b.velocity_gauss()
    return float(np.sqrt(np.sum(dv ** 2) * 0.25 * grid.hx * grid.hy))


def darcy_time_slices(grid: MacroGrid, Kslices, data: DarcyData = DarcyData(),
                      workers: int = 1) -> SliceResult:
    """Independent solves per slice and consecutive-slice velocity differences."""
    Kslices = list(Kslices)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            fields = list(ex.map(lambda K: solve_darcy(grid, K, data), Kslices))
    else:
        fields = [solve_darcy(grid, K, data) for K in Kslices]
    diffs = np.array([velocity_l2(grid, fields[k + 1], fields[k]) for k in range(len(fields) - 1)])
    return SliceResult(fields, diffs)
