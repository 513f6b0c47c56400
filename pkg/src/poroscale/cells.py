"""Periodic diffusion and Stokes cell problems on a fixed Cartesian grid.

Diffusion: cell-centred finite volumes for div(kappa grad(zeta_j + y_j)) = 0
with kappa = 1 in fluid and ``eps_penal`` in solid (cut cells blend by their
fluid area fraction), harmonic face means, Jacobi-preconditioned CG.

Stokes: marker-and-cell staggering, Brinkman drag ``1/eta`` on solid faces.
Fluid faces next to the solid use a sub-grid wall distance on the link and a
matching control-volume weight, which keeps the operator symmetric while
placing the no-slip wall on the zero level set.  The saddle system is solved
by an augmented-Lagrangian Uzawa iteration with one sparse factorisation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateGeometryError, NoSolutionError, SolverFailureError
from .geometry import LevelSetField, cell_fluid_fractions
from .linalg import pcg

DEFAULT_EPS = 1e-6
DEFAULT_ETA = 1e-6
WALL_FRACTION_MIN = 0.05


@dataclass(frozen=True)
class EffectiveTensor:
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.array(self.m, dtype=float).reshape(2, 2))

    def asymmetry(self) -> float:
        scale = abs(self.m[0, 0]) + abs(self.m[1, 1])
        return abs(self.m[0, 1] - self.m[1, 0]) / scale if scale > 0 else 0.0

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.m + self.m.T))

    def is_symmetric(self, rtol: float = 1e-6) -> bool:
        return self.asymmetry() <= rtol

    def is_psd(self, atol: float = 1e-10) -> bool:
        return bool(self.eigenvalues().min() >= -atol)

    def tolist(self):
        return self.m.tolist()


# --- shared stencils ---

def _periodic_forward_difference(n: int) -> sp.csr_matrix:
    """(x[i+1] - x[i]) with wrap-around."""
    e = np.ones(n)
    T = sp.diags([-e, e[:-1]], [0, 1], format="lil")
    T[n - 1, 0] = 1.0
    return T.tocsr()


def _link_matrix(wx: np.ndarray, wy: np.ndarray) -> sp.csr_matrix:
    """Periodic graph Laplacian (positive semidefinite) with link weights to the +x and +y neighbours."""
    n = wx.shape[0]
    idx = np.arange(n * n).reshape(n, n)
    ex, ny = np.roll(idx, -1, axis=1), np.roll(idx, -1, axis=0)
    rows = np.concatenate([idx.ravel(), ex.ravel(), idx.ravel(), ny.ravel()])
    cols = np.concatenate([ex.ravel(), idx.ravel(), ny.ravel(), idx.ravel()])
    vals = -np.concatenate([wx.ravel(), wx.ravel(), wy.ravel(), wy.ravel()])
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n))
    return (W - sp.diags(np.asarray(W.sum(axis=1)).ravel())).tocsr()


# --- diffusion ---

@dataclass(frozen=True, eq=False)
class DiffusionCellSolution:
    zeta: np.ndarray              # (2, n, n) cell-centred correctors
    residual: float
    eps_penal: float
    iterations: tuple = ()
    history: tuple = ()
    kappa_faces: tuple = ()       # (east, north) face coefficients, each (n, n)
    fluid_fraction: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.zeta.shape[-1]

    def zeta_nodes(self) -> np.ndarray:
        """Correctors averaged to the (n+1)^2 periodic node lattice."""
        z = self.zeta
        # node (j, i) is the corner shared by cells (j-1..j, i-1..i)
        avg = 0.25 * (z + np.roll(z, 1, -1) + np.roll(z, 1, -2) + np.roll(np.roll(z, 1, -1), 1, -2))
        idx = list(range(self.n)) + [0]
        return avg[:, idx][:, :, idx]

    def fluid_mean(self) -> np.ndarray:
        th = self.fluid_fraction
        return np.array([np.sum(th * z) / np.sum(th) for z in self.zeta])


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def solve_diffusion_cell(phi: LevelSetField, eps_penal: float = DEFAULT_EPS, tol: float = 1e-10,
                         maxiter: int | None = None) -> DiffusionCellSolution:
    """Correctors zeta_1, zeta_2 of the penalised periodic diffusion cell problem."""
    if not (0.0 < eps_penal < 1.0):
        raise ValueError("eps_penal must lie in (0, 1)")
    n, h = phi.n, phi.h
    theta = cell_fluid_fractions(phi)
    if not np.any(theta > 0.0):
        raise DegenerateGeometryError("all-solid cell: the diffusion cell problem is degenerate")
    kappa = theta + (1.0 - theta) * eps_penal
    ke = _harmonic(kappa, np.roll(kappa, -1, axis=1))
    kn = _harmonic(kappa, np.roll(kappa, -1, axis=0))
    A = _link_matrix(ke, kn)
    diag = A.diagonal()
    if maxiter is None:
        maxiter = 20 * n * n
    zetas, iters, hist, res = [], [], [], []
    for axis, kf in ((1, ke), (0, kn)):
        b = h * (kf - np.roll(kf, 1, axis=axis)).ravel()
        try:
            x, info = pcg(A, b, tol=tol, maxiter=maxiter, M_inv_diag=1.0 / diag,
                          project_constants=True)
        except SolverFailureError as exc:
            raise SolverFailureError(f"diffusion cell problem: {exc}", exc.residual_history) from None
        z = x.reshape(n, n)
        z = z - np.sum(theta * z) / np.sum(theta)
        zetas.append(z)
        iters.append(info.iterations)
        hist.append(tuple(info.history))
        res.append(info.residual)
    return DiffusionCellSolution(np.array(zetas), max(res), eps_penal, tuple(iters), tuple(hist),
                                 (ke, kn), theta)


def diffusion_tensor(sol: DiffusionCellSolution, phi: LevelSetField | None = None) -> EffectiveTensor:
    """D_ij as the cell average of the normal flux kappa (e_j + grad zeta_j) . e_i.

    Each face flux combines the face coefficient with the one-sided difference
    of zeta_j, so fluid faces carry full weight and solid faces only eps.
    """
    ke, kn = sol.kappa_faces
    n = sol.n
    h = 1.0 / n
    D = np.zeros((2, 2))
    for j, z in enumerate(sol.zeta):
        gx = (np.roll(z, -1, axis=1) - z) / h
        gy = (np.roll(z, -1, axis=0) - z) / h
        D[0, j] = h * h * np.sum(ke * (gx + (j == 0)))
        D[1, j] = h * h * np.sum(kn * (gy + (j == 1)))
    return EffectiveTensor(D)


# --- Stokes ---

def _wall_links(ph: np.ndarray, amin: float = WALL_FRACTION_MIN):
    """Link weights and control-volume fractions for a staggered velocity grid.

    ``ph`` holds level-set values at the velocity points.  A link from a
    fluid point to a solid one gets weight 1/alpha, with alpha*h the linear
    distance to the zero level set; the fluid point's control volume shrinks
    to the product over axes of (alpha_minus + alpha_plus)/2.
    """
    fluid = ph < 0.0
    vol = np.ones_like(ph)
    weights = []
    for axis in (1, 0):
        arms = {}
        for shift in (-1, 1):
            nb = np.roll(ph, shift, axis=axis)
            cut = fluid & (nb >= 0.0)
            denom = np.where(cut, nb - ph, 1.0)
            arms[shift] = np.maximum(np.where(cut, -ph / denom, 1.0), amin)
        # roll by -1 brings the +axis neighbour; its arm fraction is arms[-1]
        vol *= np.where(fluid, 0.5 * (arms[-1] + arms[1]), 1.0)
        w = np.where(fluid & (np.roll(ph, -1, axis=axis) >= 0.0), 1.0 / arms[-1], 1.0)
        back = np.roll(arms[1], -1, axis=axis)
        w = np.where(~fluid & np.roll(fluid, -1, axis=axis), 1.0 / back, w)
        weights.append(w)
    return weights[0], weights[1], vol


def face_levelsets(phi: LevelSetField):
    """Level-set values at x-face centres and y-face centres, each (n, n)."""
    v = phi.values
    return 0.5 * (v[:-1, :-1] + v[1:, :-1]), 0.5 * (v[:-1, :-1] + v[:-1, 1:])


@dataclass(frozen=True, eq=False)
class StokesCellSolution:
    omega: np.ndarray     # (2, 2, n, n): omega[j, i] = i-th velocity component for forcing e_j
    pi: np.ndarray        # (2, n, n)
    residual: float       # max |div| over the grid at exit
    eta_penal: float
    iterations: tuple = ()
    momentum_residual: float = 0.0
    volume: np.ndarray = field(default=None)       # (2, n, n) control-volume fractions
    link_weights: tuple = ()                        # ((wx_u, wy_u), (wx_v, wy_v))
    face_phi: np.ndarray = field(default=None)      # (2, n, n)
    fluid_fraction: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.omega.shape[-1]

    def divergence(self, j: int) -> np.ndarray:
        h = 1.0 / self.n
        fu = self.volume[0] * self.omega[j, 0]
        fv = self.volume[1] * self.omega[j, 1]
        return (np.roll(fu, -1, axis=1) - fu) / h + (np.roll(fv, -1, axis=0) - fv) / h

    def fluid_cells(self) -> np.ndarray:
        return self.fluid_fraction >= 0.5

    def solid_velocity_max(self, depth_cells: float = 2.0) -> float:
        """Max |omega| over faces at least ``depth_cells`` grid steps inside the solid."""
        deep = self.face_phi >= depth_cells / self.n
        mags = [np.abs(self.omega[j][deep]) for j in range(2)]
        return float(max((m.max() if m.size else 0.0) for m in mags))


def solve_stokes_cell(phi: LevelSetField, eta_penal: float = DEFAULT_ETA, tol: float = 1e-8,
                      gamma: float | None = None, maxiter: int = 500) -> StokesCellSolution:
    """Velocity/pressure pairs (omega_j, pi_j) of the penalised periodic Stokes cell problem.

    ``tol`` bounds the max-norm divergence at exit.  ``gamma`` is the
    augmentation and Uzawa step, by default 1e-2/eta.
    """
    if not (0.0 < eta_penal < 1.0):
        raise ValueError("eta_penal must lie in (0, 1)")
    n, h = phi.n, phi.h
    phu, phv = face_levelsets(phi)
    solid_u, solid_v = phu >= 0.0, phv >= 0.0
    if not (solid_u.any() or solid_v.any()):
        raise NoSolutionError("periodic Stokes cell problem with body force has no solution without solid")
    if gamma is None:
        gamma = 1e-2 / eta_penal
    wxu, wyu, vol_u = _wall_links(phu)
    wxv, wyv, vol_v = _wall_links(phv)
    Lu = _link_matrix(wxu, wyu) / h ** 2
    Lv = _link_matrix(wxv, wyv) / h ** 2
    A = sp.block_diag([Lu + sp.diags(solid_u.ravel() / eta_penal),
                       Lv + sp.diags(solid_v.ravel() / eta_penal)]).tocsr()
    vol = np.concatenate([vol_u.ravel(), vol_v.ravel()])
    I = sp.identity(n)
    F = _periodic_forward_difference(n) / h
    div = sp.hstack([sp.kron(I, F), sp.kron(F, I)]).tocsr() @ sp.diags(vol)
    grad = -div.T.tocsr()              # volume-weighted pressure gradient
    lu = spla.splu((A - gamma * (grad @ div)).tocsc())

    N = n * n
    omegas, pis, iters = [], [], []
    res_div, res_mom = 0.0, 0.0
    for j in range(2):
        f = np.zeros(2 * N)
        f[j * N:(j + 1) * N] = 1.0
        f *= vol
        p = np.zeros(N)
        hist = []
        for k in range(1, maxiter + 1):
            u = lu.solve(f - grad @ p)
            d = div @ u
            dmax = float(np.abs(d).max())
            hist.append(dmax)
            if dmax <= tol:
                break
            p = p - gamma * d
        else:
            raise SolverFailureError(
                f"Uzawa iteration did not reach divergence {tol:.1e} in {maxiter} steps", hist)
        theta = cell_fluid_fractions(phi).ravel()
        p = p - np.sum(theta * p) / np.sum(theta)
        r = A @ u + grad @ p - f
        res_mom = max(res_mom, float(np.linalg.norm(r) / np.linalg.norm(f)))
        res_div = max(res_div, dmax)
        omegas.append(u.reshape(2, n, n))
        pis.append(p.reshape(n, n))
        iters.append(k)
    return StokesCellSolution(np.array(omegas), np.array(pis), res_div, eta_penal, tuple(iters),
                              res_mom, np.array([vol_u, vol_v]), ((wxu, wyu), (wxv, wyv)),
                              np.array([phu, phv]), cell_fluid_fractions(phi))


def permeability_tensor(sol: StokesCellSolution, phi: LevelSetField | None = None) -> EffectiveTensor:
    """K_ij = integral of the i-th component of omega_j, control-volume weighted."""
    h = 1.0 / sol.n
    K = np.array([[h * h * np.sum(sol.volume[i] * sol.omega[j, i]) for j in range(2)]
                  for i in range(2)])
    return EffectiveTensor(K)


def dirichlet_energy(sol: StokesCellSolution, j: int) -> float:
    """Discrete integral of |grad omega_j|^2, summed link by link."""
    total = 0.0
    for comp in range(2):
        u = sol.omega[j, comp]
        wx, wy = sol.link_weights[comp]
        total += np.sum(wx * (np.roll(u, -1, axis=1) - u) ** 2)
        total += np.sum(wy * (np.roll(u, -1, axis=0) - u) ** 2)
    return float(total)


def penalty_energy(sol: StokesCellSolution, j: int) -> float:
    h2 = 1.0 / sol.n ** 2
    solid = sol.face_phi >= 0.0
    return float(h2 * np.sum(sol.omega[j][solid] ** 2) / sol.eta_penal)
