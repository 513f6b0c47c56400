"""Effective-parameter tables along geometry paths.

Tables store porosity, interface length, D and (optionally) K at increasing
order-parameter samples and interpolate each scalar entry with a monotone
(shape-preserving) cubic.  A porosity-indexed view inverts phi(s) by
bisection on that interpolant.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .cells import (DEFAULT_EPS, DEFAULT_ETA, EffectiveTensor, diffusion_tensor, permeability_tensor,
                    solve_diffusion_cell, solve_stokes_cell)
from .diffeo import DiffeoPath
from .errors import DegenerateSampleError, ExtrapolationError, ReparametrizationError
from .evolution import EvolvedPath
from .geometry import LevelSetField, check_valid, porosity, surface_area

DEFAULT_DELTA = 0.05
TABLE_HEADER = ["s", "phi", "sigma", "D11", "D12", "D22", "K11", "K12", "K22"]


@dataclass(frozen=True)
class SolverConfig:
    eps_penal: float = DEFAULT_EPS
    eta_penal: float = DEFAULT_ETA
    tol: float = 1e-10
    stokes_tol: float = 1e-8
    with_K: bool = True
    delta: float = DEFAULT_DELTA


@dataclass(frozen=True)
class EffectiveParams:
    phi: float
    sigma: float
    D: np.ndarray
    K: np.ndarray | None = None
    s: float | None = None
    residuals: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "phi": self.phi,
            "sigma": self.sigma,
            "D": np.asarray(self.D).tolist(),
            "K": None if self.K is None else np.asarray(self.K).tolist(),
            "residuals": dict(self.residuals),
        }


def cell_parameters(phi: LevelSetField, config: SolverConfig = SolverConfig()) -> EffectiveParams:
    """Porosity, interface length, D and optionally K for one geometry."""
    check_valid(phi)
    dsol = solve_diffusion_cell(phi, config.eps_penal, config.tol)
    D = diffusion_tensor(dsol, phi)
    res = {"diffusion": dsol.residual, "diffusion_iterations": list(dsol.iterations)}
    K = None
    if config.with_K:
        ssol = solve_stokes_cell(phi, config.eta_penal, config.stokes_tol)
        K = permeability_tensor(ssol, phi).m
        res.update({"stokes_divergence": ssol.residual, "stokes_iterations": list(ssol.iterations)})
    return EffectiveParams(porosity(phi), surface_area(phi), D.m, K, None, res)


@dataclass(frozen=True, eq=False)
class ParameterTable:
    s: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    D: np.ndarray                 # (m, 2, 2)
    K: np.ndarray | None = None   # (m, 2, 2)
    delta: float = DEFAULT_DELTA
    interp_kind: str = "pchip"

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 1 or len(s) < 2 or np.any(np.diff(s) <= 0):
            raise ValueError("table samples must be strictly increasing in s (at least two)")
        for name in ("s", "phi", "sigma", "D", "K"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))

    def __len__(self) -> int:
        return len(self.s)

    def columns(self) -> dict:
        cols = {"phi": self.phi, "sigma": self.sigma,
                "D11": self.D[:, 0, 0], "D12": self.D[:, 0, 1], "D21": self.D[:, 1, 0],
                "D22": self.D[:, 1, 1]}
        if self.K is not None:
            cols.update({"K11": self.K[:, 0, 0], "K12": self.K[:, 0, 1], "K21": self.K[:, 1, 0],
                         "K22": self.K[:, 1, 1]})
        return cols

    def _interpolants(self) -> dict:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {k: PchipInterpolator(self.s, v, extrapolate=False) for k, v in self.columns().items()}
            object.__setattr__(self, "_cache", cache)
        return cache

    def column(self, name: str, s):
        """Interpolated column; knots are reproduced exactly."""
        s_arr = np.asarray(s, dtype=float)
        self._check_range(s_arr)
        out = np.asarray(self._interpolants()[name](s_arr), dtype=float)
        knot = np.searchsorted(self.s, s_arr)
        knot = np.clip(knot, 0, len(self.s) - 1)
        exact = self.s[knot] == s_arr
        if np.any(exact):
            out = np.where(exact, self.columns()[name][knot], out)
        return out

    def _check_range(self, s_arr):
        if np.any(s_arr < self.s[0]) or np.any(s_arr > self.s[-1]) or np.any(np.isnan(s_arr)):
            raise ExtrapolationError(
                f"order parameter outside the sampled range [{self.s[0]:.6g}, {self.s[-1]:.6g}]")

    def check_band(self) -> None:
        d = self.delta
        for k in range(len(self.s)):
            eig = np.linalg.eigvalsh(0.5 * (self.D[k] + self.D[k].T)).min()
            bad = []
            if not (d <= self.phi[k] <= 1.0 - d):
                bad.append(f"phi={self.phi[k]:.6g}")
            if self.sigma[k] < d:
                bad.append(f"sigma={self.sigma[k]:.6g}")
            if eig < d:
                bad.append(f"min eig D={eig:.6g}")
            if bad:
                raise DegenerateSampleError(
                    f"sample {k} (s={self.s[k]:.6g}) leaves the non-degeneracy band delta={d}: "
                    + ", ".join(bad), index=k)

    def phi_monotone(self) -> int:
        d = np.diff(self.phi)
        if np.all(d > 0):
            return 1
        if np.all(d < 0):
            return -1
        return 0


def interpolate(table: ParameterTable, s: float) -> EffectiveParams:
    """Monotone-cubic interpolation of every entry; matrices are symmetrised."""
    s = float(s)
    phi = float(table.column("phi", s))
    sigma = float(table.column("sigma", s))
    D = np.array([[table.column("D11", s), table.column("D12", s)],
                  [table.column("D21", s), table.column("D22", s)]], dtype=float)
    D = 0.5 * (D + D.T)
    K = None
    if table.K is not None:
        K = np.array([[table.column("K11", s), table.column("K12", s)],
                      [table.column("K21", s), table.column("K22", s)]], dtype=float)
        K = 0.5 * (K + K.T)
    return EffectiveParams(phi, sigma, D, K, s)


def build_table(path, phi0: LevelSetField | None = None, samples: int = 8,
                config: SolverConfig = SolverConfig(), s_values=None) -> ParameterTable:
    """Solve the cell problems at equally spaced samples of a geometry path.

    ``path`` is an EvolvedPath, or a DiffeoPath together with its origin
    geometry ``phi0``.
    """
    if s_values is None:
        s_values = np.linspace(path.s_min, path.s_max, samples)
    s_values = np.asarray(s_values, dtype=float)
    phis, sigmas, Ds, Ks = [], [], [], []
    for k, s in enumerate(s_values):
        if isinstance(path, EvolvedPath):
            geom = path.field_at(s)
        elif isinstance(path, DiffeoPath):
            if phi0 is None:
                raise ValueError("a DiffeoPath table needs the origin geometry phi0")
            geom = path.transport(s, phi0)
        else:
            raise TypeError(f"unsupported path type {type(path).__name__}")
        p = cell_parameters(geom, config)
        for name, tensor in (("D", p.D), ("K", p.K)):
            if tensor is None:
                continue
            t = EffectiveTensor(tensor)
            if not (t.is_symmetric() and t.is_psd()):
                raise DegenerateSampleError(f"sample {k} (s={s:.6g}): {name} is not symmetric PSD",
                                            index=k)
        phis.append(p.phi)
        sigmas.append(p.sigma)
        Ds.append(p.D)
        Ks.append(p.K)
    K = np.array(Ks) if config.with_K else None
    table = ParameterTable(s_values, np.array(phis), np.array(sigmas), np.array(Ds), K, config.delta)
    table.check_band()
    return table


@dataclass(frozen=True, eq=False)
class PhiTable:
    """Porosity-indexed view of a ParameterTable."""

    table: ParameterTable

    def __post_init__(self):
        if self.table.phi_monotone() == 0:
            raise ReparametrizationError("porosity samples are not strictly monotone")

    @property
    def phi(self) -> np.ndarray:
        return self.table.phi

    @property
    def phi_range(self) -> tuple:
        return float(self.phi.min()), float(self.phi.max())

    def s_of_phi(self, phi, iterations: int = 100):
        """Invert the porosity interpolant by vectorised bisection."""
        phi = np.asarray(phi, dtype=float)
        lo_phi, hi_phi = self.phi_range
        if np.any(phi < lo_phi) or np.any(phi > hi_phi) or np.any(np.isnan(phi)):
            raise ExtrapolationError(f"porosity outside the tabulated range [{lo_phi:.6g}, {hi_phi:.6g}]")
        t = self.table
        sign = t.phi_monotone()
        lo = np.full(phi.shape, t.s[0])
        hi = np.full(phi.shape, t.s[-1])
        interp = t._interpolants()["phi"]
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = sign * (interp(mid) - phi) < 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-15 * max(1.0, abs(t.s[-1]))):
                break
        s = 0.5 * (lo + hi)
        # snap to knots so both tables agree exactly at the samples
        k = np.searchsorted(np.sort(t.phi), phi)
        order = np.argsort(t.phi)
        k = np.clip(k, 0, len(t.phi) - 1)
        hit = np.sort(t.phi)[k] == phi
        return np.where(hit, t.s[order][k], s)

    def column(self, name: str, phi):
        return self.table.column(name, self.s_of_phi(phi))

    def sigma_hat(self, phi):
        return self.column("sigma", phi)

    def D_hat(self, phi) -> np.ndarray:
        """Symmetrised D at the given porosities, shape phi.shape + (2, 2)."""
        s = self.s_of_phi(phi)
        t = self.table
        d11, d22 = t.column("D11", s), t.column("D22", s)
        d12 = 0.5 * (t.column("D12", s) + t.column("D21", s))
        return np.stack([np.stack([d11, d12], -1), np.stack([d12, d22], -1)], -2)

    def at(self, phi: float) -> EffectiveParams:
        p = interpolate(self.table, float(self.s_of_phi(phi)))
        return EffectiveParams(float(phi), p.sigma, p.D, p.K, p.s)


def reparametrize_by_phi(table: ParameterTable) -> PhiTable:
    return PhiTable(table)


# --- smoothness diagnostics ---

@dataclass
class SmoothnessEntry:
    name: str
    center: float
    steps: np.ndarray
    derivatives: np.ndarray
    order: float
    richardson: float
    noise_floor: float
    noise_limited: bool


def _symmetric_pairs(m: int):
    """Index pairs symmetric about the table centre, innermost first."""
    if m % 2 == 1:
        c = m // 2
        return [(c - k, c + k) for k in range(1, c + 1)]
    c = m // 2
    return [(c - 1 - k, c + k) for k in range(c)]


def _order_from_three(hs, ds) -> float:
    """Solve (h3^p - h2^p) / (h2^p - h1^p) = (d3 - d2) / (d2 - d1) for p."""
    h1, h2, h3 = hs
    r = (ds[2] - ds[1]) / (ds[1] - ds[0])
    if not np.isfinite(r) or r <= 0:
        return float("nan")
    g = lambda p: (h3 ** p - h2 ** p) / (h2 ** p - h1 ** p) - r
    try:
        return float(brentq(g, 0.05, 8.0))
    except ValueError:
        return float("nan")


def smoothness_check(table: ParameterTable, names=None, noise: float = 1e-8) -> dict:
    """Central differences at three step sizes around the table centre.

    ``noise`` is the absolute noise level of the tabulated values; the
    derivative noise floor at step h is noise / h.
    """
    if len(table) < 6:
        raise ValueError("smoothness check needs at least 6 samples")
    if np.any(np.abs(np.diff(np.diff(table.s))) > 1e-9 * np.ptp(table.s)):
        raise ValueError("smoothness check needs equally spaced samples")
    cols = table.columns()
    if names is None:
        names = [k for k in cols if k not in ("D21", "K21")]
    pairs = _symmetric_pairs(len(table))[:3]
    s = table.s
    center = 0.5 * (s[pairs[0][0]] + s[pairs[0][1]])
    report = {}
    for name in names:
        y = cols[name]
        hs = np.array([0.5 * (s[b] - s[a]) for a, b in pairs])
        ds = np.array([(y[b] - y[a]) / (s[b] - s[a]) for a, b in pairs])
        floor = noise / hs[0]
        spread = np.max(np.abs(np.diff(ds)))
        limited = spread <= 2.0 * floor
        order = float("nan") if limited else _order_from_three(hs, ds)
        if np.isfinite(order):
            C = (ds[1] - ds[0]) / (hs[1] ** order - hs[0] ** order)
            rich = float(ds[0] - C * hs[0] ** order)
        else:
            rich = float(ds[0])
        report[name] = SmoothnessEntry(name, float(center), hs, ds, order, rich, float(floor), bool(limited))
    return report


# --- CSV ---

def _row_values(table: ParameterTable, k: int) -> list:
    D = table.D[k]
    vals = [table.s[k], table.phi[k], table.sigma[k], D[0, 0], 0.5 * (D[0, 1] + D[1, 0]), D[1, 1]]
    if table.K is not None:
        K = table.K[k]
        vals += [K[0, 0], 0.5 * (K[0, 1] + K[1, 0]), K[1, 1]]
    else:
        vals += [float("nan")] * 3
    return vals


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_table_csv(table: ParameterTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for k in range(len(table)):
            w.writerow([_fmt(v) for v in _row_values(table, k)])


def write_phi_table_csv(ptable: PhiTable, path) -> None:
    """Porosity-indexed variant: rows sorted by increasing phi, phi column first."""
    t = ptable.table
    order = np.argsort(t.phi)
    header = ["phi", "s"] + TABLE_HEADER[2:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in order:
            v = _row_values(t, k)
            w.writerow([_fmt(x) for x in [v[1], v[0]] + v[2:]])


def read_table_csv(path, delta: float = DEFAULT_DELTA) -> ParameterTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    s = np.array([float(r["s"]) for r in rows])
    phi = np.array([float(r["phi"]) for r in rows])
    sigma = np.array([float(r["sigma"]) for r in rows])
    D = np.array([[[float(r["D11"]), float(r["D12"])], [float(r["D12"]), float(r["D22"])]] for r in rows])
    K = np.array([[[float(r["K11"]), float(r["K12"])], [float(r["K12"]), float(r["K22"])]] for r in rows])
    if np.all(np.isnan(K)):
        K = None
    return ParameterTable(s, phi, sigma, D, K, delta)
