"""Level-set evolution of unit-cell geometries along characteristics.

The level-set equation dPhi/dt + v_n |grad Phi| = 0 is integrated with the
characteristic system

    x' = v_n(x) p / |p|,   p' = -grad v_n(x) |p|,   z' = 0,

launched from grid nodes in a narrow band and from the interface vertices.
Positive v_n moves the interface into the solid (dissolution): the default
normal is grad Phi / |grad Phi|, which points from fluid into solid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree

from .diffeo import smoothstep5, smoothstep5_prime
from .errors import FoldError, InvalidGeometryError, PathValidityError, ValidityHorizonError
from .geometry import (InterfacePolyline, LevelSetField, check_valid, extract_interface,
                       porosity, surface_area)

NORMAL_CONVENTIONS = ("fluid", "solid")


def levelset_spline(phi: LevelSetField) -> RectBivariateSpline:
    x = phi.grid.nodes_1d()
    return RectBivariateSpline(x, x, phi.values.T, kx=3, ky=3)


@dataclass(frozen=True, eq=False)
class SpeedField:
    """Normal speed amplitude * vmod(y), cut off smoothly outside a band and near the cell boundary.

    ``vmod`` optionally returns (value, gradient) for points of shape (m, 2).
    ``band_halfwidth`` is measured in values of the reference level set; None
    disables the band cutoff.
    """

    reference: LevelSetField
    amplitude: float = 1.0
    band_halfwidth: float | None = None
    vmod: Callable | None = None
    _spline: RectBivariateSpline = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", levelset_spline(self.reference))

    @property
    def transition(self) -> float:
        return 2.0 * self.reference.h

    @classmethod
    def uniform(cls, phi0: LevelSetField, amplitude: float, sweep: float = 0.0) -> SpeedField:
        """Uniform speed on a band wide enough to cover a sweep of the given distance."""
        return cls(phi0, amplitude, abs(sweep) + 6.0 * phi0.h + 2.0 * phi0.h)

    def _band(self, x):
        if self.band_halfwidth is None:
            return np.ones(len(x)), np.zeros((len(x), 2))
        z = self._spline.ev(x[:, 0], x[:, 1])
        gz = np.stack([self._spline.ev(x[:, 0], x[:, 1], dx=1),
                       self._spline.ev(x[:, 0], x[:, 1], dy=1)], axis=-1)
        t = (self.band_halfwidth - np.abs(z)) / self.transition
        c = smoothstep5(t)
        dc = -smoothstep5_prime(t) * np.sign(z) / self.transition
        return c, dc[:, None] * gz

    def _margin(self, x):
        edge = 0.5 - self.reference.margin
        parts, grads = [], []
        for k in range(2):
            t = (edge - np.abs(x[:, k])) / self.transition
            parts.append(smoothstep5(t))
            grads.append(-smoothstep5_prime(t) * np.sign(x[:, k]) / self.transition)
        c = parts[0] * parts[1]
        g = np.stack([grads[0] * parts[1], parts[0] * grads[1]], axis=-1)
        return c, g

    def value_and_gradient(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.amplitude == 0.0:
            return np.zeros(len(x)), np.zeros((len(x), 2))
        cb, gb = self._band(x)
        cm, gm = self._margin(x)
        if self.vmod is None:
            m, gmod = np.ones(len(x)), np.zeros((len(x), 2))
        else:
            m, gmod = self.vmod(x)
        v = self.amplitude * m * cb * cm
        g = self.amplitude * (gmod * (cb * cm)[:, None] + (m * cm)[:, None] * gb
                              + (m * cb)[:, None] * gm)
        return v, g

    def __call__(self, x):
        return self.value_and_gradient(x)[0]

    def max_speed(self) -> float:
        pts = self.reference.grid.nodes().reshape(-1, 2)
        return float(np.max(np.abs(self(pts))))


@dataclass
class CharacteristicState:
    x: np.ndarray   # (m, 2)
    p: np.ndarray   # (m, 2)
    z: np.ndarray   # (m,)

    def copy(self) -> CharacteristicState:
        return CharacteristicState(self.x.copy(), self.p.copy(), self.z.copy())


def _rhs(x, p, speed: SpeedField):
    v, gv = speed.value_and_gradient(x)
    pn = np.linalg.norm(p, axis=1)
    safe = np.where(pn > 0, pn, 1.0)
    dx = (v / safe)[:, None] * p
    dp = -gv * pn[:, None]
    return dx, dp


def rk4_step(state: CharacteristicState, speed: SpeedField, dt: float) -> CharacteristicState:
    """One classical Runge-Kutta step of the characteristic system (z is carried unchanged)."""
    x, p = state.x, state.p
    k1x, k1p = _rhs(x, p, speed)
    k2x, k2p = _rhs(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p, speed)
    k3x, k3p = _rhs(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p, speed)
    k4x, k4p = _rhs(x + dt * k3x, p + dt * k3p, speed)
    return CharacteristicState(x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
                               p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p),
                               state.z.copy())


def integrate_characteristics(state: CharacteristicState, speed: SpeedField, dt: float,
                              steps: int) -> list[CharacteristicState]:
    out = [state.copy()]
    for _ in range(steps):
        out.append(rk4_step(out[-1], speed, dt))
    return out


def launch_state(phi0: LevelSetField, points) -> CharacteristicState:
    """Characteristic initial data x = y, p = grad Phi0(y), z = Phi0(y)."""
    spl = levelset_spline(phi0)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    z = spl.ev(pts[:, 0], pts[:, 1])
    p = np.stack([spl.ev(pts[:, 0], pts[:, 1], dx=1), spl.ev(pts[:, 0], pts[:, 1], dy=1)], axis=-1)
    return CharacteristicState(pts.copy(), p, z)


def band_nodes(phi0: LevelSetField, halfwidth_cells: float = 6.0):
    """Boolean node mask of the launch band |Phi0| <= 6h with |grad Phi0| >= 0.5."""
    spl = levelset_spline(phi0)
    P = phi0.grid.nodes()
    gx = spl.ev(P[..., 0].ravel(), P[..., 1].ravel(), dx=1).reshape(P.shape[:2])
    gy = spl.ev(P[..., 0].ravel(), P[..., 1].ravel(), dy=1).reshape(P.shape[:2])
    return (np.abs(phi0.values) <= halfwidth_cells * phi0.h) & (np.hypot(gx, gy) >= 0.5)


# --- curvature and reconstruction ---

def _resample_closed(points: np.ndarray, spacing: float) -> np.ndarray:
    closed = np.vstack([points, points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    m = max(int(np.ceil(total / spacing)), 6)
    t = np.linspace(0.0, total, m, endpoint=False)
    return np.stack([np.interp(t, s, closed[:, 0]), np.interp(t, s, closed[:, 1])], axis=-1)


def polyline_curvature(pl: InterfacePolyline, spacing: float) -> np.ndarray:
    """Three-point circumscribed-circle curvature on a resampled closed polyline."""
    q = _resample_closed(pl.points, spacing)
    a, b, c = np.roll(q, 1, axis=0), q, np.roll(q, -1, axis=0)
    ab, bc, ca = (np.linalg.norm(b - a, axis=1), np.linalg.norm(c - b, axis=1),
                  np.linalg.norm(a - c, axis=1))
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    return 2.0 * cross / (ab * bc * ca)


def tubular_radius(phi: LevelSetField) -> float:
    """Validity radius 1/max|curvature| of the interface (inf for an empty or straight interface)."""
    lines = extract_interface(phi)
    kmax = 0.0
    for pl in lines:
        kmax = max(kmax, float(np.max(np.abs(polyline_curvature(pl, 2.0 * phi.h)))))
    return np.inf if kmax == 0.0 else 1.0 / kmax


def _segment_distance_brute(points: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 1024):
    """Min distance from each point to a set of segments [a_k, b_k], all pairs."""
    d = b - a
    dd = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        P = points[start:start + chunk, None, :]
        t = np.clip(np.einsum("pkj,kj->pk", P - a[None], d) / dd, 0.0, 1.0)
        diff = P - (a[None] + t[..., None] * d[None])
        out[start:start + chunk] = np.sqrt(np.min(np.einsum("pkj,pkj->pk", diff, diff), axis=1))
    return out


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Exact min point-to-segment distance, pruned by a k-d tree on segment midpoints.

    A point whose k-th nearest midpoint is farther than the best candidate
    distance plus half the longest segment cannot have a closer segment
    outside the candidate set.  Undecided points retry with a larger k and
    finally fall back to all pairs.
    """
    d = b - a
    half = 0.5 * float(np.max(np.linalg.norm(d, axis=1)))
    tree = cKDTree(0.5 * (a + b))
    best = np.empty(len(points))
    todo = np.arange(len(points))
    for k in (12, 64, 256):
        if k >= len(a) or todo.size == 0:
            break
        P = points[todo]
        mid_dist, idx = tree.query(P, k=k)
        A, Dv = a[idx], d[idx]
        dd = np.maximum(np.einsum("pkj,pkj->pk", Dv, Dv), 1e-300)
        t = np.clip(np.einsum("pkj,pkj->pk", P[:, None, :] - A, Dv) / dd, 0.0, 1.0)
        diff = P[:, None, :] - (A + t[..., None] * Dv)
        cand = np.sqrt(np.min(np.einsum("pkj,pkj->pk", diff, diff), axis=1))
        sure = mid_dist[:, -1] >= cand + half
        best[todo[sure]] = cand[sure]
        todo = todo[~sure]
    if todo.size:
        best[todo] = _segment_distance_brute(points[todo], a, b)
    return best


def _winding_rows(grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Winding numbers at all grid nodes, one node row at a time.

    Only segments straddling a row's y-coordinate can contribute crossings.
    """
    x = grid.nodes_1d()
    n1 = len(x)
    out = np.zeros((n1, n1), dtype=int)
    ay, by = a[:, 1], b[:, 1]
    for j, y in enumerate(x):
        up = (ay <= y) & (by > y)
        down = (ay > y) & (by <= y)
        sel = up | down
        if not np.any(sel):
            continue
        sa, sb, s_up = a[sel], b[sel], up[sel]
        # x-coordinate where each straddling segment crosses the row
        t = (y - sa[:, 1]) / (sb[:, 1] - sa[:, 1])
        xc = sa[:, 0] + t * (sb[:, 0] - sa[:, 0])
        right = xc[None, :] > x[:, None]
        out[j] = np.sum(np.where(s_up[None, :], right, 0), axis=1) - np.sum(
            np.where(~s_up[None, :], right, 0), axis=1)
    return out


def signed_distance_to_polylines(grid, lines: list[np.ndarray], margin: float) -> LevelSetField:
    """Signed distance to closed directed loops, positive where the winding number is positive (solid)."""
    P = grid.nodes().reshape(-1, 2)
    if not lines:
        raise InvalidGeometryError("cannot reconstruct a field without an interface")
    a = np.concatenate(lines)
    b = np.concatenate([np.roll(q, -1, axis=0) for q in lines])
    n1 = grid.n + 1
    dist = _segment_distance(P, a, b).reshape(n1, n1)
    sign = np.where(_winding_rows(grid, a, b) > 0, 1.0, -1.0)
    return LevelSetField(grid, sign * dist, margin)


# --- paths ---

@dataclass(frozen=True, eq=False)
class EvolvedPath:
    times: np.ndarray                  # (M+1,)
    maps: list                         # per sample: (m, 2) positions of the launch nodes
    fields: list                       # per sample: LevelSetField
    launch_points: np.ndarray          # (m, 2)
    launch_mask: np.ndarray            # node mask of grid launch points
    interfaces: list = ()              # per sample: list of (k, 2) vertex loops
    validity_radius: float = np.inf
    z_drift: float = 0.0
    amplitude: float = 1.0

    @property
    def s_min(self) -> float:
        return float(self.times[0])

    @property
    def s_max(self) -> float:
        return float(self.times[-1])

    def field_at(self, s: float) -> LevelSetField:
        """Nodewise linear interpolation between the bracketing samples."""
        t = self.times
        tol = 1e-12 * max(1.0, abs(t[-1]))
        if s < t[0] - tol or s > t[-1] + tol:
            raise ValidityHorizonError(f"pseudo-time {s} outside sampled range [{t[0]}, {t[-1]}]")
        k = int(np.clip(np.searchsorted(t, s, side="right") - 1, 0, len(t) - 2))
        w = (s - t[k]) / (t[k + 1] - t[k])
        if w <= tol:
            return self.fields[k]
        if w >= 1 - tol:
            return self.fields[k + 1]
        f0, f1 = self.fields[k], self.fields[k + 1]
        return f0.with_values((1.0 - w) * f0.values + w * f1.values)


def _map_jacobian_det(X: np.ndarray, mask: np.ndarray, h: float) -> np.ndarray:
    """det of the finite-difference Jacobian of a node map restricted to mask."""
    n1 = mask.shape[0]
    full = np.full((n1, n1, 2), np.nan)
    full[mask] = X
    J = np.zeros(full.shape[:2] + (2, 2))
    for axis, col in ((1, 0), (0, 1)):
        fwd = np.roll(full, -1, axis=axis)
        bwd = np.roll(full, 1, axis=axis)
        okf = np.roll(mask, -1, axis=axis)
        okb = np.roll(mask, 1, axis=axis)
        # no wrap-around across the cell boundary
        if axis == 1:
            okf[:, -1] = False
            okb[:, 0] = False
        else:
            okf[-1, :] = False
            okb[0, :] = False
        central = (fwd - bwd) / (2 * h)
        forward = (fwd - full) / h
        backward = (full - bwd) / h
        d = np.where((okf & okb)[..., None], central,
                     np.where(okf[..., None], forward, np.where(okb[..., None], backward, np.nan)))
        J[..., :, col] = d
    dets = np.linalg.det(J[mask])
    return dets[np.isfinite(dets)]


def evolve(phi0: LevelSetField, speed: SpeedField | float, dt: float, steps: int,
           check_horizon: bool = True, horizon_fraction: float = 0.8) -> EvolvedPath:
    """Evolve the interface of phi0 for ``steps`` RK4 steps of size ``dt``."""
    if dt <= 0 or steps < 0:
        raise ValueError("dt must be positive and steps non-negative")
    check_valid(phi0)
    T = dt * steps
    if not isinstance(speed, SpeedField):
        speed = SpeedField.uniform(phi0, float(speed), sweep=abs(float(speed)) * T)
    lines0 = extract_interface(phi0)
    if not lines0:
        raise InvalidGeometryError("evolve needs a non-empty interface")
    radius = tubular_radius(phi0)
    vmax = speed.max_speed()
    if check_horizon and vmax * T > horizon_fraction * radius:
        raise ValidityHorizonError(
            f"sweep {vmax * T:.4g} exceeds {horizon_fraction:.0%} of the tubular radius {radius:.4g}")

    mask = band_nodes(phi0)
    nodes = phi0.grid.nodes()[mask]
    sizes = [len(q.points) for q in lines0]
    verts = np.concatenate([q.points for q in lines0])
    state = launch_state(phi0, np.vstack([nodes, verts]))
    m = len(nodes)
    z0 = state.z.copy()

    edge = 0.5 - phi0.margin
    maps, fields, loops = [], [], []
    history = integrate_characteristics(state, speed, dt, steps)
    for k, st in enumerate(history):
        vx = st.x[m:]
        if np.any(np.max(np.abs(vx), axis=1) >= edge):
            raise PathValidityError(f"interface reaches the margin band at s={k * dt:.4g}")
        if vmax > 0:
            cut = speed.value_and_gradient(vx)[0]
            if np.any(np.abs(cut) < (1 - 1e-9) * abs(speed.amplitude)) and speed.vmod is None:
                raise PathValidityError(f"interface left the speed support band at s={k * dt:.4g}")
        pieces = np.split(vx, np.cumsum(sizes)[:-1])
        maps.append(np.array(nodes) if k == 0 else st.x[:m].copy())
        loops.append(pieces)
        if k > 0:
            dets = _map_jacobian_det(st.x[:m], mask, phi0.h)
            if dets.size and dets.min() <= 0:
                raise FoldError(f"characteristic map folds (det {dets.min():.3g}) at s={k * dt:.4g}")
        if k > 0 and vmax == 0:
            fields.append(fields[0])
        else:
            fields.append(signed_distance_to_polylines(phi0.grid, pieces, phi0.margin))
        try:
            check_valid(fields[-1])
        except InvalidGeometryError as exc:
            raise PathValidityError(f"reconstructed geometry invalid at s={k * dt:.4g}: {exc}") from None
    drift = float(max(np.max(np.abs(st.z - z0)) for st in history))
    return EvolvedPath(np.arange(steps + 1) * dt, maps, fields, nodes, mask, loops, radius, drift,
                       speed.amplitude)


# --- diagnostics on paths ---

@dataclass
class PhiSigmaReport:
    s: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    dphi_ds: np.ndarray          # centred differences at interior samples
    max_rel_deviation: float
    observed_sign: int


def phi_sigma_relation_check(path: EvolvedPath) -> PhiSigmaReport:
    """Compare centred differences of porosity with the interface length along a path."""
    s = np.asarray(path.times)
    phi = np.array([porosity(f) for f in path.fields])
    sigma = np.array([surface_area(f) for f in path.fields])
    d = (phi[2:] - phi[:-2]) / (s[2:] - s[:-2])
    if np.max(np.abs(d)) == 0.0:
        dev, sign = 0.0, 0
    else:
        dev = float(np.max(np.abs(np.abs(d) - sigma[1:-1]) / sigma[1:-1]))
        sign = int(np.sign(np.median(d)))
    return PhiSigmaReport(s, phi, sigma, d, dev, sign)


def time_rescale(path: EvolvedPath, speed_history: Callable[[float], float]):
    """Map t -> geometry at pseudo-time V(t) = int_0^t v, for a unit-speed path."""
    def V(t: float) -> float:
        if t == 0:
            return 0.0
        val, _ = quad(speed_history, 0.0, t, epsabs=1e-13, epsrel=1e-12)
        return val

    def at(t: float) -> LevelSetField:
        return path.field_at(V(t))

    at.pseudo_time = V
    return at


def normal_offset_parameterization(phi0: LevelSetField, s: float,
                                   convention: str = "fluid") -> list[InterfacePolyline]:
    """Offset each interface vertex by s along the discrete unit normal.

    ``convention="fluid"`` uses the outer normal of the fluid (pointing into
    the solid, grad Phi / |grad Phi|); ``"solid"`` uses its negative.
    """
    if convention not in NORMAL_CONVENTIONS:
        raise ValueError(f"unknown normal convention {convention!r}")
    lines = extract_interface(phi0)
    if s == 0:
        return lines
    radius = tubular_radius(phi0)
    if abs(s) >= radius:
        raise ValidityHorizonError(f"offset {s} reaches the tubular radius {radius:.4g}")
    sgn = 1.0 if convention == "fluid" else -1.0
    out = []
    for pl in lines:
        q = pl.points
        t = np.roll(q, -1, axis=0) - np.roll(q, 1, axis=0)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        left = np.stack([-t[:, 1], t[:, 0]], axis=-1)   # solid lies on the left
        out.append(InterfacePolyline(q + sgn * s * left, closed=True))
    return out


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two closed vertex loops (segment-aware)."""
    da = _segment_distance(a, b, np.roll(b, -1, axis=0)).max()
    db = _segment_distance(b, a, np.roll(a, -1, axis=0)).max()
    return float(max(da, db))
