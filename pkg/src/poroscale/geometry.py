"""Unit-cell grids, level-set fields, porosity and interface extraction.

Conventions: the unit cell is Y = (-1/2, 1/2)^2, node values are stored as
``values[j, i]`` with ``j`` indexing y2 and ``i`` indexing y1.  A node is solid
when its value is >= 0 and fluid when it is < 0.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometryError, OutOfDomainError


class GeometryWarning(UserWarning):
    pass


def default_margin(n: int) -> float:
    return max(3.0 / n, 0.02)


@dataclass(frozen=True)
class UnitCellGrid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16:
            raise InvalidGeometryError(f"grid needs an integer n >= 16, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def nodes_1d(self) -> np.ndarray:
        # endpoints are set exactly so queries stay inside [-1/2, 1/2]
        x = -0.5 + np.arange(self.n + 1) / self.n
        x[0], x[-1] = -0.5, 0.5
        return x

    def centers_1d(self) -> np.ndarray:
        return -0.5 + (np.arange(self.n) + 0.5) / self.n

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (n+1, n+1, 2), indexed [j, i]."""
        x = self.nodes_1d()
        X, Y = np.meshgrid(x, x)
        return np.stack([X, Y], axis=-1)

    def centers(self) -> np.ndarray:
        x = self.centers_1d()
        X, Y = np.meshgrid(x, x)
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True, eq=False)
class LevelSetField:
    grid: UnitCellGrid
    values: np.ndarray
    margin: float = field(default=-1.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if v.shape != (n + 1, n + 1):
            raise InvalidGeometryError(f"expected ({n + 1}, {n + 1}) node values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidGeometryError("level-set values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if self.margin < 0:
            object.__setattr__(self, "margin", default_margin(n))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def h(self) -> float:
        return self.grid.h

    def with_values(self, values) -> LevelSetField:
        return LevelSetField(self.grid, values, self.margin)

    def sample(self, points) -> np.ndarray:
        """Bilinear interpolation at points of shape (..., 2)."""
        return bilinear(self.values, points)

    def is_solid(self, points) -> np.ndarray:
        return self.sample(points) >= 0.0

    def cell_gradients(self) -> np.ndarray:
        """Cell-wise gradient of the bilinear interpolant at cell centers, shape (n, n, 2)."""
        v, h = self.values, self.h
        a, b, c, d = v[:-1, :-1], v[:-1, 1:], v[1:, 1:], v[1:, :-1]
        gx = ((b - a) + (c - d)) / (2 * h)
        gy = ((d - a) + (c - b)) / (2 * h)
        return np.stack([gx, gy], axis=-1)

    def cut_cells(self) -> np.ndarray:
        """Boolean (n, n) mask of cells whose corners do not share one phase."""
        s = self.values >= 0.0
        corners = np.stack([s[:-1, :-1], s[:-1, 1:], s[1:, 1:], s[1:, :-1]])
        return corners.any(axis=0) & ~corners.all(axis=0)

    def margin_mask(self) -> np.ndarray:
        x = self.grid.nodes_1d()
        inner = np.abs(x) <= 0.5 - self.margin + 1e-14
        return ~(inner[:, None] & inner[None, :])


def bilinear(values: np.ndarray, points) -> np.ndarray:
    """Bilinear interpolation of node values on Y at points (..., 2)."""
    pts = np.asarray(points, dtype=float)
    n = values.shape[0] - 1
    u = (pts[..., 0] + 0.5) * n
    w = (pts[..., 1] + 0.5) * n
    i = np.clip(np.floor(u).astype(int), 0, n - 1)
    j = np.clip(np.floor(w).astype(int), 0, n - 1)
    tu = u - i
    tw = w - j
    return ((1 - tu) * (1 - tw) * values[j, i] + tu * (1 - tw) * values[j, i + 1]
            + tu * tw * values[j + 1, i + 1] + (1 - tu) * tw * values[j + 1, i])


def check_valid(phi: LevelSetField, allow_empty_fluid: bool = False) -> None:
    """Raise InvalidGeometryError unless phi satisfies the geometry invariants."""
    solid = phi.values >= 0.0
    if np.any(solid & phi.margin_mask()):
        raise InvalidGeometryError(
            f"solid phase reaches the margin band of width {phi.margin:.4g} around the cell boundary")
    cut = phi.cut_cells()
    if cut.any():
        g = np.linalg.norm(phi.cell_gradients(), axis=-1)[cut]
        if g.min() < 0.5:
            raise InvalidGeometryError(
                f"level-set gradient too flat at the interface (min {g.min():.3g} < 0.5)")


def circle_levelset(r: float, grid: UnitCellGrid, center=(0.0, 0.0),
                    margin: float | None = None) -> LevelSetField:
    """Signed distance r - |y - center| with a C2 quartic cap for |y - center| < r/2."""
    if margin is None:
        margin = default_margin(grid.n)
    cx, cy = center
    if not (0.0 < r < 0.5) or r + max(abs(cx), abs(cy)) + margin >= 0.5:
        raise InvalidGeometryError(f"radius {r} with margin {margin} does not fit in the unit cell")
    P = grid.nodes()
    rho = np.hypot(P[..., 0] - cx, P[..., 1] - cy)
    return LevelSetField(grid, _capped_cone(r, rho), margin)


def _capped_cone(r: float, rho: np.ndarray) -> np.ndarray:
    r0 = 0.5 * r
    a, b, c = r - 3.0 * r0 / 8.0, -3.0 / (4.0 * r0), 1.0 / (8.0 * r0 ** 3)
    return np.where(rho >= r0, r - rho, a + b * rho ** 2 + c * rho ** 4)


def union_levelset(*fields: LevelSetField) -> LevelSetField:
    """Solid union of several inclusions (pointwise maximum)."""
    return fields[0].with_values(np.maximum.reduce([f.values for f in fields]))


def _triangle_fluid_fraction(a, b, c) -> np.ndarray:
    """Area fraction where the linear interpolant of vertex values is negative."""
    v = np.sort(np.stack([a, b, c], axis=-1), axis=-1)
    v0, v1, v2 = v[..., 0], v[..., 1], v[..., 2]
    out = np.zeros_like(v0)
    out[v2 < 0] = 1.0
    one = (v0 < 0) & (v1 >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = v0 ** 2 / ((v0 - v1) * (v0 - v2))
        f2 = 1.0 - v2 ** 2 / ((v2 - v0) * (v2 - v1))
    out = np.where(one, f1, out)
    two = (v1 < 0) & (v2 >= 0)
    return np.where(two, f2, out)


def cell_triangles(values: np.ndarray):
    """Split each cell into four triangles around its center.

    Returns a list of four (a, b, c) triples of (n, n) arrays; vertex c is the
    cell center where the bilinear interpolant equals the corner mean.
    """
    a, b, c, d = values[:-1, :-1], values[:-1, 1:], values[1:, 1:], values[1:, :-1]
    m = 0.25 * (a + b + c + d)
    return [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]


def cell_fluid_fractions(phi: LevelSetField) -> np.ndarray:
    """Fluid area fraction per cell, shape (n, n)."""
    tris = cell_triangles(phi.values)
    return 0.25 * sum(_triangle_fluid_fraction(*t) for t in tris)


def porosity(phi: LevelSetField) -> float:
    theta = cell_fluid_fractions(phi)
    value = float(np.sum(theta, dtype=np.float64) / phi.n ** 2)
    if value == 0.0:
        warnings.warn("all-solid geometry: porosity is zero", GeometryWarning, stacklevel=2)
    return value


# --- marching squares ---

# corner k sits between edges _CORNER_EDGES[k]; edges: 0 bottom, 1 right, 2 top, 3 left
_CORNER_EDGES = ((3, 0), (0, 1), (1, 2), (2, 3))
_EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
_CORNER_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))


@dataclass(frozen=True, eq=False)
class InterfacePolyline:
    """Directed closed (or open) chain of interface vertices, solid on the left."""

    points: np.ndarray
    closed: bool = True

    @property
    def segments(self) -> np.ndarray:
        p = self.points
        q = np.roll(p, -1, axis=0) if self.closed else p[1:]
        return np.stack([p[:len(q)], q], axis=1)

    def length(self) -> float:
        seg = self.segments
        return float(np.sum(np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)))


def _edge_point(v, i, j, edge, h):
    """Crossing point on an edge of cell (i, j) by linear interpolation."""
    c0, c1 = _EDGE_CORNERS[edge]
    (di0, dj0), (di1, dj1) = _CORNER_OFFSETS[c0], _CORNER_OFFSETS[c1]
    f0, f1 = v[j + dj0, i + di0], v[j + dj1, i + di1]
    t = f0 / (f0 - f1)
    x0 = np.array([-0.5 + (i + di0) * h, -0.5 + (j + dj0) * h])
    x1 = np.array([-0.5 + (i + di1) * h, -0.5 + (j + dj1) * h])
    return x0 + t * (x1 - x0)


def _edge_key(i, j, edge):
    # canonical global id for an edge shared by neighbouring cells
    if edge == 0:
        return ("h", i, j)
    if edge == 2:
        return ("h", i, j + 1)
    if edge == 3:
        return ("v", i, j)
    return ("v", i + 1, j)


def _cell_segments(v, i, j):
    """Edge pairs for the interface pieces inside cell (i, j)."""
    cv = [v[j + dj, i + di] for di, dj in _CORNER_OFFSETS]
    solid = [x >= 0.0 for x in cv]
    crossed = [e for e, (c0, c1) in enumerate(_EDGE_CORNERS) if solid[c0] != solid[c1]]
    if not crossed:
        return []
    if len(crossed) == 2:
        return [tuple(crossed)]
    # saddle: cut off the corners whose phase differs from the cell average
    centre_solid = 0.25 * sum(cv) >= 0.0
    return [_CORNER_EDGES[k] for k in range(4) if solid[k] != centre_solid]


def _needs_flip(v, i, j, e0):
    """True when a segment entering through edge e0 must be reversed.

    Walking from edge e0 to the exit edge, corner e0 (an endpoint of the
    crossed edge e0) lies on the left; the segment is kept when that corner
    is solid.  Purely combinatorial, so zero-length pieces orient consistently.
    """
    di, dj = _CORNER_OFFSETS[e0]
    return v[j + dj, i + di] < 0.0


def extract_interface(phi: LevelSetField) -> list[InterfacePolyline]:
    """Marching-squares interface as a list of directed polylines (solid on the left)."""
    v, h, n = phi.values, phi.h, phi.n
    cut = np.argwhere(phi.cut_cells())
    starts: dict = {}
    segs = []
    for j, i in cut:
        for e0, e1 in _cell_segments(v, i, j):
            p, q = _edge_point(v, i, j, e0, h), _edge_point(v, i, j, e1, h)
            k0, k1 = _edge_key(i, j, e0), _edge_key(i, j, e1)
            if _needs_flip(v, i, j, e0):
                p, q, k0, k1 = q, p, k1, k0
            starts[k0] = len(segs)
            segs.append((k0, k1, p))
    used = np.zeros(len(segs), dtype=bool)
    lines = []
    for s0 in range(len(segs)):
        if used[s0]:
            continue
        pts, s = [], s0
        while True:
            used[s] = True
            pts.append(segs[s][2])
            nxt = starts.get(segs[s][1])
            if nxt is None:
                raise InvalidGeometryError("interface is an open curve reaching the cell boundary")
            if nxt == s0:
                break
            if used[nxt]:
                raise InvalidGeometryError("interface chaining failed (inconsistent orientation)")
            s = nxt
        lines.append(InterfacePolyline(np.array(pts), closed=True))
    if lines and np.any((phi.values >= 0.0) & phi.margin_mask()):
        raise InvalidGeometryError("interface touches the margin band")
    return lines


def surface_area(phi: LevelSetField) -> float:
    lines = extract_interface(phi)
    if not lines:
        warnings.warn("empty interface: surface area is zero", GeometryWarning, stacklevel=2)
        return 0.0
    return float(sum(pl.length() for pl in lines))


def pullback(h_map, phi: LevelSetField, tol: float = 1e-12) -> LevelSetField:
    """Field composed with a map: y -> phi(h(y)), bilinear in phi."""
    P = phi.grid.nodes()
    X = np.asarray(h_map(P), dtype=float)
    if np.any(np.abs(X) > 0.5 + tol):
        raise OutOfDomainError("deformation maps grid nodes outside the unit cell")
    X = np.clip(X, -0.5, 0.5)
    return phi.with_values(phi.sample(X))
