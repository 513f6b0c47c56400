"""Boundary-preserving deformations of the unit cell and their paths."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidDeformationError, ValidityHorizonError
from .geometry import LevelSetField, cell_triangles, _triangle_fluid_fraction, pullback


def smoothstep5(t):
    """Quintic smoothstep on [0, 1] (clamped), C2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def smoothstep5_prime(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 30.0 * t ** 2 * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class RadialScaling:
    """Map y -> lam(|y|) y with lam = r1/r2 inside r2, 1 beyond ``outer``.

    In between lam = 1 - xi (1 - r1/r2), where xi falls from 1 to 0 along a
    quintic smoothstep in |y|.
    """

    r1: float
    r2: float
    outer: float

    @property
    def ratio(self) -> float:
        return self.r1 / self.r2

    def _xi(self, rho):
        t = (rho - self.r2) / (self.outer - self.r2)
        return 1.0 - smoothstep5(t), -smoothstep5_prime(t) / (self.outer - self.r2)

    def lam(self, rho):
        xi, dxi = self._xi(rho)
        k = self.ratio
        return 1.0 - xi * (1.0 - k), -dxi * (1.0 - k)

    def radial(self, rho):
        """Radial profile g(rho) = rho lam(rho) and its derivative."""
        lam, dlam = self.lam(rho)
        return rho * lam, lam + rho * dlam

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        rho = np.hypot(y[..., 0], y[..., 1])
        lam, _ = self.lam(rho)
        return y * lam[..., None]

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        rho = np.hypot(y[..., 0], y[..., 1])
        lam, dlam = self.lam(rho)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(rho > 0, dlam / np.where(rho > 0, rho, 1.0), 0.0)
        J = np.empty(y.shape + (2,))
        J[..., 0, 0] = lam + c * y[..., 0] ** 2
        J[..., 1, 1] = lam + c * y[..., 1] ** 2
        J[..., 0, 1] = J[..., 1, 0] = c * y[..., 0] * y[..., 1]
        return J

    def det(self, y):
        y = np.asarray(y, dtype=float)
        rho = np.hypot(y[..., 0], y[..., 1])
        lam, dlam = self.lam(rho)
        return lam * (lam + rho * dlam)

    def inverse(self, x):
        """Inverse map by bisection on the monotone radial profile."""
        x = np.asarray(x, dtype=float)
        R = np.hypot(x[..., 0], x[..., 1])
        k = self.ratio
        lo = np.full_like(R, self.r2)
        hi = np.full_like(R, self.outer)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.radial(mid)[0] < R
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        rho = 0.5 * (lo + hi)
        rho = np.where(R <= k * self.r2, R / k, rho)
        rho = np.where(R >= self.outer, R, rho)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(R > 0, rho / np.where(R > 0, R, 1.0), 1.0 / k)
        return x * scale[..., None]

    def min_radial_derivative(self, samples: int = 4001) -> float:
        rho = np.linspace(self.r2, self.outer, samples)
        return float(np.min(self.radial(rho)[1]))


def circle_diffeo(r1: float, r2: float, margin: float = 0.02) -> RadialScaling:
    """Radial deformation mapping the circle of radius r2 onto radius r1."""
    outer = 0.5 - margin
    if not (0.0 < r1 < outer and 0.0 < r2 < outer):
        raise InvalidDeformationError(
            f"radii ({r1}, {r2}) must lie in (0, {outer:.4g}) for margin {margin}")
    h = RadialScaling(float(r1), float(r2), outer)
    if h.min_radial_derivative() <= 0.0:
        raise InvalidDeformationError(
            f"radius ratio {r1 / r2:.4g} folds the blend region (det <= 0)")
    return h


@dataclass(frozen=True)
class DiffeoPath:
    """A family s -> h_s of deformations; ``at(s)`` returns the map object.

    Map objects expose ``__call__``, ``jacobian``, ``det`` and ``inverse``.
    """

    s_min: float
    s_max: float
    margin: float
    at: Callable[[float], RadialScaling]
    origin: float = 0.0

    def _check(self, s: float) -> None:
        tol = 1e-12 * max(1.0, abs(self.s_max - self.s_min))
        if not (self.s_min - tol <= s <= self.s_max + tol):
            raise ValidityHorizonError(f"s={s} outside path range [{self.s_min}, {self.s_max}]")

    def eval(self, s: float, y):
        self._check(s)
        return self.at(s)(y)

    def jac(self, s: float, y):
        self._check(s)
        return self.at(s).jacobian(y)

    def inverse(self, s: float, x):
        self._check(s)
        return self.at(s).inverse(x)

    def transport(self, s: float, phi0: LevelSetField) -> LevelSetField:
        """Geometry at s: phi0 composed with the inverse of h_s."""
        self._check(s)
        return pullback(self.at(s).inverse, phi0)


def circle_path(r0: float, r_end: float, margin: float = 0.02) -> DiffeoPath:
    """Path with h_s mapping the radius-r0 circle onto radius r0 - s."""
    s_end = r0 - r_end
    circle_diffeo(r_end, r0, margin)  # validates the extreme member
    return DiffeoPath(min(0.0, s_end), max(0.0, s_end), margin,
                      lambda s: circle_diffeo(r0 - s, r0, margin))


def jacobian_porosity(path: DiffeoPath, s: float, phi0: LevelSetField) -> float:
    """Fluid area at s as the integral of |det grad h_s| over the fluid of phi0."""
    path._check(s)
    h_s = path.at(s)
    grid = phi0.grid
    hh = grid.h
    x = grid.nodes_1d()
    X, Y = np.meshgrid(x[:-1], x[:-1])
    # triangle centroids for the four-triangle split (corner, corner, centre)
    offs = [((0, 0), (1, 0)), ((1, 0), (1, 1)), ((1, 1), (0, 1)), ((0, 1), (0, 0))]
    total = 0.0
    for (a, b, m), (o1, o2) in zip(cell_triangles(phi0.values), offs):
        cx = X + hh * (o1[0] + o2[0] + 0.5) / 3.0
        cy = Y + hh * (o1[1] + o2[1] + 0.5) / 3.0
        det = h_s.det(np.stack([cx, cy], axis=-1))
        if np.any(det <= 0):
            raise InvalidDeformationError(f"det grad h_s <= 0 at s={s}")
        total += float(np.sum(_triangle_fluid_fraction(a, b, m) * np.abs(det)))
    return total * 0.25 / grid.n ** 2
