import json
from pathlib import Path

import numpy as np
import pytest

from poroscale.cells import (
    EffectiveTensor,
    diffusion_tensor,
    dirichlet_energy,
    permeability_tensor,
    solve_diffusion_cell,
    solve_stokes_cell,
)
from poroscale.diffeo import circle_diffeo
from poroscale.errors import DegenerateGeometryError, NoSolutionError
from poroscale.geometry import LevelSetField, UnitCellGrid, circle_levelset, porosity, pullback, union_levelset

REFERENCE = json.loads((Path(__file__).parent / "data" / "reference.json").read_text())


@pytest.fixture(scope="module")
def circle128():
    return circle_levelset(0.3, UnitCellGrid(128))


@pytest.fixture(scope="module")
def diffusion128(circle128):
    return solve_diffusion_cell(circle128, eps_penal=1e-6, tol=1e-10)


@pytest.fixture(scope="module")
def stokes128(circle128):
    return solve_stokes_cell(circle128, eta_penal=1e-6)


def fluid(n):
    return LevelSetField(UnitCellGrid(n), -np.ones((n + 1, n + 1)))


# --- diffusion cell problem ---

def test_all_fluid_correctors_vanish_and_D_is_identity():
    phi = fluid(64)
    sol = solve_diffusion_cell(phi)
    assert np.abs(sol.zeta).max() <= 1e-9
    np.testing.assert_allclose(diffusion_tensor(sol, phi).m, np.eye(2), atol=1e-8)


def test_all_solid_diffusion_problem_is_degenerate():
    phi = LevelSetField(UnitCellGrid(16), np.ones((17, 17)), margin=0.0)
    with pytest.raises(DegenerateGeometryError):
        solve_diffusion_cell(phi)


def test_circle_diffusion_converges(diffusion128):
    assert diffusion128.residual <= 1e-10
    # iteration counts from the frozen baseline; allow slack for BLAS differences
    for k, ref in zip(diffusion128.iterations, REFERENCE["diffusion_iterations_n128"]):
        assert abs(k - ref) <= 0.1 * ref


def test_circle_D_is_isotropic_and_matches_fine_grid(circle128, diffusion128):
    D = diffusion_tensor(diffusion128, circle128).m
    assert abs(D[0, 0] - D[1, 1]) <= 1e-3
    assert max(abs(D[0, 1]), abs(D[1, 0])) <= 1e-3
    assert D[0, 0] == pytest.approx(REFERENCE["D_n128"], rel=1e-8)
    # discretisation error against the n=512 self-oracle
    assert D[0, 0] == pytest.approx(REFERENCE["D_fine"], rel=5e-3)


def test_identity_pullback_reproduces_direct_solution(circle128, diffusion128):
    moved = pullback(circle_diffeo(0.3, 0.3), circle128)
    sol = solve_diffusion_cell(moved, eps_penal=1e-6, tol=1e-10)
    assert np.abs(sol.zeta - diffusion128.zeta).max() <= 1e-9


@pytest.mark.parametrize("centers", [((0.0, 0.0),), ((0.2, 0.0), (-0.15, 0.1)), ((0.1, -0.1), (-0.2, 0.2))])
@pytest.mark.parametrize("r", [0.08, 0.15])
def test_D_diagonal_bounded_by_porosity(centers, r):
    grid = UnitCellGrid(64)
    phi = union_levelset(*[circle_levelset(r, grid, center=c, margin=0.02) for c in centers])
    D = diffusion_tensor(solve_diffusion_cell(phi), phi)
    assert np.all(np.diag(D.m) <= porosity(phi) + 1e-3)
    assert D.is_symmetric(1e-6) and D.is_psd()


def test_penalisation_limit_is_cauchy():
    phi = circle_levelset(0.3, UnitCellGrid(64))
    d = [diffusion_tensor(solve_diffusion_cell(phi, eps), phi).m[0, 0] for eps in (1e-4, 1e-5, 1e-6)]
    assert abs(d[0] - d[1]) >= 3 * abs(d[1] - d[2])


# --- Stokes cell problem ---

def test_stokes_without_solid_has_no_solution():
    with pytest.raises(NoSolutionError):
        solve_stokes_cell(fluid(16))


def test_stokes_velocity_vanishes_in_solid(stokes128):
    assert stokes128.residual <= 1e-8
    assert stokes128.solid_velocity_max() <= 1e-5


def test_circle_K_is_isotropic_and_matches_fine_grid(circle128, stokes128):
    K = permeability_tensor(stokes128, circle128).m
    k = K[0, 0]
    assert abs(K[1, 1] - k) <= 1e-3 * k
    assert max(abs(K[0, 1]), abs(K[1, 0])) <= 1e-3 * k
    assert k == pytest.approx(REFERENCE["K_n128"], rel=1e-6)
    assert k == pytest.approx(REFERENCE["K_fine"], rel=2e-2)


def test_energy_identity_at_coarse_grid():
    phi = circle_levelset(0.3, UnitCellGrid(64))
    sol = solve_stokes_cell(phi, eta_penal=1e-8)
    K = permeability_tensor(sol, phi).m
    for j in range(2):
        assert abs(K[j, j] - dirichlet_energy(sol, j)) <= 1e-4 * K[j, j]


def test_K_decreases_as_the_grain_grows():
    grid = UnitCellGrid(64)
    k = {}
    for r in (0.2, 0.3, 0.45):
        phi = circle_levelset(r, grid, margin=0.02)
        k[r] = np.diag(permeability_tensor(solve_stokes_cell(phi), phi).m)
    assert np.all(k[0.45] < k[0.3]) and np.all(k[0.3] < k[0.2])


def test_nearly_full_solid_cuts_K_by_factor_five(stokes128):
    phi = circle_levelset(0.48, UnitCellGrid(128), margin=0.01)
    K_big = permeability_tensor(solve_stokes_cell(phi), phi).m
    K_ref = permeability_tensor(stokes128).m
    assert np.all(5 * np.diag(K_big) <= np.diag(K_ref))


def test_mirrored_geometry_mirrors_velocity_and_keeps_K():
    grid = UnitCellGrid(64)
    phi = circle_levelset(0.2, grid, center=(0.12, 0.05))
    mirrored = phi.with_values(phi.values[:, ::-1])
    a, b = solve_stokes_cell(phi), solve_stokes_cell(mirrored)
    Ka, Kb = permeability_tensor(a).m, permeability_tensor(b).m
    np.testing.assert_allclose(np.diag(Kb), np.diag(Ka), rtol=1e-8)
    # off-diagonal flips sign with the x-reflection
    np.testing.assert_allclose(Kb[0, 1], -Ka[0, 1], atol=1e-8 * Ka[0, 0])
    # cell i maps to n-1-i, x-faces (west faces) of cell i map to the face of cell n-i
    n = grid.n
    u_a = a.omega[0, 0]
    u_b = b.omega[0, 0]
    np.testing.assert_allclose(u_b, u_a[:, (n - np.arange(n)) % n], atol=1e-8 * np.abs(u_a).max())
    v_a = a.omega[0, 1]
    v_b = b.omega[0, 1]
    np.testing.assert_allclose(v_b, -v_a[:, ::-1], atol=1e-8 * np.abs(u_a).max())


def test_effective_tensor_helpers():
    t = EffectiveTensor(np.array([[2.0, 0.1], [0.1, 1.0]]))
    assert t.is_symmetric() and t.is_psd()
    assert t.asymmetry() == 0.0
    assert np.all(t.eigenvalues() > 0)
