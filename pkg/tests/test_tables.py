import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poroscale.diffeo import circle_path
from poroscale.errors import DegenerateSampleError, ExtrapolationError, ReparametrizationError
from poroscale.evolution import evolve
from poroscale.geometry import UnitCellGrid, circle_levelset
from poroscale.tables import (
    ParameterTable,
    PhiTable,
    SolverConfig,
    build_table,
    cell_parameters,
    interpolate,
    read_table_csv,
    smoothness_check,
    write_phi_table_csv,
    write_table_csv,
)

CONFIG = SolverConfig(with_K=False, delta=0.02)


@pytest.fixture(scope="module")
def circle_table():
    # radius 0.3 -> 0.1 in eight samples, s = 0.3 - r
    phi0 = circle_levelset(0.3, UnitCellGrid(64))
    return build_table(circle_path(0.3, 0.1), phi0, 8, CONFIG)


def constant_table(m=7, value=0.6):
    s = np.linspace(0.0, 0.3, m)
    D = np.tile(0.5 * np.eye(2), (m, 1, 1))
    return ParameterTable(s, np.full(m, value), np.full(m, 1.5), D, None, 0.02)


def test_circle_table_porosity_increases_between_disk_areas(circle_table):
    assert np.all(np.diff(circle_table.phi) > 0)
    assert circle_table.phi[0] == pytest.approx(1 - np.pi * 0.09, rel=5e-3)
    assert circle_table.phi[-1] == pytest.approx(1 - np.pi * 0.01, rel=5e-3)
    assert circle_table.phi_monotone() == 1


def test_D_increases_as_the_grain_shrinks(circle_table):
    assert np.all(np.diff(circle_table.D[:, 0, 0]) > 0)
    assert np.all(np.diff(circle_table.D[:, 1, 1]) > 0)


def test_zero_speed_path_gives_identical_samples():
    phi0 = circle_levelset(0.3, UnitCellGrid(48))
    path = evolve(phi0, 0.0, 0.01, 4)
    table = build_table(path, samples=5, config=CONFIG)
    for col in table.columns().values():
        assert np.ptp(col) <= 1e-8


def test_band_violation_is_reported_with_index():
    phi0 = circle_levelset(0.3, UnitCellGrid(48))
    with pytest.raises(DegenerateSampleError) as info:
        build_table(circle_path(0.3, 0.1), phi0, 4, SolverConfig(with_K=False, delta=0.05))
    assert info.value.index == 3


def test_interpolation_reproduces_knots(circle_table):
    for k in (0, 3, 7):
        p = interpolate(circle_table, circle_table.s[k])
        assert p.phi == circle_table.phi[k]
        assert p.sigma == circle_table.sigma[k]
        np.testing.assert_array_equal(np.diag(p.D), np.diag(circle_table.D[k]))


def test_constant_table_interpolates_to_constant():
    t = constant_table()
    mid = 0.5 * (t.s[2] + t.s[3])
    p = interpolate(t, mid)
    assert p.phi == pytest.approx(0.6, abs=1e-15)
    np.testing.assert_allclose(p.D, 0.5 * np.eye(2), atol=1e-15)


def test_porosity_interpolant_matches_disk_area(circle_table):
    s = np.linspace(circle_table.s[0], circle_table.s[-1], 41)
    exact = 1 - np.pi * (0.3 - s) ** 2
    assert np.max(np.abs(circle_table.column("phi", s) - exact) / exact) <= 5e-3


def test_extrapolation_is_refused(circle_table):
    with pytest.raises(ExtrapolationError):
        circle_table.column("phi", 0.25)
    with pytest.raises(ExtrapolationError):
        PhiTable(circle_table).s_of_phi(0.5)


def test_unsorted_samples_are_refused():
    with pytest.raises(ValueError):
        ParameterTable(np.array([0.0, 0.2, 0.1]), np.ones(3), np.ones(3), np.zeros((3, 2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=3, max_size=10, unique=True))
def test_pchip_preserves_monotone_porosity(values):
    phi = np.sort(values)
    m = len(phi)
    t = ParameterTable(np.arange(m, dtype=float), phi, np.ones(m), np.tile(np.eye(2), (m, 1, 1)))
    s = np.linspace(0, m - 1, 200)
    out = t.column("phi", s)
    assert np.all(np.diff(out) >= -1e-14)
    assert out.min() >= phi[0] - 1e-14 and out.max() <= phi[-1] + 1e-14


# --- porosity reparametrisation ---

def test_sigma_of_porosity_matches_circle_formula(circle_table):
    pt = PhiTable(circle_table)
    phis = np.linspace(*pt.phi_range, 30)
    exact = 2 * np.sqrt(np.pi * (1 - phis))
    assert np.max(np.abs(pt.sigma_hat(phis) - exact) / exact) <= 0.02


def test_porosity_round_trip_at_probe_points(circle_table):
    pt = PhiTable(circle_table)
    probes = np.linspace(*pt.phi_range, 20)
    assert np.abs(circle_table.column("phi", pt.s_of_phi(probes)) - probes).max() <= 1e-6


def test_porosity_lookup_matches_direct_cell_solve(circle_table):
    pt = PhiTable(circle_table)
    phi_r = circle_levelset(0.2, UnitCellGrid(64))
    direct = cell_parameters(phi_r, CONFIG)
    D_hat = pt.D_hat(direct.phi)
    np.testing.assert_allclose(D_hat, interpolate(circle_table, float(pt.s_of_phi(direct.phi))).D, atol=1e-14)
    assert pt.s_of_phi(direct.phi) == pytest.approx(0.1, abs=1e-3)
    # interpolation error of the eight-sample table
    np.testing.assert_allclose(np.diag(D_hat), np.diag(direct.D), atol=2e-3)


def test_non_monotone_porosity_cannot_be_reparametrised():
    m = 5
    t = ParameterTable(np.arange(m, dtype=float), np.array([0.5, 0.6, 0.55, 0.7, 0.8]), np.ones(m),
                       np.tile(np.eye(2), (m, 1, 1)))
    with pytest.raises(ReparametrizationError):
        PhiTable(t)


# --- smoothness diagnostics ---

def test_porosity_derivative_matches_circumference(circle_table):
    entry = smoothness_check(circle_table, names=["phi"])["phi"]
    exact = 2 * np.pi * (0.3 - entry.center)
    assert entry.richardson == pytest.approx(exact, rel=0.02)
    assert entry.derivatives[0] == pytest.approx(exact, rel=0.02)


def test_constant_table_derivatives_at_noise_floor():
    report = smoothness_check(constant_table(), noise=1e-7)
    for entry in report.values():
        assert np.abs(entry.derivatives).max() <= 1e-7
        assert entry.noise_limited


def test_smoothness_needs_enough_samples():
    with pytest.raises(ValueError):
        smoothness_check(constant_table(m=5))


# --- CSV ---

def test_table_csv_round_trip(tmp_path, circle_table):
    path = tmp_path / "table.csv"
    write_table_csv(circle_table, path)
    back = read_table_csv(path, delta=0.02)
    np.testing.assert_array_equal(back.s, circle_table.s)
    np.testing.assert_array_equal(back.phi, circle_table.phi)
    # the file carries the symmetric part of D (one off-diagonal column)
    np.testing.assert_array_equal(back.D, 0.5 * (circle_table.D + circle_table.D.transpose(0, 2, 1)))
    assert back.K is None


def test_phi_table_csv_is_deterministic(tmp_path, circle_table):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_phi_table_csv(PhiTable(circle_table), a)
    write_phi_table_csv(PhiTable(circle_table), b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0].startswith("phi")
