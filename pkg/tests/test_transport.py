import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from poroscale.darcy import EDGES, MacroGrid
from poroscale.errors import BandViolationError, ConfigError, ExtrapolationError, NonlinearityError, StabilityError
from poroscale.tables import ParameterTable, PhiTable
from poroscale.transport import (
    CouplingMode,
    ReactionRate,
    TransportSetup,
    TransportState,
    advective_flux_audit,
    diffusion_matrix,
    full_coupling_rates,
    initial_state,
    run,
    step_advective,
    step_full,
    step_partial,
    upwind_divergence,
)


def circle_family_table(samples=9, delta=0.02):
    """Analytic stand-in for a circle table: r = 0.3 - s."""
    s = np.linspace(0.0, 0.2, samples)
    r = 0.3 - s
    phi = 1 - np.pi * r ** 2
    d = 0.3 + 0.5 * phi
    D = d[:, None, None] * np.eye(2)
    K = (0.002 + 0.05 * s)[:, None, None] * np.eye(2)
    return ParameterTable(s, phi, 2 * np.pi * r, D, K, delta)


TABLE = circle_family_table()
PHI_TABLE = PhiTable(TABLE)
GRID = MacroGrid(12, 12)


def constant_s(value):
    return lambda t, X, Y: value + 0 * X


# --- spatial operator ---

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), nx=st.integers(2, 9), ny=st.integers(2, 9))
def test_diffusion_matrix_is_symmetric_m_matrix_with_zero_row_sums(seed, nx, ny):
    rng = np.random.default_rng(seed)
    g = MacroGrid(nx, ny, lx=1.3, ly=0.7)
    a = rng.uniform(0.1, 2.0, size=(ny + 1, nx + 1))
    b = rng.uniform(0.1, 2.0, size=(ny + 1, nx + 1))
    A = diffusion_matrix(g, a, b).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-13)
    np.testing.assert_allclose(A.sum(axis=1), 0.0, atol=1e-12)
    off = A - np.diag(np.diag(A))
    assert np.all(off <= 0.0)


# --- partial coupling, diffusive ---

def test_constant_data_stay_constant():
    mode = CouplingMode("partial_diffusive", constant_s(0.05))
    setup = TransportSetup(GRID, {e: 1.0 for e in EDGES}, ReactionRate.zero())
    out = run(mode, setup, initial_state(setup, 1.0, mode, TABLE), 0.1, 0.01, table=TABLE)
    assert out.completed
    assert max(np.abs(s.c - 1.0).max() for s in out.states) <= 1e-10


def test_homogeneous_linear_reaction_grows_exponentially():
    mode = CouplingMode("partial_diffusive", constant_s(0.08))
    setup = TransportSetup(GRID, {}, ReactionRate.linear())
    out = run(mode, setup, initial_state(setup, 1.0, mode, TABLE), 0.1, 1e-3, table=TABLE)
    rate = float(TABLE.column("sigma", 0.08) / TABLE.column("phi", 0.08))
    for s in out.states:
        assert np.abs(s.c / np.exp(rate * s.t) - 1).max() <= 1e-2


def test_zero_length_run_returns_initial_state():
    mode = CouplingMode("partial_diffusive", constant_s(0.05))
    setup = TransportSetup(GRID)
    start = initial_state(setup, 0.3, mode, TABLE)
    out = run(mode, setup, start, 0.0, 0.01, table=TABLE)
    assert out.completed and len(out.states) == 1 and out.final is start
    assert len(out.diagnostics) == 1 and out.horizon == 0.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000), s=st.floats(0.0, 0.2), left=st.floats(0.0, 2.0))
def test_no_reaction_obeys_maximum_principle(seed, s, left):
    rng = np.random.default_rng(seed)
    mode = CouplingMode("partial_diffusive", constant_s(s))
    setup = TransportSetup(GRID, {"left": left}, ReactionRate.zero())
    X, _ = setup.nodes()
    c0 = rng.uniform(0.0, 2.0, size=X.shape)
    c0[:, 0] = left
    out = run(mode, setup, TransportState(c0, TABLE.column("phi", s + 0 * X), 0.0), 0.05, 0.01, table=TABLE)
    lo, hi = c0.min(), c0.max()
    for st_ in out.states:
        assert st_.c.min() >= lo - 1e-12 and st_.c.max() <= hi + 1e-12


def test_order_parameter_outside_table_is_refused():
    mode = CouplingMode("partial_diffusive", lambda t, X, Y: 0.15 + t + 0 * X)
    setup = TransportSetup(GRID)
    with pytest.raises(ExtrapolationError):
        run(mode, setup, initial_state(setup, 1.0, mode, TABLE), 0.2, 0.01, table=TABLE)


def test_partial_mode_needs_order_parameter_field():
    with pytest.raises(ConfigError):
        CouplingMode("partial_diffusive")
    with pytest.raises(ConfigError):
        CouplingMode("full_diffusive", vn_sign=2)


def test_picard_limit_raises_nonlinearity_error():
    mode = CouplingMode("partial_diffusive", lambda t, X, Y: 0.02 + 0.5 * t + 0.05 * X)
    setup = TransportSetup(GRID, {}, ReactionRate(lambda c: c ** 2), picard_max=1)
    state = initial_state(setup, 1.0, mode, TABLE)
    with pytest.raises(NonlinearityError):
        step_partial(state, mode.s_field, TABLE, 0.05, setup)


# --- full coupling, diffusive ---

@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.0, 5.0), phi=st.floats(0.05, 0.95), sigma=st.floats(0.0, 3.0),
       vn=st.sampled_from([1, -1]))
def test_local_rates_change_total_mass_by_expected_amount(c, phi, sigma, vn):
    dc, dphi = full_coupling_rates(c, phi, sigma, vn)
    # d/dt (phi c + 1 - phi) = sigma c (vn - 1): zero when dissolution feeds the fluid
    total_rate = phi * dc + c * dphi - dphi
    assert total_rate == pytest.approx(sigma * c * (vn - 1), abs=1e-12 * (1 + sigma * c * (1 + c)))


def test_zero_concentration_is_a_fixed_point():
    mode = CouplingMode("full_diffusive")
    setup = TransportSetup(GRID)
    out = run(mode, setup, initial_state(setup, 0.0, mode, phi_table=PHI_TABLE, phi0=0.85), 0.05, 0.01,
              phi_table=PHI_TABLE)
    for s in out.states:
        assert np.all(s.c == 0.0) and np.all(s.phi == 0.85)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000), amp=st.floats(0.0, 0.6))
def test_no_flux_full_coupling_conserves_total_mass(seed, amp):
    rng = np.random.default_rng(seed)
    mode = CouplingMode("full_diffusive")
    setup = TransportSetup(GRID)
    X, _ = setup.nodes()
    start = TransportState(amp * rng.random(X.shape), 0.8 + 0.05 * rng.random(X.shape), 0.0)
    out = run(mode, setup, start, 0.02, 1e-3, phi_table=PHI_TABLE)
    m = np.array([d["mass_total"] for d in out.diagnostics])
    assert np.abs(m - m[0]).max() <= 1e-12 * m[0]
    assert min(s.c.min() for s in out.states) >= -1e-14


def test_uniform_full_coupling_converges_at_first_order_to_continuous_system():
    def rhs(t, y):
        c, phi = y
        dc, dphi = full_coupling_rates(c, phi, float(PHI_TABLE.sigma_hat(phi)))
        return [dc, dphi]

    exact = solve_ivp(rhs, (0.0, 0.1), [0.4, 0.85], method="Radau", rtol=1e-12, atol=1e-14).y[:, -1]
    mode = CouplingMode("full_diffusive")
    setup = TransportSetup(MacroGrid(3, 3))

    def err(dt):
        start = initial_state(setup, 0.4, mode, phi_table=PHI_TABLE, phi0=0.85)
        f = run(mode, setup, start, 0.1, dt, phi_table=PHI_TABLE, keep_states=False).final
        assert np.ptp(f.c) <= 1e-12 and np.ptp(f.phi) <= 1e-12
        return max(abs(f.c[0, 0] - exact[0]), abs(f.phi[0, 0] - exact[1]))

    ratio = err(0.01) / err(0.005)
    assert 1.7 <= ratio <= 2.3


def test_band_exit_ends_run_with_horizon():
    mode = CouplingMode("full_diffusive")
    setup = TransportSetup(GRID)
    start = initial_state(setup, 5.0, mode, phi_table=PHI_TABLE, phi0=0.75)
    out = run(mode, setup, start, 0.2, 1e-3, phi_table=PHI_TABLE)
    assert not out.completed
    assert isinstance(out.error, BandViolationError)
    assert 0.0 < out.horizon < 0.2
    assert out.final.t == out.horizon
    lo, hi = PHI_TABLE.phi_range
    assert lo <= out.final.phi.min() and out.final.phi.max() <= hi


def test_full_step_rejects_state_outside_band():
    setup = TransportSetup(GRID)
    X, _ = setup.nodes()
    with pytest.raises(BandViolationError):
        step_full(TransportState(0 * X, 0.5 + 0 * X, 0.0), PHI_TABLE, 0.01, setup)


# --- partial coupling, advective ---

def test_zero_velocity_reduces_to_diffusive_step():
    s_field = lambda t, X, Y: 0.05 + 0.1 * t + 0.02 * X
    setup = TransportSetup(GRID, {"left": 0.0})
    X, Y = setup.nodes()
    state = TransportState(np.sin(0.5 * np.pi * X) * (1 + Y), TABLE.column("phi", s_field(0, X, Y)), 0.0)
    a, _ = step_partial(state, s_field, TABLE, 0.01, setup)
    b, _ = step_advective(state, s_field, TABLE, np.zeros((GRID.ny, GRID.nx, 2)), 0.01, setup)
    assert np.abs(a.c - b.c).max() <= 1e-12


def test_cfl_violation_raises_stability_error():
    setup = TransportSetup(GRID)
    X, _ = setup.nodes()
    state = TransportState(1 + 0 * X, TABLE.column("phi", 0.05 + 0 * X), 0.0)
    v = np.zeros((GRID.ny, GRID.nx, 2))
    v[..., 0] = 10.0
    with pytest.raises(StabilityError):
        step_advective(state, constant_s(0.05), TABLE, v, 0.01, setup)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_upwind_divergence_telescopes_to_boundary_flux(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(GRID.ny, GRID.nx, 2))
    total, boundary = advective_flux_audit(GRID, v, rng.random((GRID.ny + 1, GRID.nx + 1)))
    assert abs(total - boundary) <= 1e-9


def test_uniform_flow_of_constant_concentration_has_no_interior_divergence():
    v = np.zeros((GRID.ny, GRID.nx, 2))
    v[..., 0], v[..., 1] = 0.7, -0.3
    div = upwind_divergence(GRID, v, np.ones((GRID.ny + 1, GRID.nx + 1)))
    assert np.abs(div[1:-1, 1:-1]).max() <= 1e-13


def test_pulse_moves_with_interstitial_speed_scaled_flow():
    g = MacroGrid(48, 8, lx=3.0, ly=0.5)
    setup = TransportSetup(g, {}, ReactionRate.zero(), diffusion_scale=1e-6)
    X, Y = setup.nodes()
    phi = float(TABLE.column("phi", 0.05))
    v = np.zeros((g.ny, g.nx, 2))
    v[..., 0] = phi        # interstitial speed v / phi = 1
    state = TransportState(np.exp(-((X - 1.0) ** 2) / 0.05), phi + 0 * X, 0.0)
    W = setup.node_weights()
    dt = 0.5 * g.hx
    x0 = (W * state.c * X).sum() / (W * state.c).sum()
    for _ in range(8):
        state, _ = step_advective(state, constant_s(0.05), TABLE, v, dt, setup)
    x1 = (W * state.c * X).sum() / (W * state.c).sum()
    assert abs((x1 - x0) - 8 * dt) <= g.hx
