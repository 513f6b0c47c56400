import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import spsolve

from poroscale.errors import SolverFailureError
from poroscale.linalg import pcg


def laplacian_1d(n, shift=0.0):
    return sp.diags([-np.ones(n - 1), (2 + shift) * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 60), shift=st.floats(0.01, 2.0), seed=st.integers(0, 999))
def test_pcg_matches_direct_solve(n, shift, seed):
    A = laplacian_1d(n, shift)
    b = np.random.default_rng(seed).normal(size=n)
    x, info = pcg(A, b, tol=1e-12, M_inv_diag=1.0 / A.diagonal())
    np.testing.assert_allclose(x, spsolve(A.tocsc(), b), rtol=1e-8, atol=1e-10)
    assert info.residual <= 1e-12
    assert info.history[-1] <= 1e-12


def test_pcg_solves_consistent_singular_system():
    n = 40
    A = laplacian_1d(n).tolil()
    A[0, -1] = A[-1, 0] = -1.0      # periodic: constants span the kernel
    A = A.tocsr()
    b = np.sin(2 * np.pi * np.arange(n) / n)
    x, _ = pcg(A, b, tol=1e-12, project_constants=True)
    r = b - A @ x
    assert np.linalg.norm(r - r.mean()) <= 1e-10


def test_zero_right_hand_side_returns_zero():
    x, info = pcg(laplacian_1d(5), np.zeros(5))
    assert np.all(x == 0) and info.iterations == 0


def test_iteration_cap_raises_with_history():
    A = laplacian_1d(200)
    with pytest.raises(SolverFailureError) as info:
        pcg(A, np.ones(200), tol=1e-14, maxiter=3)
    assert len(info.value.residual_history) == 4
