"""Preconditioned conjugate gradients with residual history."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverFailureError


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def pcg(A, b: np.ndarray, tol: float = 1e-10, maxiter: int | None = None,
        M_inv_diag: np.ndarray | None = None, x0: np.ndarray | None = None,
        project_constants: bool = False, rtol_ref: float | None = None):
    """Solve A x = b for symmetric positive (semi)definite A.

    Stops once ||b - A x|| <= tol * ||b||.  With ``project_constants`` the
    residual is kept orthogonal to the constant vector, which is the right
    thing for consistent singular systems with a constant kernel.
    Returns (x, SolveInfo); raises SolverFailureError at the iteration cap.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    if M_inv_diag is None:
        M_inv_diag = np.ones(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    if project_constants:
        r -= r.mean()
    bnorm = np.linalg.norm(b) if rtol_ref is None else rtol_ref
    info = SolveInfo()
    if bnorm == 0.0:
        info.history.append(0.0)
        return np.zeros(n), info
    res = np.linalg.norm(r) / bnorm
    info.history.append(res)
    if res <= tol:
        info.residual = res
        return x, info
    z = M_inv_diag * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if project_constants:
            r -= r.mean()
        res = np.linalg.norm(r) / bnorm
        info.history.append(res)
        if res <= tol:
            # confirm with the true residual to avoid drift in the recursion
            rt = b - A @ x
            if project_constants:
                rt -= rt.mean()
            res_true = np.linalg.norm(rt) / bnorm
            if res_true <= tol:
                info.iterations, info.residual = k, res_true
                return x, info
            r = rt
            res = res_true
        z = M_inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailureError(
        f"CG did not reach relative residual {tol:.1e} in {maxiter} iterations (last {res:.3e})",
        info.history)
