"""Jacobi-preconditioned conjugate gradients for the SPD systems of a step."""
from dataclasses import dataclass

import numpy as np


class LinearSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    residual: float  # max over right-hand sides of |A x - b| / |b|
    condition_estimate: float  # extreme Ritz value ratio of the preconditioned operator


def _ritz_ratio(alphas, betas):
    k = len(alphas)
    if k == 0:
        return 1.0
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    diag[0] = 1.0 / alphas[0]
    for i in range(1, k):
        diag[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
        off[i - 1] = np.sqrt(betas[i - 1]) / alphas[i - 1]
    T = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    ev = np.linalg.eigvalsh(T)
    return float(ev[-1] / ev[0]) if ev[0] > 0 else np.inf


def solve_spd(A, b, tol=1e-10, maxiter=None, x0=None):
    """Solve ``A x = b`` for SPD ``A``; ``b`` may hold several columns.

    Each column is iterated until its relative residual drops below ``tol``.
    The diagonal preconditioner is shared by all columns.
    """
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n, ncol = B.shape
    if maxiter is None:
        maxiter = max(10 * n, 100)
    if not np.all(np.isfinite(B)):
        raise LinearSolveError("non-finite right-hand side")
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise LinearSolveError("matrix has non-positive diagonal; not SPD")
    dinv = 1.0 / diag

    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(B.shape)
    bnorm = np.linalg.norm(B, axis=0)
    scale = np.where(bnorm > 0, bnorm, 1.0)
    R = B - A @ X
    Z = dinv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    active = np.linalg.norm(R, axis=0) / scale > tol
    alphas, betas = [], []
    it = 0
    while active.any():
        if it >= maxiter:
            raise LinearSolveError(f"CG did not converge in {maxiter} iterations "
                                   f"(residual {np.max(np.linalg.norm(R, axis=0) / scale):.2e})")
        cols = np.nonzero(active)[0]
        AP = A @ P[:, cols]
        pAp = np.einsum("ij,ij->j", P[:, cols], AP)
        if np.any(pAp <= 0):
            raise LinearSolveError("matrix is not positive definite")
        alpha = rz[cols] / pAp
        X[:, cols] += alpha * P[:, cols]
        R[:, cols] -= alpha * AP
        Z[:, cols] = dinv[:, None] * R[:, cols]
        rz_new = np.einsum("ij,ij->j", R[:, cols], Z[:, cols])
        beta = rz_new / rz[cols]
        P[:, cols] = Z[:, cols] + beta * P[:, cols]
        if active[0]:
            alphas.append(alpha[0])
            betas.append(beta[0])
        rz[cols] = rz_new
        it += 1
        active[cols] = np.linalg.norm(R[:, cols], axis=0) / scale[cols] > tol
    if not np.all(np.isfinite(X)):
        raise LinearSolveError("non-finite solution")
    true_res = float(np.max(np.linalg.norm(B - A @ X, axis=0) / scale))
    report = LinearSolveReport(it, true_res, _ritz_ratio(alphas, betas[:-1]))
    return (X[:, 0] if single else X), report
