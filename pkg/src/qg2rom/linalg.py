"""Jacobi-preconditioned Krylov solvers on compressed-row matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError, SolverError


@dataclass
class SparseSystem:
    """Square CSR matrix plus right-hand side.

    symmetric marks systems whose (possibly sign-flipped) matrix is SPD so
    that solve_linear can dispatch to conjugate gradients.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m:
            raise DomainError(f"matrix is not square: {self.matrix.shape}")
        if self.rhs.shape != (n,):
            raise DomainError(f"rhs shape {self.rhs.shape} does not match matrix size {n}")
        diag = self.matrix.diagonal()
        if np.any(diag == 0.0):
            raise DomainError("zero diagonal entry in sparse system")


def _jacobi(A):
    d = A.diagonal()
    return 1.0 / d


def cg(A, b, tol=1e-10, max_iter=None):
    """Preconditioned conjugate gradients; A must be SPD.

    Returns (x, relative_residual, iterations).
    """
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    minv = _jacobi(A)
    x = np.zeros(n)
    r = b.copy()
    z = minv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, res, it
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {max_iter} iterations (residual {res:.3e})",
                      residual=res, iterations=max_iter)


def bicgstab(A, b, tol=1e-9, max_iter=None):
    """Jacobi-preconditioned BiCGStab for non-symmetric systems.

    Returns (x, relative_residual, iterations).
    """
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    minv = _jacobi(A)
    x = np.zeros(n)
    r = b.copy()
    r0 = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    res = np.linalg.norm(r) / bnorm
    for it in range(1, max_iter + 1):
        rho_new = r0 @ r
        if rho_new == 0.0:
            break
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = minv * p
        v = A @ phat
        alpha = rho_new / (r0 @ v)
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * phat
            return x, np.linalg.norm(b - A @ x) / bnorm, it
        shat = minv * s
        t = A @ shat
        omega = (t @ s) / (t @ t)
        x += alpha * phat + omega * shat
        r = s - omega * t
        rho = rho_new
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, res, it
        if omega == 0.0:
            break
    raise SolverError(f"BiCGStab did not converge in {it} iterations (residual {res:.3e})",
                      residual=res, iterations=it)


def solve_linear(system: SparseSystem, tol: float, max_iter: int | None = None) -> np.ndarray:
    """Solve the system to a relative residual of tol.

    Symmetric (SPD) systems go through conjugate gradients, non-symmetric
    ones through BiCGStab; both are Jacobi-preconditioned. b = 0 returns
    x = 0 without iterating.
    """
    if tol <= 0:
        raise ConfigurationError(f"tolerance must be positive, got {tol}")
    if system.symmetric:
        x, _, _ = cg(system.matrix, system.rhs, tol=tol, max_iter=max_iter)
    else:
        x, _, _ = bicgstab(system.matrix, system.rhs, tol=tol, max_iter=max_iter)
    return x
