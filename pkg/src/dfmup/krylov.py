"""Preconditioned Krylov solvers with residual histories."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)
    precond_history: list = field(default_factory=list)


def jacobi(A):
    d = np.asarray(A.diagonal(), dtype=float)
    if np.any(d == 0):
        d = np.where(d == 0, 1.0, d)
    inv = 1.0 / d
    return lambda r: inv * r


def pcg(A, b, tol=1e-10, max_iter=None, precond=None, x0=None, raise_on_fail=True) -> KrylovResult:
    """Conjugate gradients for symmetric positive (semi-)definite A.

    Stops when ||b - A x|| <= tol ||b||.  ``precond_history`` records the
    preconditioned residual norm sqrt(r^T M^{-1} r) per iteration.
    """
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    precond = precond or (lambda r: r)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0:
        return KrylovResult(np.zeros(n), 0, 0.0, True, [0.0], [0.0])
    z = precond(r)
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / nb]
    phist = [np.sqrt(max(rz, 0.0))]
    it = 0
    while hist[-1] > tol and it < max_iter:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        hist.append(np.linalg.norm(r) / nb)
        phist.append(np.sqrt(max(rz, 0.0)))
    res = KrylovResult(x, it, hist[-1], hist[-1] <= tol, hist, phist)
    if raise_on_fail and not res.converged:
        raise SolverError(f"CG did not converge in {it} iterations (residual {hist[-1]:.3e})", hist)
    return res


def bicgstab(A, b, tol=1e-10, max_iter=None, precond=None, x0=None, raise_on_fail=True) -> KrylovResult:
    """Right-preconditioned BiCGSTAB for general nonsingular A."""
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    precond = precond or (lambda r: r)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    nb = np.linalg.norm(b)
    if nb == 0:
        return KrylovResult(np.zeros(n), 0, 0.0, True, [0.0])
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    hist = [np.linalg.norm(r) / nb]
    it = 0
    restarts = 0
    while hist[-1] > tol and it < max_iter:
        rho_new = r_hat @ r
        if abs(rho_new) < 1e-300 or omega == 0:
            # breakdown: restart from the current iterate
            if restarts > 20:
                break
            restarts += 1
            r_hat = r.copy()
            rho, alpha, omega = 1.0, 1.0, 1.0
            v[:] = 0
            p[:] = 0
            rho_new = r_hat @ r
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        ph = precond(p)
        v = A @ ph
        alpha = rho / (r_hat @ v)
        s = r - alpha * v
        if np.linalg.norm(s) / nb <= tol:
            x += alpha * ph
            r = s
            it += 1
            hist.append(np.linalg.norm(r) / nb)
            break
        sh = precond(s)
        t = A @ sh
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * ph + omega * sh
        r = s - omega * t
        it += 1
        hist.append(np.linalg.norm(r) / nb)
    # guard against drift of the recursive residual
    true_res = np.linalg.norm(b - A @ x) / nb
    hist[-1] = max(hist[-1], true_res)
    res = KrylovResult(x, it, hist[-1], hist[-1] <= tol, hist)
    if raise_on_fail and not res.converged:
        raise SolverError(f"BiCGSTAB did not converge in {it} iterations (residual {hist[-1]:.3e})", hist)
    return res
