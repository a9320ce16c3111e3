"""
Matrix-free Krylov solvers.

Both solvers precondition from the right, so the residual they monitor
is the residual of the original system ||b - A x|| / ||b||.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from wepsmw.generic import DimensionMismatch, KrylovBreakdown

logger = logging.getLogger(__name__)

Action = Callable[[np.ndarray], np.ndarray]
IterateCallback = Callable[[int, np.ndarray], None]

# Relative size of a Hessenberg subdiagonal entry that ends the Krylov space.
BREAKDOWN_TOLERANCE: float = 1e-14

# Reorthogonalize when MGS shrinks the new vector below this fraction.
_REORTHOGONALIZE: float = 0.7


@dataclass
class SolveReport:
    """
    Outcome of one linear solve.

    `history[0]` is the initial relative residual (1 for a zero start);
    `history[i]` follows iteration i.
    """

    solution: np.ndarray
    iterations: int
    history: np.ndarray
    converged: bool
    seconds: float
    status: str = "converged"
    applications: int = 0

    @property
    def residual(self) -> float:
        return float(self.history[-1])


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def _prepare(op: Action, precond: Optional[Action], rhs: np.ndarray, tol: float):
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.ndim != 1:
        raise DimensionMismatch(f"right-hand side must be a vector, got shape {rhs.shape}")
    for name, action in (("operator", op), ("preconditioner", precond)):
        shape = getattr(action, "shape", None)
        if shape is not None and tuple(shape) != (rhs.shape[0], rhs.shape[0]):
            raise DimensionMismatch(
                f"{name} has shape {tuple(shape)}, right-hand side has length {rhs.shape[0]}"
            )
    if tol < 0:
        raise ValueError(f"tol = {tol} must be non-negative")
    return rhs, (precond if precond is not None else _identity)


def _givens(a: complex, b: float):
    """
    Rotation (c, s) with [c s; -conj(s) c] [a; b] = [r; 0].
    """
    if a == 0:
        return 0.0, 1.0 + 0.0j
    d = np.hypot(abs(a), b)
    return abs(a) / d, (a / abs(a)) * b / d


def _least_squares(upper: np.ndarray, g: np.ndarray) -> np.ndarray:
    """
    Minimizer of ||upper y - g|| for the rotated Hessenberg factor.
    """
    if np.all(np.diag(upper) != 0):
        return scipy.linalg.solve_triangular(upper, g, check_finite=False)
    # exact zero pivot: the operator annihilated part of the Krylov space
    y, *_ = scipy.linalg.lstsq(upper, g, check_finite=False)
    return y


def gmres(
    op: Action,
    precond: Optional[Action],
    rhs: np.ndarray,
    tol: float = 1e-10,
    restart: int = 100,
    maxit: int = 1000,
    callback: Optional[IterateCallback] = None,
) -> SolveReport:
    """
    Restarted right-preconditioned GMRES for op(x) = rhs.

    Solves op(precond(y)) = rhs and returns x = precond(y). The Arnoldi
    basis is built with modified Gram-Schmidt and a second pass whenever
    the first one cancels most of the new vector.

    Every history entry is the true relative residual of the iterate
    after that iteration. Inside a cycle it is computed from the stored
    images op(precond(v_j)) of the basis vectors, so it needs no further
    operator application; at the end of a cycle it is recomputed from
    the assembled iterate.

    A breakdown of the Arnoldi process before the residual reaches `tol`
    raises KrylovBreakdown. Filling the whole space (n iterations in one
    cycle) ends the solve with status "exhausted".

    `callback(i, x_i)` is called with the current iterate after every
    iteration; this costs one extra preconditioner application each.
    """
    rhs, precond = _prepare(op, precond, rhs, tol)
    if restart < 1:
        raise ValueError(f"restart = {restart} must be at least 1")
    n = rhs.shape[0]
    start = time.perf_counter()

    bnorm = float(np.linalg.norm(rhs))
    x = np.zeros(n, dtype=complex)
    if bnorm == 0:
        return SolveReport(x, 0, np.zeros(1), True, time.perf_counter() - start)

    r = rhs.copy()
    beta = bnorm
    history: List[float] = [1.0]
    total = 0
    status = "maxit"
    applications = 0

    while total < maxit:
        m = min(restart, maxit - total, n)
        basis = np.zeros((n, m + 1), dtype=complex)
        images = np.zeros((n, m), dtype=complex)
        hessenberg = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        basis[:, 0] = r / beta
        g[0] = beta

        breakdown = False
        k = 0
        for j in range(m):
            w = op(precond(basis[:, j]))
            applications += 1
            images[:, j] = w
            norm_before = float(np.linalg.norm(w))
            for i in range(j + 1):
                h = np.vdot(basis[:, i], w)
                hessenberg[i, j] += h
                w -= h * basis[:, i]
            norm_after = float(np.linalg.norm(w))
            if norm_after < _REORTHOGONALIZE * norm_before:
                for i in range(j + 1):
                    h = np.vdot(basis[:, i], w)
                    hessenberg[i, j] += h
                    w -= h * basis[:, i]
                norm_after = float(np.linalg.norm(w))
            hessenberg[j + 1, j] = norm_after
            breakdown = norm_after <= BREAKDOWN_TOLERANCE * max(norm_before, np.finfo(float).tiny)
            if not breakdown:
                basis[:, j + 1] = w / norm_after

            for i in range(j):
                upper = cs[i] * hessenberg[i, j] + sn[i] * hessenberg[i + 1, j]
                hessenberg[i + 1, j] = (
                    -np.conj(sn[i]) * hessenberg[i, j] + cs[i] * hessenberg[i + 1, j]
                )
                hessenberg[i, j] = upper
            cs[j], sn[j] = _givens(hessenberg[j, j], norm_after)
            hessenberg[j, j] = cs[j] * hessenberg[j, j] + sn[j] * norm_after
            hessenberg[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]

            k = j + 1
            total += 1
            y = _least_squares(hessenberg[:k, :k], g[:k])
            residual = float(np.linalg.norm(r - images[:, :k] @ y)) / bnorm
            history.append(residual)
            logger.debug("GMRES iteration %d: residual %.3e", total, residual)

            if callback is not None:
                callback(total, x + precond(basis[:, :k] @ y))
            if residual <= tol or breakdown:
                break

        y = _least_squares(hessenberg[:k, :k], g[:k])
        x = x + precond(basis[:, :k] @ y)
        r = rhs - op(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta / bnorm

        if history[-1] <= tol:
            status = "converged"
            break
        if k == n:
            status = "exhausted"
            break
        if breakdown:
            report = SolveReport(
                x,
                total,
                np.asarray(history),
                False,
                time.perf_counter() - start,
                "breakdown",
                applications,
            )
            raise KrylovBreakdown(
                f"GMRES broke down after {total} iterations at residual "
                f"{history[-1]:.3e} > {tol:.1e}",
                report,
            )
        logger.debug("GMRES restart after %d iterations, residual %.3e", total, history[-1])

    report = SolveReport(
        x,
        total,
        np.asarray(history),
        status == "converged",
        time.perf_counter() - start,
        status,
        applications,
    )
    if not report.converged:
        logger.warning(
            "GMRES stopped (%s) after %d iterations at residual %.3e > %.1e",
            status,
            total,
            report.residual,
            tol,
        )
    return report


def bicgstab(
    op: Action,
    precond: Optional[Action],
    rhs: np.ndarray,
    tol: float = 1e-10,
    maxit: int = 1000,
) -> SolveReport:
    """
    Right-preconditioned BiCGStab for op(x) = rhs.

    The history records the true residual after every iteration. On a
    breakdown (rho or omega vanishing) the best iterate seen is returned
    with status "rho-breakdown" or "omega-breakdown".
    """
    rhs, precond = _prepare(op, precond, rhs, tol)
    n = rhs.shape[0]
    start = time.perf_counter()

    bnorm = float(np.linalg.norm(rhs))
    x = np.zeros(n, dtype=complex)
    if bnorm == 0:
        return SolveReport(x, 0, np.zeros(1), True, time.perf_counter() - start)

    r = rhs.copy()
    r_hat = rhs.copy()
    rho = alpha = omega = 1.0 + 0.0j
    v = np.zeros(n, dtype=complex)
    p = np.zeros(n, dtype=complex)
    history: List[float] = [1.0]
    best, best_residual = x, 1.0
    status = "maxit"
    applications = 0

    for iteration in range(1, maxit + 1):
        rho_next = np.vdot(r_hat, r)
        if abs(rho_next) <= BREAKDOWN_TOLERANCE * np.linalg.norm(r_hat) * np.linalg.norm(r):
            status = "rho-breakdown"
            break
        p = r + (rho_next / rho) * (alpha / omega) * (p - omega * v)
        rho = rho_next
        p_hat = precond(p)
        v = op(p_hat)
        applications += 1
        denominator = np.vdot(r_hat, v)
        if denominator == 0:
            status = "rho-breakdown"
            break
        alpha = rho / denominator
        s = r - alpha * v

        if np.linalg.norm(s) / bnorm <= tol:
            x = x + alpha * p_hat
            omega_step = False
        else:
            s_hat = precond(s)
            t = op(s_hat)
            applications += 1
            tt = np.vdot(t, t).real
            if tt == 0:
                status = "omega-breakdown"
                break
            omega = np.vdot(t, s) / tt
            x = x + alpha * p_hat + omega * s_hat
            r = s - omega * t
            omega_step = True

        residual = float(np.linalg.norm(rhs - op(x))) / bnorm
        history.append(residual)
        logger.debug("BiCGStab iteration %d: residual %.3e", iteration, residual)
        if residual < best_residual:
            best, best_residual = x, residual
        if residual <= tol:
            status = "converged"
            break
        if not omega_step:
            r = s
        elif omega == 0:
            status = "omega-breakdown"
            break

    report = SolveReport(
        x if status == "converged" else best,
        len(history) - 1,
        np.asarray(history),
        status == "converged",
        time.perf_counter() - start,
        status,
        applications,
    )
    if not report.converged:
        logger.warning(
            "BiCGStab stopped (%s) after %d iterations at residual %.3e > %.1e",
            status,
            report.iterations,
            best_residual,
            tol,
        )
    return report
