"""
Residual inverse iteration for the waveguide eigenvalue problem.

With a fixed shift sigma each outer step

    1. updates gamma by solving v^H M(gamma) v = 0 with Newton's method,
    2. forms the residual r = M(gamma) v,
    3. solves M(sigma) dv = r through the Schur complement, with the inner
       system S(sigma) q = r~ handled by a Krylov method preconditioned
       with the SMW preconditioner,
    4. sets v = normalize(v - dv).

The iteration converges linearly with a factor of the order |gamma - sigma|.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np

from wepsmw._util.filter import convergence_factor
from wepsmw.discretization import DiscreteProblem, normalize_phase
from wepsmw.generic import (
    ConfigError,
    LeftHalfPlaneViolation,
    NewtonStall,
    NoConvergence,
    NonlinearEigenproblem,
    RightHalfPlane,
)
from wepsmw.krylov import SolveReport, bicgstab, gmres
from wepsmw.schur import SchurAction
from wepsmw.smw import SmwPreconditioner, build_coarse_grid

logger = logging.getLogger(__name__)

# Step halvings tried before a Newton update is given up.
_MAX_HALVINGS: int = 30


class InnerPolicy(Enum):
    """
    How the tolerance of the inner Schur solve is chosen.
    """

    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass
class ResinvSettings:
    """
    Knobs of the outer iteration and its inner solves.

    `start_sweeps` inverse iteration sweeps v <- M(sigma)^{-1} v refine the
    default start vector. Up to `rescue_sweeps` more are spent on any start
    vector whose first Rayleigh update leaves the left half-plane.
    """

    solver: str = "gmres"
    restart: int = 100
    maxit: int = 1000
    inner_tol: float = 1e-12
    inner_c: float = 0.1
    inner_min: float = 1e-13
    inner_max: float = 1e-2
    newton_tol: float = 1e-14
    newton_maxit: int = 50
    start_sweeps: int = 2
    rescue_sweeps: int = 4
    sweep_tol: float = 1e-6
    coarse_n_z: int = 21
    boundary_refinement: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        if self.solver not in ("gmres", "bicgstab"):
            raise ConfigError(f"unknown inner solver {self.solver!r}")
        if self.start_sweeps < 0 or self.rescue_sweeps < 0:
            raise ConfigError("start_sweeps and rescue_sweeps must be non-negative")


@dataclass
class IterationRecord:
    """
    One outer iteration. `residual` belongs to the iterate entering it.
    """

    iteration: int
    gamma: complex
    residual: float
    inner_iterations: int = 0
    inner_tolerance: float = 0.0
    inner_status: str = ""
    newton_seconds: float = 0.0
    inner_seconds: float = 0.0
    seconds: float = 0.0
    error: float = float("nan")


@dataclass
class EigResult:
    """
    Approximate eigenpair and the history of the iteration producing it.
    """

    gamma: complex
    v: np.ndarray
    sigma: complex
    converged: bool
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def residual(self) -> float:
        return self.history[-1].residual if self.history else float("nan")

    @property
    def residuals(self) -> List[float]:
        return [record.residual for record in self.history]

    @property
    def predicted_factor(self) -> float:
        return abs(self.gamma - self.sigma)

    def convergence_factor(self, window: int = 0) -> Optional[float]:
        """
        Observed linear convergence factor of the outer residuals.
        """
        return convergence_factor(self.residuals, window)


def _rayleigh(problem: NonlinearEigenproblem, v: np.ndarray, gamma: complex) -> complex:
    return complex(np.vdot(v, problem.apply_M(gamma, v)))


def rayleigh_newton(
    problem: NonlinearEigenproblem,
    v: np.ndarray,
    gamma_start: complex,
    tol: float = 1e-14,
    maxit: int = 50,
) -> complex:
    """
    Damped Newton's method for the Rayleigh functional f(gamma) = v^H M(gamma) v.

    Stops once |f(gamma)| <= tol * residual_scale(gamma). A step is halved
    until the new iterate lies in the open left half-plane and |f| has
    decreased. LeftHalfPlaneViolation is raised when the start lies outside
    the half-plane, or when the iteration fails while full steps were
    still leaving it; any other failure raises NewtonStall.
    """
    gamma = complex(gamma_start)
    if gamma.real >= 0:
        raise LeftHalfPlaneViolation(
            f"Newton start {gamma} is not in the open left half-plane"
        )
    f = _rayleigh(problem, v, gamma)
    blocked = False
    for step in range(maxit + 1):
        if abs(f) <= tol * problem.residual_scale(gamma):
            logger.debug("Newton converged in %d steps: gamma=%s", step, gamma)
            return gamma
        if step == maxit:
            break
        slope = np.vdot(v, problem.apply_M_prime(gamma, v))
        if slope == 0:
            raise NewtonStall(f"v^H M'(gamma) v vanishes at gamma = {gamma}")
        delta = f / slope
        blocked = (gamma - delta).real >= 0
        damping = 1.0
        for _ in range(_MAX_HALVINGS + 1):
            candidate = gamma - damping * delta
            if candidate.real < 0:
                f_candidate = _rayleigh(problem, v, candidate)
                if abs(f_candidate) < abs(f):
                    break
            damping *= 0.5
        else:
            error = LeftHalfPlaneViolation if blocked else NewtonStall
            raise error(
                f"no acceptable Newton step from gamma = {gamma} after {step} steps "
                f"(full step to {gamma - delta})"
            )
        if damping < 1.0:
            logger.debug("Newton step %d damped by %g", step + 1, damping)
        gamma, f = candidate, f_candidate
    if blocked:
        raise LeftHalfPlaneViolation(
            f"Newton steps keep leaving the open left half-plane (last gamma = {gamma})"
        )
    raise NewtonStall(f"Newton did not converge in {maxit} steps (last gamma = {gamma})")


def inner_tolerance(
    policy: InnerPolicy,
    gamma_next: complex,
    sigma: complex,
    fixed_tol: float = 1e-12,
    c: float = 0.1,
    tau_min: float = 1e-13,
    tau_max: float = 1e-2,
) -> float:
    """
    Tolerance of the inner solve.

    The adaptive policy follows the outer convergence factor |gamma - sigma|.
    """
    policy = InnerPolicy(policy)
    if policy is InnerPolicy.FIXED:
        return fixed_tol
    return float(np.clip(c * abs(gamma_next - sigma), tau_min, tau_max))


def default_start_vector(schur: SchurAction) -> np.ndarray:
    """
    Constant interior with the boundary block consistent with it.
    """
    problem = schur.problem
    ones = np.ones(problem.n_interior, dtype=complex)
    return normalize_phase(schur.back_substitute(ones, np.zeros(2 * problem.n_z, dtype=complex)))


def _solve_inner(
    schur: SchurAction,
    preconditioner: SmwPreconditioner,
    rhs: np.ndarray,
    tol: float,
    settings: ResinvSettings,
) -> SolveReport:
    if settings.solver == "bicgstab":
        return bicgstab(schur, preconditioner, rhs, tol=tol, maxit=settings.maxit)
    return gmres(
        schur, preconditioner, rhs, tol=tol, restart=settings.restart, maxit=settings.maxit
    )


def inverse_iteration_sweep(
    schur: SchurAction,
    preconditioner: SmwPreconditioner,
    v: np.ndarray,
    settings: ResinvSettings,
) -> np.ndarray:
    """
    normalize(M(sigma)^{-1} v), the interior system solved to `settings.sweep_tol`.
    """

    def interior_solve(rhs: np.ndarray) -> np.ndarray:
        return _solve_inner(schur, preconditioner, rhs, settings.sweep_tol, settings).solution

    return normalize_phase(schur.solve(v, interior_solve))


def _first_update(
    problem: DiscreteProblem,
    preconditioner: SmwPreconditioner,
    v: np.ndarray,
    gamma: complex,
    settings: ResinvSettings,
):
    for sweep in range(settings.rescue_sweeps + 1):
        try:
            return v, rayleigh_newton(
                problem, v, gamma, settings.newton_tol, settings.newton_maxit
            )
        except LeftHalfPlaneViolation as error:
            if sweep == settings.rescue_sweeps:
                raise
            logger.info("Start vector rejected (%s), inverse iteration sweep %d", error, sweep + 1)
            v = inverse_iteration_sweep(preconditioner.schur, preconditioner, v, settings)


def resinv(
    problem: DiscreteProblem,
    sigma: complex,
    gamma0: Optional[complex] = None,
    v0: Optional[np.ndarray] = None,
    outer_tol: float = 1e-10,
    inner_policy: InnerPolicy = InnerPolicy.FIXED,
    max_outer: int = 50,
    preconditioner: Optional[SmwPreconditioner] = None,
    settings: Optional[ResinvSettings] = None,
) -> EigResult:
    """
    Residual inverse iteration with shift `sigma`.

    `gamma0` defaults to sigma and `v0` to `default_start_vector` refined
    by `settings.start_sweeps` inverse iteration sweeps. A
    preconditioner built for the same shift may be passed in; otherwise
    one is built from `settings`. Raises NoConvergence, carrying the best
    iterate, if `max_outer` iterations do not reach `outer_tol`.
    """
    settings = settings if settings is not None else ResinvSettings()
    sigma = complex(sigma)
    if sigma.real >= 0:
        raise RightHalfPlane(f"shift sigma = {sigma} must lie in the open left half-plane")
    inner_policy = InnerPolicy(inner_policy)

    if preconditioner is None:
        schur = SchurAction(problem, sigma)
        grid = build_coarse_grid(
            problem.n_x, problem.n_z, settings.coarse_n_z, settings.boundary_refinement
        )
        preconditioner = SmwPreconditioner(schur, grid, settings.workers)
    else:
        schur = preconditioner.schur
        if schur.problem is not problem or schur.sigma != sigma:
            raise ConfigError(
                f"preconditioner was built for sigma = {schur.sigma} on another problem"
            )

    if v0 is None:
        v = default_start_vector(schur)
        for _ in range(settings.start_sweeps):
            v = inverse_iteration_sweep(schur, preconditioner, v, settings)
    else:
        v = normalize_phase(v0)
    gamma = sigma if gamma0 is None else complex(gamma0)
    if gamma.real >= 0:
        raise RightHalfPlane(
            f"start value gamma0 = {gamma} must lie in the open left half-plane"
        )

    history: List[IterationRecord] = []
    best = (np.inf, gamma, v)
    converged = False
    for iteration in range(1, max_outer + 1):
        start = time.perf_counter()
        if iteration == 1:
            v, gamma = _first_update(problem, preconditioner, v, gamma, settings)
        else:
            gamma = rayleigh_newton(
                problem, v, gamma, settings.newton_tol, settings.newton_maxit
            )
        newton_seconds = time.perf_counter() - start

        r = problem.apply_M(gamma, v)
        residual = float(np.linalg.norm(r)) / problem.residual_scale(gamma)
        record = IterationRecord(iteration, gamma, residual, newton_seconds=newton_seconds)
        history.append(record)
        if residual < best[0]:
            best = (residual, gamma, v)
        if residual <= outer_tol:
            record.seconds = time.perf_counter() - start
            converged = True
            logger.info(
                "Outer iteration %d: gamma=%s residual=%.3e (converged)",
                iteration,
                gamma,
                residual,
            )
            break

        tau = inner_tolerance(
            inner_policy,
            gamma,
            sigma,
            settings.inner_tol,
            settings.inner_c,
            settings.inner_min,
            settings.inner_max,
        )
        inner_start = time.perf_counter()
        reduced, r_ext = schur.reduce_rhs(r)
        report = _solve_inner(schur, preconditioner, reduced, tau, settings)
        dv = schur.back_substitute(report.solution, r_ext)
        v = normalize_phase(v - dv)

        record.inner_iterations = report.iterations
        record.inner_tolerance = tau
        record.inner_status = report.status
        record.inner_seconds = time.perf_counter() - inner_start
        record.seconds = time.perf_counter() - start
        logger.info(
            "Outer iteration %d: gamma=%s residual=%.3e inner=%d (tol %.1e)",
            iteration,
            gamma,
            residual,
            report.iterations,
            tau,
        )

    if converged:
        result = EigResult(gamma, v, sigma, True, history)
    else:
        _, best_gamma, best_v = best
        result = EigResult(best_gamma, best_v, sigma, False, history)
    for record in history:
        record.error = abs(record.gamma - result.gamma)
    if not converged:
        raise NoConvergence(
            f"residual inverse iteration stopped after {max_outer} iterations "
            f"at residual {min(result.residuals):.3e} > {outer_tol:.1e}",
            result,
        )
    return result
