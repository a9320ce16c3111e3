import pathlib

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wepsmw import resinv as resinv_module
from wepsmw.discretization import DiscreteProblem
from wepsmw.generic import (
    ConfigError,
    LeftHalfPlaneViolation,
    NewtonStall,
    NoConvergence,
    NonlinearEigenproblem,
    RightHalfPlane,
)
from wepsmw.resinv import (
    EigResult,
    InnerPolicy,
    IterationRecord,
    ResinvSettings,
    default_start_vector,
    inner_tolerance,
    rayleigh_newton,
    resinv,
)
from wepsmw.schur import SchurAction
from wepsmw.smw import SmwPreconditioner, build_coarse_grid

from .oracles import QuadraticProblem, ShiftedMatrixProblem, synthetic_geometry

SIGMA = complex(-0.5, -0.4)

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


class FlatProblem(NonlinearEigenproblem):
    """M(gamma) = I, so the Rayleigh functional has no slope."""

    size = 2

    def apply_M(self, gamma, v):
        return np.asarray(v, dtype=complex)

    def apply_M_prime(self, gamma, v):
        return np.zeros_like(v, dtype=complex)

    def residual_scale(self, gamma):
        return 1.0


def test_newton_on_linear_problem():
    problem = ShiftedMatrixProblem(np.diag([-1.0, -2.0, -3.0]))
    v = np.array([0.0, 1.0, 0.0])
    gamma = rayleigh_newton(problem, v, complex(-0.5, -0.1))
    assert gamma == pytest.approx(-2.0, abs=1e-14)
    assert len(problem.calls) == 2


def test_newton_on_quadratic_problem():
    problem = QuadraticProblem(np.diag([-4.0, -9.0]))
    v = np.array([1.0, 0.0])
    gamma = rayleigh_newton(problem, v, complex(-1.5, 0.2), tol=1e-15)
    assert gamma == pytest.approx(-2.0, abs=1e-12)


def test_newton_leaving_left_half_plane():
    # the only root lies at +0.5
    problem = ShiftedMatrixProblem(np.diag([0.5]))
    with pytest.raises(LeftHalfPlaneViolation):
        rayleigh_newton(problem, np.ones(1), complex(-0.3, 0.0))
    with pytest.raises(LeftHalfPlaneViolation):
        rayleigh_newton(problem, np.ones(1), complex(0.1, 0.0))


def test_newton_damps_steps_leaving_left_half_plane():
    # roots at +-(0.2 + 2i); the full first step lands at 1.77 - 2.62i
    root = complex(-0.2, -2.0)
    problem = QuadraticProblem(np.diag([-(root**2)]))
    start = complex(-0.5, -0.4)
    full_step = start - (start**2 - root**2) / (2 * start)
    assert full_step.real > 0
    gamma = rayleigh_newton(problem, np.ones(1), start)
    assert gamma == pytest.approx(root, abs=1e-12)
    assert all(call.real < 0 for call in problem.calls)


def test_newton_zero_slope():
    with pytest.raises(NewtonStall):
        rayleigh_newton(FlatProblem(), np.array([1.0, 0.0]), complex(-1.0, 0.0))


def test_newton_out_of_steps():
    problem = QuadraticProblem(np.diag([-4.0]))
    with pytest.raises(NewtonStall):
        rayleigh_newton(problem, np.ones(1), complex(-10.0, 0.0), maxit=1)


def test_fixed_inner_tolerance():
    assert inner_tolerance(InnerPolicy.FIXED, -1.0, SIGMA, fixed_tol=1e-9) == 1e-9


@pytest.mark.parametrize(
    "distance, expected", [(1.0, 1e-2), (1e-2, 1e-3), (1e-3, 1e-4), (1e-14, 1e-13)]
)
def test_adaptive_inner_tolerance(distance, expected):
    assert inner_tolerance("adaptive", SIGMA + distance, SIGMA) == pytest.approx(expected)


def test_settings_reject_unknown_solver():
    with pytest.raises(ConfigError):
        ResinvSettings(solver="cg")


def test_eig_result_summaries():
    history = [IterationRecord(i, complex(-1, -1), r) for i, r in enumerate([1e-2, 1e-3, 1e-4])]
    result = EigResult(complex(-1.0, -1.0), np.ones(3), complex(-1.0, -0.5), True, history)
    assert result.residual == 1e-4
    assert result.residuals == [1e-2, 1e-3, 1e-4]
    assert result.predicted_factor == pytest.approx(0.5)
    assert result.convergence_factor() == pytest.approx(0.1)
    assert result.convergence_factor(window=1) == pytest.approx(0.1)
    assert EigResult(0j, np.ones(1), SIGMA, False).convergence_factor() is None


@pytest.fixture
def problem9_synthetic():
    return DiscreteProblem(synthetic_geometry(), 9)


def test_default_start_vector(problem9_synthetic):
    problem = problem9_synthetic
    schur = SchurAction(problem, SIGMA)
    v = default_start_vector(schur)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    interior, ext = problem.split(v)
    assert_allclose(interior, interior[0, 0])
    assert interior[0, 0].real > 0
    _, bottom = problem.split(problem.apply_M(SIGMA, v))
    assert np.linalg.norm(bottom) <= 1e-12 * problem.residual_scale(SIGMA)
    assert np.linalg.norm(ext) > 0


def test_shift_must_be_in_left_half_plane(problem9_synthetic):
    with pytest.raises(RightHalfPlane):
        resinv(problem9_synthetic, complex(0.0, -0.4))


def test_preconditioner_for_other_shift(problem9_synthetic):
    problem = problem9_synthetic
    schur = SchurAction(problem, complex(-0.6, -0.4))
    preconditioner = SmwPreconditioner(schur, build_coarse_grid(problem.n_x, problem.n_z, 3))
    with pytest.raises(ConfigError):
        resinv(problem, SIGMA, preconditioner=preconditioner)


def test_outer_loop_bookkeeping(problem9_synthetic, monkeypatch):
    problem = problem9_synthetic
    frozen = SIGMA + 0.05
    monkeypatch.setattr(resinv_module, "rayleigh_newton", lambda *args: frozen)
    settings = ResinvSettings(coarse_n_z=3)

    with pytest.raises(NoConvergence) as error:
        resinv(
            problem,
            SIGMA,
            outer_tol=1e-300,
            inner_policy=InnerPolicy.ADAPTIVE,
            max_outer=3,
            settings=settings,
        )
    result = error.value.result
    assert not result.converged
    assert len(result.history) == 3
    assert [record.iteration for record in result.history] == [1, 2, 3]
    assert result.gamma == frozen
    for record in result.history:
        assert record.gamma == frozen
        assert record.inner_tolerance == pytest.approx(0.005)
        assert record.inner_iterations > 0
        assert record.error == 0.0
        assert record.seconds >= record.inner_seconds
    assert np.linalg.norm(result.v) == pytest.approx(1.0)
    best = min(result.residuals)
    assert problem.relative_residual_norm(result.gamma, result.v) == pytest.approx(best)


def test_rejected_start_vector_is_refined(problem9_synthetic, monkeypatch):
    problem = problem9_synthetic
    frozen = SIGMA + 0.05
    vectors = []

    def newton(_problem, v, *args):
        vectors.append(v)
        if len(vectors) == 1:
            raise LeftHalfPlaneViolation("first update rejected")
        return frozen

    monkeypatch.setattr(resinv_module, "rayleigh_newton", newton)
    settings = ResinvSettings(coarse_n_z=3, start_sweeps=0)
    v0 = np.ones(problem.size, dtype=complex)
    with pytest.raises(NoConvergence) as error:
        resinv(problem, SIGMA, v0=v0, outer_tol=1e-300, max_outer=1, settings=settings)
    assert len(vectors) == 2
    assert error.value.result.history[0].gamma == frozen
    swept = resinv_module.inverse_iteration_sweep(
        SchurAction(problem, SIGMA),
        SmwPreconditioner(SchurAction(problem, SIGMA), build_coarse_grid(13, 9, 3)),
        vectors[0],
        settings,
    )
    assert_allclose(vectors[1], swept, atol=1e-10)


def test_rejected_start_vector_gives_up(problem9_synthetic, monkeypatch):
    calls = []

    def newton(*args):
        calls.append(args)
        raise LeftHalfPlaneViolation("always rejected")

    monkeypatch.setattr(resinv_module, "rayleigh_newton", newton)
    settings = ResinvSettings(coarse_n_z=3, start_sweeps=1, rescue_sweeps=2)
    with pytest.raises(LeftHalfPlaneViolation):
        resinv(problem9_synthetic, SIGMA, settings=settings)
    assert len(calls) == 3


def test_inverse_iteration_sweep(problem9_synthetic, rng):
    problem = problem9_synthetic
    schur = SchurAction(problem, SIGMA)
    preconditioner = SmwPreconditioner(schur, build_coarse_grid(13, 9, 3))
    v = rng.standard_normal(problem.size) + 1j * rng.standard_normal(problem.size)
    settings = ResinvSettings(sweep_tol=1e-12)
    w = resinv_module.inverse_iteration_sweep(schur, preconditioner, v, settings)
    assert np.linalg.norm(w) == pytest.approx(1.0)
    image = problem.apply_M(SIGMA, w)
    # M(sigma) w is parallel to v
    cosine = abs(np.vdot(image, v)) / (np.linalg.norm(image) * np.linalg.norm(v))
    assert cosine == pytest.approx(1.0, abs=1e-9)


def test_start_in_right_half_plane(problem9_synthetic):
    with pytest.raises(RightHalfPlane):
        resinv(problem9_synthetic, SIGMA, gamma0=complex(0.1, -0.4))


@pytest.mark.slow
@pytest.mark.parametrize("solver", ["gmres", "bicgstab"])
def test_synthetic_eigenpair(solver):
    problem = DiscreteProblem(synthetic_geometry(), 31)
    settings = ResinvSettings(solver=solver, coarse_n_z=7)
    result = resinv(
        problem,
        SIGMA,
        outer_tol=1e-10,
        inner_policy=InnerPolicy.ADAPTIVE,
        max_outer=60,
        settings=settings,
    )
    assert result.converged
    assert result.gamma.real < 0
    assert problem.relative_residual_norm(result.gamma, result.v) <= 1e-10
    factor = result.convergence_factor()
    assert result.predicted_factor / 10 <= factor <= 10 * result.predicted_factor


@pytest.mark.slow
@pytest.mark.benchmark
@pytest.mark.parametrize("n_z, restart", [(945, 100), (2835, 40)])
def test_benchmark_eigenvalue(n_z, restart):
    from wepsmw._bench.config import load_config

    config = load_config(
        str(CONFIGS / "benchmark.ini"),
        [f"discretization.n_z={n_z}", "preconditioner.n_z=21", f"solver.restart={restart}"],
    )
    problem = config.problem()
    result = resinv(
        problem,
        config.sigma,
        outer_tol=1e-10,
        inner_policy=InnerPolicy.ADAPTIVE,
        max_outer=config.max_outer,
        settings=config.settings(),
    )
    assert result.converged
    assert abs(result.gamma - complex(-0.523, -0.375)) < 5e-2
    assert problem.relative_residual_norm(result.gamma, result.v) <= 1e-10
    factor = result.convergence_factor()
    assert result.predicted_factor / 10 <= factor <= 10 * result.predicted_factor
