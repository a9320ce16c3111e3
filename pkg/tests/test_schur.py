import numpy as np
import pytest
from numpy.testing import assert_allclose

from wepsmw.discretization import DiscreteProblem, vec
from wepsmw.generic import DimensionMismatch
from wepsmw.geometry import WaveguideGeometry
from wepsmw.schur import SchurAction

from .oracles import (
    dense_L,
    dense_M,
    dense_phi,
    dense_schur,
    random_complex,
    relative_error,
)

SIGMA = complex(-0.5, -0.4)


def test_schur_matches_dense(small_problem, rng):
    schur = SchurAction(small_problem, SIGMA)
    x = random_complex(rng, small_problem.n_interior)
    assert schur.shape == (small_problem.n_interior, small_problem.n_interior)
    assert relative_error(schur(x), dense_schur(small_problem, SIGMA) @ x) <= 1e-12
    assert_allclose(schur.apply_schur(x), schur(x))


def test_split_into_sylvester_and_remainder(problem9, rng):
    schur = SchurAction(problem9, SIGMA)
    x = random_complex(rng, problem9.n_z, problem9.n_x)
    kbar = problem9.kbar
    assert relative_error(
        vec(schur.kernel.apply(x)), dense_L(problem9, SIGMA, kbar) @ vec(x)
    ) <= 1e-12
    assert relative_error(
        vec(schur.apply_phi(x)), dense_phi(problem9, SIGMA, kbar) @ vec(x)
    ) <= 1e-12


@pytest.mark.parametrize("kbar", [0.0, 30.0, 200.0])
def test_kbar_moves_weight_only(problem9, rng, kbar):
    reference = SchurAction(problem9, SIGMA)
    shifted = SchurAction(problem9, SIGMA, kbar=kbar)
    x = random_complex(rng, problem9.n_interior)
    assert relative_error(shifted(x), reference(x)) <= 1e-12
    assert shifted.kbar == kbar


def test_phi_of_constant_medium_lives_on_edge_columns(rng):
    geometry = WaveguideGeometry(0.0, 1.0, 5.0, 2.0, 2.0)
    problem = DiscreteProblem(geometry, 7)
    schur = SchurAction(problem, SIGMA)
    assert problem.kbar == pytest.approx(5.0)
    y = schur.apply_phi(random_complex(rng, 7, problem.n_x))
    assert_allclose(y[:, 1:-1], 0.0, atol=1e-12)
    assert np.linalg.norm(y[:, 0]) > 0
    assert np.linalg.norm(y[:, -1]) > 0


def test_boundary_terms_read_two_columns(problem9, rng):
    schur = SchurAction(problem9, SIGMA)
    x = random_complex(rng, problem9.n_z, problem9.n_x)
    left, right = schur.boundary_terms(x)
    changed = x.copy()
    changed[:, 2:-2] = 0.0
    left2, right2 = schur.boundary_terms(changed)
    assert_allclose(left, left2)
    assert_allclose(right, right2)


def test_solve_through_schur_complement(small_problem, rng):
    schur = SchurAction(small_problem, SIGMA)
    dense = dense_schur(small_problem, SIGMA)
    r = random_complex(rng, small_problem.size)

    y = schur.solve(r, lambda rhs: np.linalg.solve(dense, rhs))
    assert relative_error(y, np.linalg.solve(dense_M(small_problem, SIGMA), r)) < 1e-9
    assert relative_error(small_problem.apply_M(SIGMA, y), r) < 1e-9


def test_reduce_rhs_of_interior_vector(problem9, rng):
    schur = SchurAction(problem9, SIGMA)
    interior = random_complex(rng, problem9.n_interior)
    r = np.concatenate([interior, np.zeros(2 * problem9.n_z)])
    reduced, r_ext = schur.reduce_rhs(r)
    assert_allclose(reduced, interior)
    assert_allclose(r_ext, 0.0)


def test_back_substitute_satisfies_boundary_rows(problem9, rng):
    schur = SchurAction(problem9, SIGMA)
    q = random_complex(rng, problem9.n_interior)
    r_ext = random_complex(rng, 2 * problem9.n_z)
    y = schur.back_substitute(q, r_ext)
    _, bottom = problem9.split(problem9.apply_M(SIGMA, y))
    assert_allclose(bottom, r_ext, atol=1e-10)
    assert_allclose(y[: problem9.n_interior], q)


def test_shape_checks(problem9):
    schur = SchurAction(problem9, SIGMA)
    with pytest.raises(DimensionMismatch):
        schur(np.zeros(problem9.n_interior + 1))
    with pytest.raises(DimensionMismatch):
        schur.back_substitute(np.zeros(problem9.n_interior), np.zeros(problem9.n_z))
    with pytest.raises(DimensionMismatch):
        schur.apply_phi(np.zeros((problem9.n_x, problem9.n_z)))
