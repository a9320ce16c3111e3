import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wepsmw.discretization import (
    DiscreteProblem,
    Side,
    apply_P,
    apply_P_inverse,
    dtn_coefficients,
    normalize_phase,
    unvec,
    vec,
)
from wepsmw.generic import (
    BranchAmbiguityWarning,
    DimensionMismatch,
    OddGridRequired,
    RightHalfPlane,
    SingularDtnMode,
)

from .oracles import (
    dense_dtn_blocks,
    dense_M,
    dense_M_prime,
    layered_geometry,
    random_complex,
    relative_error,
)

GAMMA = complex(-0.7, -0.3)


def test_default_sizes(problem9):
    assert problem9.n_x == 13
    assert problem9.p == 4
    assert problem9.size == 9 * 13 + 18
    assert problem9.K.shape == (9, 13)
    assert problem9.kbar == pytest.approx(problem9.K.mean())


def test_even_grid_is_rejected():
    with pytest.raises(OddGridRequired):
        DiscreteProblem(layered_geometry(), 8)


def test_vec_is_column_major():
    x = np.arange(6).reshape(2, 3)
    assert vec(x).tolist() == [0, 3, 1, 4, 2, 5]
    assert_allclose(unvec(vec(x), 2, 3), x)


def test_split_checks_length(problem9):
    with pytest.raises(DimensionMismatch):
        problem9.split(np.zeros(problem9.size - 1))


def test_apply_M_matches_dense(small_problem, rng):
    v = random_complex(rng, small_problem.size)
    expected = dense_M(small_problem, GAMMA) @ v
    assert relative_error(small_problem.apply_M(GAMMA, v), expected) <= 1e-12


def test_apply_M_prime_matches_dense(small_problem, rng):
    v = random_complex(rng, small_problem.size)
    assert relative_error(
        small_problem.apply_M_prime(GAMMA, v), dense_M_prime(small_problem, GAMMA) @ v
    ) <= 1e-12


def test_apply_M_prime_is_derivative(problem9, rng):
    v = random_complex(rng, problem9.size)
    h = 1e-6
    difference = (problem9.apply_M(GAMMA + h, v) - problem9.apply_M(GAMMA - h, v)) / (2 * h)
    derivative = problem9.apply_M_prime(GAMMA, v)
    assert np.linalg.norm(difference - derivative) <= 1e-6 * np.linalg.norm(derivative)


def test_apply_M_prime_needs_left_half_plane(problem9):
    with pytest.raises(RightHalfPlane):
        problem9.apply_M_prime(complex(0.2, -0.3), np.ones(problem9.size))


def test_residual_scale_bounds_operator_norm(small_problem):
    for gamma in (GAMMA, complex(-2.0, 1.5)):
        norm = np.linalg.norm(dense_M(small_problem, gamma), 1)
        assert norm <= small_problem.residual_scale(gamma) * (1 + 1e-12)


def test_relative_residual_normalizes(problem9, rng):
    v = random_complex(rng, problem9.size)
    assert problem9.relative_residual_norm(GAMMA, 5 * v) == pytest.approx(
        problem9.relative_residual_norm(GAMMA, v)
    )
    with pytest.raises(ValueError):
        problem9.relative_residual_norm(GAMMA, np.zeros(problem9.size))


def test_dtn_coefficients_square_and_derivative():
    dtn = dtn_coefficients(GAMMA, 3, 2.0, 3.0)
    assert dtn.modes.tolist() == list(range(-3, 4))
    assert_allclose(dtn.s_minus**2, -dtn.beta_minus, rtol=1e-12)
    assert_allclose(dtn.s_plus**2, -dtn.beta_plus, rtol=1e-12)

    h = 1e-7
    upper = dtn_coefficients(GAMMA + h, 3, 2.0, 3.0)
    lower = dtn_coefficients(GAMMA - h, 3, 2.0, 3.0)
    assert_allclose((upper.s_minus - lower.s_minus) / (2 * h), dtn.s_prime_minus, rtol=1e-6)
    assert_allclose((upper.s_plus - lower.s_plus) / (2 * h), dtn.s_prime_plus, rtol=1e-6)
    assert dtn.s(Side.MINUS) is dtn.s_minus
    assert dtn.s_prime(Side.PLUS) is dtn.s_prime_plus


def test_dtn_branch_cut_warns():
    # real gamma puts mode 0 on the cut
    with pytest.warns(BranchAmbiguityWarning):
        dtn = dtn_coefficients(-0.5, 2, 2.0, 2.0)
    assert dtn.s_minus[2] == pytest.approx(1j * np.sqrt(4.25))


def test_dtn_off_branch_cut_is_silent():
    with warnings.catch_warnings():
        warnings.simplefilter("error", BranchAmbiguityWarning)
        dtn_coefficients(GAMMA, 4, 2.0, 3.0)


@pytest.mark.parametrize("side", list(Side))
def test_dtn_blocks_match_fourier_form(problem9, rng, side):
    g = random_complex(rng, problem9.n_z)
    dense = dense_dtn_blocks(problem9, GAMMA)
    matrix = dense["P_minus"] if side is Side.MINUS else dense["P_plus"]
    assert_allclose(apply_P(problem9, GAMMA, side, g), matrix @ g, atol=1e-10)
    assert_allclose(
        apply_P_inverse(problem9, GAMMA, side, g), np.linalg.solve(matrix, g), atol=1e-10
    )


def test_block_inverse_round_trip(problem9, rng):
    operator = problem9.operator(GAMMA)
    ext = random_complex(rng, 2 * problem9.n_z)
    assert_allclose(operator.apply_P_block_inverse(operator.apply_P_block(ext)), ext, atol=1e-12)


def test_vanishing_dtn_mode_is_reported(problem9):
    dtn = dtn_coefficients(GAMMA, problem9.p, problem9.kappa_minus, problem9.kappa_plus)
    # shift d_0 so that mode 0 of P_- is exactly zero
    problem9.d0 = -dtn.s_minus[problem9.p]
    operator = problem9.operator(GAMMA)
    with pytest.raises(SingularDtnMode):
        operator.apply_P_inverse(Side.MINUS, np.ones(problem9.n_z))


def test_normalize_phase():
    v = np.array([1e-12, -2j, 1.0 + 1.0j])
    w = normalize_phase(v)
    assert np.linalg.norm(w) == pytest.approx(1.0)
    # the tiny leading entry does not fix the phase
    assert w[1].imag == pytest.approx(0.0, abs=1e-15)
    assert w[1].real > 0
    assert_allclose(w / w[1], v / v[1])


def test_normalize_phase_rejects_zero():
    with pytest.raises(ValueError):
        normalize_phase(np.zeros(3))
