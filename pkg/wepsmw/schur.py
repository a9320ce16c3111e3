"""
Schur-complement solve path for M(sigma).

Eliminating the boundary unknowns of M(sigma) y = r leaves the interior
system S(sigma) q = r~ with S(sigma) = Q(sigma) - C_1 P(sigma)^{-1} C_2^T.
Written as a matrix equation in X (vec(X) = q), S(sigma) becomes

    L(X) + Phi(X) = C,      L(X) = A X + X B,
    Phi(X) = (K - kbar 11^T) o X - P_-^{-1} X E - P_+^{-1} X J E J,

with A = D_zz + 2 sigma D_z + (sigma^2 + kbar) I, B = D_xx and the rank-one
E = u e_1^T, u = (d_1 e_1 + d_2 e_2) / h_x^2. The free shift kbar moves
weight between L and Phi without changing S(sigma).
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np

from wepsmw.discretization import BlockOperator, DiscreteProblem, Side, unvec, vec
from wepsmw.generic import DimensionMismatch, LinearAction
from wepsmw.spectral import SylvesterKernel, circulant_spectrum, sine_spectrum

logger = logging.getLogger(__name__)


class SchurAction(LinearAction):
    """
    Matrix-free S(sigma) for a fixed shift.

    Immutable after construction; concurrent applications are safe.
    """

    def __init__(
        self, problem: DiscreteProblem, sigma: complex, kbar: Optional[float] = None
    ) -> None:
        self.problem: DiscreteProblem = problem
        self.sigma: complex = complex(sigma)
        self.kbar: float = problem.kbar if kbar is None else float(kbar)

        a_column = (
            problem.dzz_column
            + 2.0 * self.sigma * problem.dz_column
            + (self.sigma**2 + self.kbar) * np.eye(problem.n_z)[:, 0]
        )
        self.kernel: SylvesterKernel = SylvesterKernel(
            circulant_spectrum(a_column), sine_spectrum(problem.n_x, problem.h_x)
        )
        self.k_shifted: np.ndarray = problem.K - self.kbar
        self.k_shifted.setflags(write=False)
        self.block: BlockOperator = problem.operator(self.sigma)

        self.u: np.ndarray = np.zeros(problem.n_x)
        self.u[0] += problem.d1 / problem.h_x**2
        self.u[1] += problem.d2 / problem.h_x**2
        self.u.setflags(write=False)
        self.u_flipped: np.ndarray = self.u[::-1]

    @property
    def shape(self) -> Tuple[int, int]:
        n = self.problem.n_interior
        return (n, n)

    def boundary_terms(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        The columns P_-^{-1} X u and P_+^{-1} X J u.

        X E only fills the first column and X J E J only the last one, so
        Phi touches columns {1, 2, n_x-1, n_x} of X through these terms.
        """
        left = x[:, 0] * self.u[0] + x[:, 1] * self.u[1]
        right = x[:, -1] * self.u_flipped[-1] + x[:, -2] * self.u_flipped[-2]
        return (
            self.block.apply_P_inverse(Side.MINUS, left),
            self.block.apply_P_inverse(Side.PLUS, right),
        )

    def apply_phi(self, x: np.ndarray) -> np.ndarray:
        """
        Phi(X) = (K - kbar) o X - P_-^{-1} X E - P_+^{-1} X J E J.
        """
        x = np.asarray(x, dtype=complex)
        if x.shape != self.kernel.shape:
            raise DimensionMismatch(f"expected a {self.kernel.shape} matrix, got {x.shape}")
        left, right = self.boundary_terms(x)
        y = self.k_shifted * x
        y[:, 0] -= left
        y[:, -1] -= right
        return y

    def apply_matrix(self, x: np.ndarray) -> np.ndarray:
        """
        L(X) + Phi(X).
        """
        return self.kernel.apply(x) + self.apply_phi(x)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """
        S(sigma) x.
        """
        x = self._check(x)
        problem = self.problem
        return vec(self.apply_matrix(unvec(x, problem.n_z, problem.n_x)))

    def apply_schur(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x)

    def reduce_rhs(self, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        r~ = r_int - C_1 P(sigma)^{-1} r_ext, together with r_ext.
        """
        problem = self.problem
        x, ext = problem.split(r)
        y = self.block.apply_P_block_inverse(ext)
        reduced = np.array(x, dtype=complex)
        reduced -= problem.apply_C1(y)
        return vec(reduced), np.array(ext, dtype=complex)

    def back_substitute(self, q: np.ndarray, r_ext: np.ndarray) -> np.ndarray:
        """
        [q; P(sigma)^{-1} (r_ext - C_2^T q)].
        """
        problem = self.problem
        q = self._check(q)
        r_ext = np.asarray(r_ext)
        if r_ext.shape != (2 * problem.n_z,):
            raise DimensionMismatch(
                f"expected {2 * problem.n_z} boundary values, got shape {r_ext.shape}"
            )
        x = unvec(q, problem.n_z, problem.n_x)
        ext = self.block.apply_P_block_inverse(r_ext - problem.apply_C2T(x))
        return problem.join(x, ext)

    def solve(
        self, r: np.ndarray, interior_solve: Callable[[np.ndarray], np.ndarray]
    ) -> np.ndarray:
        """
        M(sigma)^{-1} r, with `interior_solve` handling S(sigma) q = r~.
        """
        reduced, r_ext = self.reduce_rhs(r)
        return self.back_substitute(interior_solve(reduced), r_ext)
