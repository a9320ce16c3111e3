"""
Finite-difference discretization of the waveguide eigenvalue problem.

A uniform grid with n_x points in x and n_z = 2p + 1 points in z turns the
PDE into the nonlinear eigenvalue problem M(gamma) v = 0 with

    M(gamma) = [ Q(gamma)  C_1      ]      Q(gamma) = A_0 + gamma A_1 + gamma^2 A_2
               [ C_2^T     P(gamma) ]

acting on v = [vec(X); v_-; v_+], where X (n_z x n_x) holds the interior
unknowns column by column and v_-, v_+ (n_z each) the boundary values at
x_- and x_+. P(gamma) holds the truncated Dirichlet-to-Neumann maps. No
matrix is ever stored: Q acts through the matrix-equation form

    Q(gamma) vec(X) = vec(D_zz X + 2 gamma D_z X + gamma^2 X + X D_xx + K o X)

and the DtN blocks through FFTs.
"""

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.fft

from wepsmw.generic import (
    BranchAmbiguityWarning,
    ConfigError,
    DimensionMismatch,
    NonlinearEigenproblem,
    OddGridRequired,
    RightHalfPlane,
    SingularDtnMode,
)
from wepsmw.geometry import WaveguideGeometry, sample_wavenumber
from wepsmw.spectral import CirculantSpectrum

logger = logging.getLogger(__name__)

BRANCH_TOLERANCE: float = 1e-14
SINGULAR_MODE_TOLERANCE: float = 1e-14


class Side(Enum):
    """
    Which end of the waveguide a boundary block belongs to.
    """

    MINUS = 1
    PLUS = 2


def vec(x: np.ndarray) -> np.ndarray:
    """Stack the columns of `x` into one vector."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(x: np.ndarray, n_z: int, n_x: int) -> np.ndarray:
    """Inverse of `vec` for an n_z x n_x matrix."""
    return np.asarray(x).reshape((n_z, n_x), order="F")


@dataclass(frozen=True)
class DtnCoefficients:
    """
    Fourier-mode coefficients of both DtN maps at one evaluation point.

    Arrays are indexed by the mode k = -p, ..., p in increasing order.
    """

    gamma: complex
    p: int
    modes: np.ndarray
    beta_minus: np.ndarray
    beta_plus: np.ndarray
    s_minus: np.ndarray
    s_plus: np.ndarray
    s_prime_minus: np.ndarray
    s_prime_plus: np.ndarray

    def s(self, side: Side) -> np.ndarray:
        return self.s_minus if side is Side.MINUS else self.s_plus

    def s_prime(self, side: Side) -> np.ndarray:
        return self.s_prime_minus if side is Side.MINUS else self.s_prime_plus


def _dtn_side(
    gamma: complex, modes: np.ndarray, kappa: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = gamma + 2j * np.pi * modes
    beta = mu**2 + kappa**2
    if np.any(np.abs(beta.imag) < BRANCH_TOLERANCE):
        warnings.warn(
            f"DtN coefficient evaluated on its branch cut at gamma = {gamma} "
            f"(kappa = {kappa}); using sign(0) = +1",
            BranchAmbiguityWarning,
            stacklevel=3,
        )
    sign = np.where(beta.imag >= 0, 1.0, -1.0)
    root = np.sqrt(beta)
    return beta, sign * 1j * root, sign * 1j * mu / root


def dtn_coefficients(
    gamma: complex, p: int, kappa_minus: float, kappa_plus: float
) -> DtnCoefficients:
    """
    Evaluate s_{+-,k}(gamma) and their gamma-derivatives for k = -p..p.

    s = sign(Im beta) i sqrt(beta), beta = (gamma + 2 pi i k)^2 + kappa^2,
    with the principal square root and sign(0) taken as +1.
    """
    gamma = complex(gamma)
    modes = np.arange(-p, p + 1)
    beta_m, s_m, sp_m = _dtn_side(gamma, modes, kappa_minus)
    beta_p, s_p, sp_p = _dtn_side(gamma, modes, kappa_plus)
    return DtnCoefficients(gamma, p, modes, beta_m, beta_p, s_m, s_p, sp_m, sp_p)


class DiscreteProblem(NonlinearEigenproblem):
    """
    The discretized waveguide problem on an n_z x n_x grid.

    Immutable after construction; all operator actions are thread safe.
    """

    def __init__(
        self,
        geometry: WaveguideGeometry,
        n_z: int,
        n_x: Optional[int] = None,
        kbar: Optional[float] = None,
    ) -> None:
        if n_z % 2 == 0:
            raise OddGridRequired(f"n_z = {n_z} must be odd (n_z = 2p + 1)")
        if n_x is None:
            n_x = n_z + 4
        if n_x < 2 or n_z < 1:
            raise ConfigError(f"grid n_z = {n_z}, n_x = {n_x} is too small")

        self.geometry: WaveguideGeometry = geometry
        self.n_z: int = n_z
        self.n_x: int = n_x
        self.p: int = (n_z - 1) // 2
        self.h_x: float = geometry.width / (n_x + 1)
        self.h_z: float = 1.0 / n_z
        self.kappa_minus: float = geometry.kappa_minus
        self.kappa_plus: float = geometry.kappa_plus

        self.K: np.ndarray = sample_wavenumber(geometry, n_x, n_z)
        self.K.setflags(write=False)
        self.kbar: float = float(np.mean(self.K)) if kbar is None else float(kbar)

        self.d0: float = -3.0 / (2.0 * self.h_x)
        self.d1: float = 2.0 / self.h_x
        self.d2: float = -1.0 / (2.0 * self.h_x)

        self.dzz_column: np.ndarray = np.zeros(n_z)
        self.dzz_column[0] -= 2.0
        self.dzz_column[1 % n_z] += 1.0
        self.dzz_column[-1] += 1.0
        self.dzz_column /= self.h_z**2

        self.dz_column: np.ndarray = np.zeros(n_z)
        self.dz_column[1 % n_z] -= 1.0
        self.dz_column[-1] += 1.0
        self.dz_column /= 2.0 * self.h_z

        self._norms = self._operator_norms()
        logger.debug(
            "Discretized waveguide: n_z=%d n_x=%d h_x=%.3e kbar=%.6g",
            n_z,
            n_x,
            self.h_x,
            self.kbar,
        )

    @property
    def n_interior(self) -> int:
        return self.n_x * self.n_z

    @property
    def size(self) -> int:
        return self.n_x * self.n_z + 2 * self.n_z

    def _operator_norms(self) -> Tuple[float, float, float, float]:
        """
        1-norms of A_0, A_1, C_1 and C_2^T from stencil column sums.
        """
        hx2 = self.h_x**2
        x_neighbours = np.full(self.n_x, 2.0)
        x_neighbours[0] -= 1.0
        x_neighbours[-1] -= 1.0
        diagonal = -2.0 / hx2 + self.dzz_column[0] + self.K
        off_diagonal = x_neighbours / hx2 + np.sum(np.abs(self.dzz_column[1:]))
        a0 = float(np.max(np.abs(diagonal) + off_diagonal[np.newaxis, :]))

        a1 = 2.0 * float(np.sum(np.abs(self.dz_column)))
        c1 = 1.0 / hx2

        columns = np.zeros(self.n_x)
        columns[0] += abs(self.d1)
        columns[1] += abs(self.d2)
        columns[-1] += abs(self.d1)
        columns[-2] += abs(self.d2)
        c2t = float(np.max(columns))
        return a0, a1, c1, c2t

    def residual_scale(self, gamma: complex) -> float:
        """
        Denominator of the relative residual norm at `gamma`.

        sum_k |gamma|^k ||A_k||_1 + ||C_1||_1 + ||C_2^T||_1 + 2|d_0|
        + sum_k (|s_{+,k}| + |s_{-,k}|).
        """
        a0, a1, c1, c2t = self._norms
        g = abs(gamma)
        dtn = dtn_coefficients(gamma, self.p, self.kappa_minus, self.kappa_plus)
        return float(
            a0
            + g * a1
            + g**2
            + c1
            + c2t
            + 2.0 * abs(self.d0)
            + np.sum(np.abs(dtn.s_plus))
            + np.sum(np.abs(dtn.s_minus))
        )

    def split(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Split a full vector into the interior matrix X and the 2 n_z boundary values.
        """
        v = np.asarray(v)
        if v.shape != (self.size,):
            raise DimensionMismatch(
                f"expected a vector of length {self.size}, got shape {v.shape}"
            )
        return unvec(v[: self.n_interior], self.n_z, self.n_x), v[self.n_interior :]

    def join(self, x: np.ndarray, ext: np.ndarray) -> np.ndarray:
        """
        Inverse of `split`.
        """
        return np.concatenate([vec(x), ext])

    def dzz(self, x: np.ndarray) -> np.ndarray:
        """D_zz X (periodic second difference along z)."""
        return (np.roll(x, 1, axis=0) - 2.0 * x + np.roll(x, -1, axis=0)) / self.h_z**2

    def dz(self, x: np.ndarray) -> np.ndarray:
        """
        D_z X (periodic central difference along z).

        This is +d/dz, (x_{k+1} - x_{k-1}) / (2 h_z), matching the DtN
        wavenumbers gamma + 2 pi i k.
        """
        return (np.roll(x, -1, axis=0) - np.roll(x, 1, axis=0)) / (2.0 * self.h_z)

    def dxx(self, x: np.ndarray) -> np.ndarray:
        """X D_xx (Dirichlet second difference along x)."""
        y = -2.0 * x
        y[:, 1:] += x[:, :-1]
        y[:, :-1] += x[:, 1:]
        return y / self.h_x**2

    def apply_Q(self, gamma: complex, x: np.ndarray) -> np.ndarray:
        """
        Q(gamma) acting on the interior matrix X.
        """
        x = np.asarray(x, dtype=complex)
        return (
            self.dzz(x)
            + 2.0 * gamma * self.dz(x)
            + gamma**2 * x
            + self.dxx(x)
            + self.K * x
        )

    def apply_C1(self, ext: np.ndarray) -> np.ndarray:
        """
        C_1 acting on boundary values, returned as an n_z x n_x matrix.
        """
        y = np.zeros((self.n_z, self.n_x), dtype=complex)
        y[:, 0] += ext[: self.n_z] / self.h_x**2
        y[:, -1] += ext[self.n_z :] / self.h_x**2
        return y

    def apply_C2T(self, x: np.ndarray) -> np.ndarray:
        """
        C_2^T acting on the interior matrix X (one-sided x-derivative stencils).
        """
        minus = self.d1 * x[:, 0] + self.d2 * x[:, 1]
        plus = self.d1 * x[:, -1] + self.d2 * x[:, -2]
        return np.concatenate([minus, plus])

    def operator(self, gamma: complex) -> "BlockOperator":
        """
        Matrix-free M(gamma) and friends at a fixed evaluation point.
        """
        return BlockOperator(self, gamma)

    def apply_M(self, gamma: complex, v: np.ndarray) -> np.ndarray:
        return self.operator(gamma).apply_M(v)

    def apply_M_prime(self, gamma: complex, v: np.ndarray) -> np.ndarray:
        return self.operator(gamma).apply_M_prime(v)


class BlockOperator:
    """
    Actions of M(gamma), M'(gamma) and the DtN blocks P_+-(gamma)^{+-1}.

    P_+-(gamma) = R diag(s_{+-,k} + d_0) R^{-1} with [R]_{k,l} =
    exp(2 pi i (l-p-1) k h_z). R diag(.) R^{-1} is circulant, so each
    block is stored as the spectrum of that circulant in FFT ordering.
    """

    def __init__(self, problem: DiscreteProblem, gamma: complex) -> None:
        self.problem: DiscreteProblem = problem
        self.gamma: complex = complex(gamma)
        self.dtn: DtnCoefficients = dtn_coefficients(
            self.gamma, problem.p, problem.kappa_minus, problem.kappa_plus
        )
        n_z = problem.n_z
        self._P = {
            side: CirculantSpectrum(n_z, scipy.fft.ifftshift(self.dtn.s(side) + problem.d0))
            for side in Side
        }
        self._P_prime = {
            side: CirculantSpectrum(n_z, scipy.fft.ifftshift(self.dtn.s_prime(side)))
            for side in Side
        }

    def _check_invertible(self, side: Side) -> None:
        spectrum = self._P[side].eigenvalues
        smallest = float(np.min(np.abs(spectrum)))
        if smallest <= SINGULAR_MODE_TOLERANCE:
            raise SingularDtnMode(
                f"P_{side.name.lower()}({self.gamma}) has a mode of size {smallest:.3e}"
            )

    def apply_P(self, side: Side, g: np.ndarray) -> np.ndarray:
        """
        P_side(gamma) g.
        """
        return self._P[side].apply(np.asarray(g, dtype=complex))

    def apply_P_inverse(self, side: Side, g: np.ndarray) -> np.ndarray:
        """
        P_side(gamma)^{-1} g.
        """
        self._check_invertible(side)
        return self._P[side].solve(np.asarray(g, dtype=complex))

    def apply_P_block(self, ext: np.ndarray) -> np.ndarray:
        """
        P(gamma) = diag(P_-, P_+) acting on both boundary blocks.
        """
        n_z = self.problem.n_z
        return np.concatenate(
            [self.apply_P(Side.MINUS, ext[:n_z]), self.apply_P(Side.PLUS, ext[n_z:])]
        )

    def apply_P_block_inverse(self, ext: np.ndarray) -> np.ndarray:
        """
        P(gamma)^{-1} acting on both boundary blocks.
        """
        n_z = self.problem.n_z
        return np.concatenate(
            [
                self.apply_P_inverse(Side.MINUS, ext[:n_z]),
                self.apply_P_inverse(Side.PLUS, ext[n_z:]),
            ]
        )

    def apply_M(self, v: np.ndarray) -> np.ndarray:
        """
        M(gamma) v.
        """
        problem = self.problem
        x, ext = problem.split(v)
        top = problem.apply_Q(self.gamma, x) + problem.apply_C1(ext)
        bottom = problem.apply_C2T(x) + self.apply_P_block(ext)
        return problem.join(top, bottom)

    def apply_M_prime(self, v: np.ndarray) -> np.ndarray:
        """
        M'(gamma) v; only defined in the open left half-plane.
        """
        if self.gamma.real >= 0:
            raise RightHalfPlane(f"M'(gamma) requires Re(gamma) < 0, got {self.gamma}")
        problem = self.problem
        x, ext = problem.split(v)
        x = np.asarray(x, dtype=complex)
        top = 2.0 * problem.dz(x) + 2.0 * self.gamma * x
        n_z = problem.n_z
        bottom = np.concatenate(
            [
                self._P_prime[Side.MINUS].apply(np.asarray(ext[:n_z], dtype=complex)),
                self._P_prime[Side.PLUS].apply(np.asarray(ext[n_z:], dtype=complex)),
            ]
        )
        return problem.join(top, bottom)


def apply_P(
    problem: DiscreteProblem, gamma: complex, side: Side, g: np.ndarray
) -> np.ndarray:
    """
    P_side(gamma) g for a one-off evaluation.
    """
    return BlockOperator(problem, gamma).apply_P(side, g)


def apply_P_inverse(
    problem: DiscreteProblem, gamma: complex, side: Side, g: np.ndarray
) -> np.ndarray:
    """
    P_side(gamma)^{-1} g for a one-off evaluation.
    """
    return BlockOperator(problem, gamma).apply_P_inverse(side, g)


def normalize_phase(v: np.ndarray) -> np.ndarray:
    """
    Scale `v` to unit 2-norm with its first significant entry real positive.

    Entries below 1e-8 of the largest magnitude are treated as zero, so
    the chosen phase does not hinge on round-off.
    """
    v = np.asarray(v, dtype=complex)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize the zero vector")
    v = v / norm
    magnitudes = np.abs(v)
    first = int(np.argmax(magnitudes >= 1e-8 * magnitudes.max()))
    return v * (abs(v[first]) / v[first])
