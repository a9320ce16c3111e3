"""
Fast-diagonalization kernels.

The Sylvester operator L(X) = AX + XB arising from the waveguide matrix
equation has a circulant A (periodic z-direction) and the Dirichlet second
difference matrix as B (x-direction). Both are diagonalized by fast
transforms: the DFT for A and the type-I discrete sine transform for B.
This module keeps the spectra of both and solves AX + XB = C in closed
form with O(n_x n_z log(n_x n_z)) work.
"""

import logging
from typing import Tuple

import numpy as np
import scipy.fft

from wepsmw.generic import DimensionMismatch, SpectrumCollision

logger = logging.getLogger(__name__)

# Smallest admissible |[Lambda_A]_p + [Lambda_B]_q|.
COLLISION_TOLERANCE: float = 1e-12


class CirculantSpectrum:
    """
    Eigenvalues of a circulant matrix, applied through the DFT.

    A circulant C with first column c satisfies C = F^{-1} diag(F c) F,
    where F is the (unnormalized) DFT. Actions of C and C^{-1} are
    therefore an FFT, a diagonal scaling and an inverse FFT.
    """

    def __init__(self, n: int, eigenvalues: np.ndarray) -> None:
        self.n: int = n
        self.eigenvalues: np.ndarray = np.array(eigenvalues, dtype=complex)
        self.eigenvalues.setflags(write=False)

    def apply(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """
        Multiply by the circulant along `axis`.
        """
        return scipy.fft.ifft(
            self._broadcast(self.eigenvalues, x, axis) * scipy.fft.fft(x, axis=axis),
            axis=axis,
        )

    def solve(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """
        Multiply by the inverse circulant along `axis`.

        Callers are responsible for checking that no eigenvalue vanishes.
        """
        return scipy.fft.ifft(
            scipy.fft.fft(x, axis=axis) / self._broadcast(self.eigenvalues, x, axis),
            axis=axis,
        )

    def dense(self) -> np.ndarray:
        """
        Assemble the circulant as a dense matrix (small sizes only).
        """
        return self.apply(np.eye(self.n, dtype=complex), axis=0)

    @staticmethod
    def _broadcast(values: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * np.ndim(x)
        shape[axis] = values.shape[0]
        return values.reshape(shape)


class SineSpectrum:
    """
    Analytic spectrum of the Dirichlet second-difference matrix.

    D_xx = tridiag(1, -2, 1) / h^2 of order n has eigenvalues
    lambda_j = -(4/h^2) sin^2(j pi / (2(n+1))) with eigenvector basis
    S = [sin(j k pi / (n+1))]_{k,j}. S is symmetric and S S = (n+1)/2 I,
    so both S and its inverse are DST-I applications.
    """

    def __init__(self, n: int, h: float) -> None:
        self.n: int = n
        self.h: float = h
        j = np.arange(1, n + 1)
        self.eigenvalues: np.ndarray = -(4.0 / h**2) * np.sin(j * np.pi / (2 * (n + 1))) ** 2
        self.eigenvalues.setflags(write=False)

    def transform(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """
        Multiply by the sine basis S along `axis`.

        scipy's DST-I carries a factor 2 relative to S.
        """
        return 0.5 * scipy.fft.dst(x, type=1, axis=axis)

    def inverse_transform(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """
        Multiply by S^{-1} = 2/(n+1) S along `axis`.
        """
        return scipy.fft.dst(x, type=1, axis=axis) / (self.n + 1)


class SylvesterKernel:
    """
    Diagonalized Sylvester operator L(X) = AX + XB.

    A (n_z x n_z) is circulant and B (n_x x n_x) is the Dirichlet second
    difference matrix. The kernel is immutable once built and may be
    shared between threads; every call allocates its own work arrays.
    """

    def __init__(self, a_spectrum: CirculantSpectrum, b_spectrum: SineSpectrum) -> None:
        self.a_spectrum: CirculantSpectrum = a_spectrum
        self.b_spectrum: SineSpectrum = b_spectrum
        self._denominator: np.ndarray = (
            a_spectrum.eigenvalues[:, np.newaxis] + b_spectrum.eigenvalues[np.newaxis, :]
        )
        self._denominator.setflags(write=False)
        separation = float(np.min(np.abs(self._denominator)))
        if separation < COLLISION_TOLERANCE:
            p, q = np.unravel_index(
                np.argmin(np.abs(self._denominator)), self._denominator.shape
            )
            raise SpectrumCollision(
                f"eig(A) and eig(-B) overlap: |Lambda_A[{p}] + Lambda_B[{q}]| "
                f"= {separation:.3e} < {COLLISION_TOLERANCE:.0e}"
            )
        logger.debug(
            "Sylvester kernel %dx%d, spectral separation %.3e",
            a_spectrum.n,
            b_spectrum.n,
            separation,
        )

    @property
    def shape(self) -> Tuple[int, int]:
        """
        Matrix dimensions (n_z, n_x) the kernel acts on.
        """
        return (self.a_spectrum.n, self.b_spectrum.n)

    def solve(self, c: np.ndarray) -> np.ndarray:
        """
        Solve AX + XB = C.

        With A = V Lambda_A V^{-1} and B = S Lambda_B S^{-1} the solution
        is X = V Y S^{-1} where Y = (V^{-1} C S) / (Lambda_A + Lambda_B^T).
        V^{-1} is the forward FFT along z; S acts along x.
        """
        c = self._check(c)
        y = self.b_spectrum.transform(scipy.fft.fft(c, axis=0), axis=1)
        y /= self._denominator
        return self.b_spectrum.inverse_transform(scipy.fft.ifft(y, axis=0), axis=1)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """
        Evaluate AX + XB through the same transforms.
        """
        x = self._check(x)
        ax = self.a_spectrum.apply(x, axis=0)
        xs = self.b_spectrum.transform(x, axis=1)
        xs *= self.b_spectrum.eigenvalues[np.newaxis, :]
        return ax + self.b_spectrum.inverse_transform(xs, axis=1)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape != self.shape:
            raise DimensionMismatch(f"expected a {self.shape} matrix, got {x.shape}")
        return x


def circulant_spectrum(first_column: np.ndarray) -> CirculantSpectrum:
    """
    Spectrum of the circulant matrix with the given first column.
    """
    first_column = np.asarray(first_column, dtype=complex)
    if first_column.ndim != 1 or first_column.shape[0] < 1:
        raise DimensionMismatch("first column must be a non-empty vector")
    return CirculantSpectrum(first_column.shape[0], scipy.fft.fft(first_column))


def sine_spectrum(n_x: int, h_x: float) -> SineSpectrum:
    """
    Spectrum of the order-n_x Dirichlet second-difference matrix with step h_x.
    """
    if n_x < 1:
        raise ValueError(f"n_x = {n_x} must be positive")
    if h_x <= 0:
        raise ValueError(f"h_x = {h_x} must be positive")
    return SineSpectrum(n_x, h_x)


def sylvester_solve(kernel: SylvesterKernel, c: np.ndarray) -> np.ndarray:
    """
    Solve L(X) = C with the given kernel.
    """
    return kernel.solve(c)


def apply_sylvester(kernel: SylvesterKernel, x: np.ndarray) -> np.ndarray:
    """
    Evaluate L(X) = AX + XB with the given kernel.
    """
    return kernel.apply(x)


def fast_sine_size(n: int) -> int:
    """
    Smallest order m >= n whose DST-I runs through a 5-smooth length 2(m + 1).

    scipy's DST-I of order m is a real FFT of length 2(m + 1); a large prime
    factor in that length slows it down by an order of magnitude.
    """
    if n < 1:
        raise ValueError(f"order n = {n} must be positive")
    length = scipy.fft.next_fast_len(2 * (n + 1), real=True)
    while length % 2:
        length = scipy.fft.next_fast_len(length + 1, real=True)
    return length // 2 - 1
