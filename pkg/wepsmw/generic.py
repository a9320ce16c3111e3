"""
Generic base class definitions for the waveguide eigenvalue solver.

Holds the abstract interfaces shared by the operator, preconditioner and
eigensolver modules, together with the exception hierarchy raised by them.
"""

from abc import ABCMeta, abstractmethod

from typing import Tuple

import numpy as np


class WepError(Exception):
    """
    Base class of every error raised by this package.
    """


class ConfigError(WepError, ValueError):
    """
    A configuration or problem setup value is invalid.
    """


class OddGridRequired(ConfigError):
    """
    The z-direction grid size must be odd (n_z = 2p + 1).
    """


class GridTooCoarse(ConfigError):
    """
    A coarse-grid layout would produce an empty cell.
    """


class DimensionMismatch(WepError, ValueError):
    """
    A vector or matrix argument does not have the expected shape.
    """


class RightHalfPlane(WepError, ValueError):
    """
    An operation only valid in the open left half-plane got Re(gamma) >= 0.
    """


class CacheMismatch(WepError, ValueError):
    """
    A coupling cache file does not belong to the live problem.
    """


class SpectrumCollision(WepError, ArithmeticError):
    """
    The Sylvester operator is (numerically) singular.
    """


class SingularDtnMode(WepError, ArithmeticError):
    """
    A Fourier mode of a Dirichlet-to-Neumann block vanishes.
    """


class SingularCoupling(WepError, ArithmeticError):
    """
    The low-rank coupling matrix could not be factorized.
    """


class LeftHalfPlaneViolation(WepError, ArithmeticError):
    """
    A Newton iterate left the open left half-plane.
    """


class NewtonStall(WepError, ArithmeticError):
    """
    The scalar Newton iteration failed to converge.
    """


class KrylovBreakdown(WepError, ArithmeticError):
    """
    A Krylov solver broke down away from the solution.

    The `report` attribute holds the best iterate found before the
    breakdown.
    """

    def __init__(self, message: str, report: object) -> None:
        super().__init__(message)
        self.report = report


class NoConvergence(WepError, ArithmeticError):
    """
    The outer eigenvalue iteration ran out of iterations.

    The `result` attribute holds the best eigenpair approximation and the
    full iteration history.
    """

    def __init__(self, message: str, result: object) -> None:
        super().__init__(message)
        self.result = result


class BranchAmbiguityWarning(RuntimeWarning):
    """
    A DtN coefficient was evaluated on (or next to) its branch cut.
    """


class LinearAction(metaclass=ABCMeta):
    """
    A matrix-free linear map acting on flat complex vectors.
    """

    @property
    @abstractmethod
    def shape(self) -> Tuple[int, int]:
        """
        Dimensions (rows, columns) of the represented matrix.
        """
        pass

    @abstractmethod
    def matvec(self, x: np.ndarray) -> np.ndarray:
        """
        Apply the linear map to the vector `x`.
        """
        pass

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.matvec(x)

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.shape[1],):
            raise DimensionMismatch(
                f"expected a vector of length {self.shape[1]}, got shape {x.shape}"
            )
        return x


class NonlinearEigenproblem(metaclass=ABCMeta):
    """
    A nonlinear eigenvalue problem M(gamma) v = 0 given through actions.

    Implementations provide the action of M(gamma), of its derivative
    with respect to gamma, and a scale used to make residuals relative.
    """

    @property
    @abstractmethod
    def size(self) -> int:
        """
        Dimension of the problem.
        """
        pass

    @abstractmethod
    def apply_M(self, gamma: complex, v: np.ndarray) -> np.ndarray:
        """
        Action of M(gamma) on `v`.
        """
        pass

    @abstractmethod
    def apply_M_prime(self, gamma: complex, v: np.ndarray) -> np.ndarray:
        """
        Action of dM/dgamma at `gamma` on `v`.
        """
        pass

    @abstractmethod
    def residual_scale(self, gamma: complex) -> float:
        """
        Norm estimate of M(gamma) used to make residuals relative.
        """
        pass

    def relative_residual_norm(self, gamma: complex, v: np.ndarray) -> float:
        """
        Relative residual ||M(gamma) v|| / scale(gamma) of a unit vector.

        The vector is normalized first if it is not of unit length.
        """
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("relative residual of the zero vector is undefined")
        return float(
            np.linalg.norm(self.apply_M(gamma, v / norm)) / self.residual_scale(gamma)
        )
