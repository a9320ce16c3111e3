"""
Low-rank (Sherman-Morrison-Woodbury) preconditioner for S(sigma).

S(sigma) splits as L + Phi with L a fast-diagonalizable Sylvester
operator. Phi is replaced by its Galerkin approximation on a coarse grid of
N = N_x N_z rectangular cells,

    Pi(X) = sum_k W_k(X) E_k,     E_k = Phi(V_k),

where V_k is the indicator of cell k and W_k the mean over it. L + Pi is a
rank-N update of L and is inverted with the matrix-equation form of the
SMW formula:

    G = L^{-1}(C),  g_j = W_j(G),  W alpha = g,  X = L^{-1}(C - sum_k alpha_k E_k)

with [W]_{jk} = delta_{jk} + W_j(L^{-1}(E_k)).
"""

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from wepsmw._util.cache import CouplingHeader, read_coupling, write_coupling
from wepsmw._util.filter import mean_arithmetic
from wepsmw.discretization import Side, unvec, vec
from wepsmw.generic import ConfigError, GridTooCoarse, LinearAction, SingularCoupling
from wepsmw.schur import SchurAction

logger = logging.getLogger(__name__)

# Smallest admissible |U_ii| / max |U_ii| of the LU factor of W.
PIVOT_TOLERANCE: float = 1e-14


@dataclass(frozen=True)
class Cell:
    """
    One rectangle of the coarse grid, as index ranges into the fine grid.
    """

    index: int
    iz: int
    ix: int
    rows: slice
    cols: slice

    @property
    def size(self) -> int:
        return (self.rows.stop - self.rows.start) * (self.cols.stop - self.cols.start)

    def indicator(self, n_z: int, n_x: int) -> np.ndarray:
        """V_k as a dense n_z x n_x matrix."""
        v = np.zeros((n_z, n_x))
        v[self.rows, self.cols] = 1.0
        return v


class CoarseGrid:
    """
    Tensor partition of the n_z x n_x fine grid into N_z x N_x cells.

    Cell k = iz + ix N_z covers rows row_sizes[iz] and columns col_sizes[ix],
    so cell-wise quantities stack in the same column-major order as `vec`.
    """

    def __init__(
        self, n_z: int, n_x: int, row_sizes: Sequence[int], col_sizes: Sequence[int]
    ) -> None:
        self.row_sizes: np.ndarray = np.asarray(row_sizes, dtype=int)
        self.col_sizes: np.ndarray = np.asarray(col_sizes, dtype=int)
        if self.row_sizes.sum() != n_z or self.col_sizes.sum() != n_x:
            raise ConfigError(
                f"cell sizes cover {self.row_sizes.sum()} x {self.col_sizes.sum()} "
                f"nodes of a {n_z} x {n_x} grid"
            )
        if np.any(self.row_sizes < 1) or np.any(self.col_sizes < 1):
            raise GridTooCoarse(
                f"coarse grid {len(self.row_sizes)} x {len(self.col_sizes)} "
                f"has an empty cell on the {n_z} x {n_x} grid"
            )
        self.n_z: int = n_z
        self.n_x: int = n_x
        self.N_z: int = len(self.row_sizes)
        self.N_x: int = len(self.col_sizes)
        self.row_starts: np.ndarray = np.concatenate([[0], np.cumsum(self.row_sizes)[:-1]])
        self.col_starts: np.ndarray = np.concatenate([[0], np.cumsum(self.col_sizes)[:-1]])

        self.cells: List[Cell] = []
        for ix in range(self.N_x):
            cols = slice(int(self.col_starts[ix]), int(self.col_starts[ix] + self.col_sizes[ix]))
            for iz in range(self.N_z):
                rows = slice(
                    int(self.row_starts[iz]), int(self.row_starts[iz] + self.row_sizes[iz])
                )
                self.cells.append(Cell(iz + ix * self.N_z, iz, ix, rows, cols))

    @property
    def N(self) -> int:
        return self.N_x * self.N_z

    def __len__(self) -> int:
        return self.N

    def __repr__(self) -> str:
        return (
            f"CoarseGrid({self.N_z} x {self.N_x} cells on {self.n_z} x {self.n_x}, "
            f"cols={self.col_sizes.tolist()})"
        )

    def means(self, x: np.ndarray) -> np.ndarray:
        """
        W_k(X) for every cell k, as a length-N vector.

        Each mean is a pairwise summed np.mean over the cell block.
        """
        x = np.asarray(x)
        return np.array([cell_mean(x, cell) for cell in self.cells])

    def expand(self, values: np.ndarray) -> np.ndarray:
        """
        sum_k values_k V_k, the piecewise-constant field with the given cell values.
        """
        blocks = np.asarray(values).reshape((self.N_z, self.N_x), order="F")
        return np.repeat(np.repeat(blocks, self.row_sizes, axis=0), self.col_sizes, axis=1)

    def project(self, x: np.ndarray) -> np.ndarray:
        """
        Cell-mean projection sum_k W_k(X) V_k.
        """
        return self.expand(self.means(x))


def _near_uniform(n: int, parts: int) -> List[int]:
    base, extra = divmod(n, parts)
    return [base + 1] * extra + [base] * (parts - extra)


def _refine_edges(sizes: List[int]) -> List[int]:
    """
    Split the outer half of each outermost interval into two cells.
    """
    if len(sizes) == 1:
        (width,) = sizes
        outer = width // 4
        left = [outer // 2, outer - outer // 2]
        return left + [width - 2 * outer] + left[::-1]
    first, last = sizes[0], sizes[-1]
    outer_first, outer_last = first // 2, last // 2
    return (
        [outer_first // 2, outer_first - outer_first // 2, first - outer_first]
        + sizes[1:-1]
        + [last - outer_last, outer_last - outer_last // 2, outer_last // 2]
    )


def build_coarse_grid(
    n_x: int, n_z: int, N_z: int, boundary_refinement: bool = True
) -> CoarseGrid:
    """
    Coarse grid with N_z near-uniform z-intervals.

    The x-direction gets N_z near-uniform intervals as well. With
    `boundary_refinement` the outer half of the first and last interval is
    split once more into two cells, giving N_x = N_z + 4 cells that get
    finer towards the boundaries; otherwise N_x = N_z.
    """
    if not 1 <= N_z <= n_z:
        raise GridTooCoarse(f"N_z = {N_z} must lie in [1, n_z = {n_z}]")
    if N_z > n_x:
        raise GridTooCoarse(f"N_z = {N_z} x-intervals do not fit n_x = {n_x}")
    rows = _near_uniform(n_z, N_z)
    cols = _near_uniform(n_x, N_z)
    if boundary_refinement:
        cols = _refine_edges(cols)
    return CoarseGrid(n_z, n_x, rows, cols)


def cell_mean(x: np.ndarray, cell: Cell) -> complex:
    """
    Arithmetic mean of X over one cell.
    """
    return mean_arithmetic(np.asarray(x)[cell.rows, cell.cols])


@dataclass(frozen=True)
class StructuredEk:
    """
    E_k = Phi(V_k) without storing the full matrix.

    Phi(V_k) is (K - kbar) restricted to the cell, plus a dense first
    column when the cell meets x-columns 1 or 2 and a dense last column
    when it meets x-columns n_x - 1 or n_x.
    """

    cell: Cell
    block: np.ndarray
    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None

    def materialize(self, n_z: int, n_x: int) -> np.ndarray:
        e = np.zeros((n_z, n_x), dtype=complex)
        e[self.cell.rows, self.cell.cols] = self.block
        if self.left is not None:
            e[:, 0] += self.left
        if self.right is not None:
            e[:, -1] += self.right
        return e


def build_ek(cell: Cell, schur: SchurAction) -> StructuredEk:
    """
    Structured E_k for one cell; at most two P^{-1} applications.
    """
    n_z = schur.problem.n_z
    block = np.array(schur.k_shifted[cell.rows, cell.cols], dtype=complex)

    left = right = None
    weight = schur.u[cell.cols].sum()
    if weight != 0:
        column = np.zeros(n_z, dtype=complex)
        column[cell.rows] = weight
        left = -schur.block.apply_P_inverse(Side.MINUS, column)
    weight = schur.u_flipped[cell.cols].sum()
    if weight != 0:
        column = np.zeros(n_z, dtype=complex)
        column[cell.rows] = weight
        right = -schur.block.apply_P_inverse(Side.PLUS, column)
    return StructuredEk(cell, block, left, right)


def precompute_coupling(
    schur: SchurAction,
    grid: CoarseGrid,
    eks: Sequence[StructuredEk],
    workers: int = 1,
) -> np.ndarray:
    """
    Assemble [W]_{jk} = delta_{jk} + W_j(L^{-1}(E_k)) column by column.

    Columns are independent; with `workers` > 1 they are spread over a
    thread pool, each task holding one n_z x n_x buffer at a time.
    """
    n_z, n_x = schur.kernel.shape

    def column(k: int) -> np.ndarray:
        f = schur.kernel.solve(eks[k].materialize(n_z, n_x))
        w = grid.means(f)
        w[k] += 1.0
        return w

    start = time.perf_counter()
    coupling = np.empty((grid.N, grid.N), dtype=complex)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for k, w in enumerate(pool.map(column, range(grid.N))):
                coupling[:, k] = w
    else:
        for k in range(grid.N):
            coupling[:, k] = column(k)
    logger.info(
        "Coupling matrix N=%d assembled in %.3f s (%d worker%s)",
        grid.N,
        time.perf_counter() - start,
        workers,
        "" if workers == 1 else "s",
    )
    return coupling


def coupling_header(schur: SchurAction, grid: CoarseGrid) -> CouplingHeader:
    """
    Cache header identifying the coupling matrix of (schur, grid).
    """
    problem = schur.problem
    return CouplingHeader(
        n_x=problem.n_x,
        n_z=problem.n_z,
        N_x=grid.N_x,
        N_z=grid.N_z,
        sigma_real=schur.sigma.real,
        sigma_imag=schur.sigma.imag,
        kbar=schur.kbar,
        geometry=problem.geometry.digest(),
    )


def factorize_coupling(coupling: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    LU factors of W with partial pivoting.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(coupling, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if not np.all(np.isfinite(pivots)) or pivots.min() <= PIVOT_TOLERANCE * pivots.max():
        raise SingularCoupling(
            f"coupling matrix is singular: pivot ratio "
            f"{pivots.min() / max(pivots.max(), np.finfo(float).tiny):.3e}"
        )
    return lu, piv


class SmwPreconditioner(LinearAction):
    """
    (L + Pi)^{-1} for a fixed shift, applied with two Sylvester solves.

    Immutable after construction; concurrent applications are safe.
    """

    def __init__(
        self,
        schur: SchurAction,
        grid: CoarseGrid,
        workers: int = 1,
        coupling: Optional[np.ndarray] = None,
    ) -> None:
        problem = schur.problem
        if (grid.n_z, grid.n_x) != (problem.n_z, problem.n_x):
            raise ConfigError(
                f"coarse grid is laid out on {grid.n_z} x {grid.n_x}, "
                f"problem is {problem.n_z} x {problem.n_x}"
            )
        if 4 * grid.N > problem.n_interior:
            raise ConfigError(
                f"N = {grid.N} coarse cells is too many for {problem.n_interior} "
                "unknowns (N <= n_x n_z / 4)"
            )
        self.schur: SchurAction = schur
        self.grid: CoarseGrid = grid
        self.eks: List[StructuredEk] = [build_ek(cell, schur) for cell in grid.cells]

        self._left_index = np.array(
            [e.cell.index for e in self.eks if e.left is not None], dtype=int
        )
        self._left_columns = self._stack([e.left for e in self.eks if e.left is not None])
        self._right_index = np.array(
            [e.cell.index for e in self.eks if e.right is not None], dtype=int
        )
        self._right_columns = self._stack([e.right for e in self.eks if e.right is not None])

        start = time.perf_counter()
        if coupling is None:
            coupling = precompute_coupling(schur, grid, self.eks, workers)
        self.coupling: np.ndarray = coupling
        self.coupling.setflags(write=False)
        self._lu: Tuple[np.ndarray, np.ndarray] = factorize_coupling(self.coupling)
        self.setup_seconds: float = time.perf_counter() - start

    def _stack(self, columns: List[np.ndarray]) -> np.ndarray:
        if not columns:
            return np.zeros((self.schur.problem.n_z, 0), dtype=complex)
        return np.column_stack(columns)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.schur.shape

    @property
    def sigma(self) -> complex:
        return self.schur.sigma

    @property
    def kbar(self) -> float:
        return self.schur.kbar

    @property
    def header(self) -> CouplingHeader:
        return coupling_header(self.schur, self.grid)

    def sum_ek(self, alpha: np.ndarray) -> np.ndarray:
        """
        sum_k alpha_k E_k from the structured E_k.
        """
        y = self.schur.k_shifted * self.grid.expand(alpha)
        y = y.astype(complex, copy=False)
        y[:, 0] += self._left_columns @ alpha[self._left_index]
        y[:, -1] += self._right_columns @ alpha[self._right_index]
        return y

    def apply_pi(self, x: np.ndarray) -> np.ndarray:
        """
        Pi(X) = sum_k W_k(X) E_k.
        """
        return self.sum_ek(self.grid.means(x))

    def project(self, x: np.ndarray) -> np.ndarray:
        """
        Cell-mean projection of X.
        """
        return self.grid.project(x)

    def apply_matrix(self, c: np.ndarray) -> np.ndarray:
        """
        Solve L(X) + Pi(X) = C.
        """
        kernel = self.schur.kernel
        c = np.asarray(c, dtype=complex)
        g = self.grid.means(kernel.solve(c))
        alpha = scipy.linalg.lu_solve(self._lu, g, check_finite=False)
        return kernel.solve(c - self.sum_ek(alpha))

    def matvec(self, c: np.ndarray) -> np.ndarray:
        c = self._check(c)
        n_z, n_x = self.schur.kernel.shape
        return vec(self.apply_matrix(unvec(c, n_z, n_x)))

    def apply_preconditioner(self, c: np.ndarray) -> np.ndarray:
        return self.matvec(c)


def save_coupling(preconditioner: SmwPreconditioner, path: str) -> None:
    """
    Store the coupling matrix of `preconditioner` at `path`.
    """
    write_coupling(path, preconditioner.header, preconditioner.coupling)
    logger.info("Saved coupling matrix N=%d to %s", preconditioner.grid.N, path)


def load_coupling(
    path: str, schur: SchurAction, grid: CoarseGrid, workers: int = 1
) -> SmwPreconditioner:
    """
    Rebuild a preconditioner from a stored coupling matrix.

    Raises CacheMismatch if the file was written for another problem.
    """
    header, coupling = read_coupling(path)
    header.validate(coupling_header(schur, grid))
    logger.info("Loaded coupling matrix N=%d from %s", grid.N, path)
    return SmwPreconditioner(schur, grid, workers, coupling=coupling)
