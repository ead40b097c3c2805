"""Dense block matrices with uniform d x d blocks.

Covariances and precisions of a sequence x_0..x_N live here, addressed by time index.
The structural predicates decide which blocks of a precision matrix vanish:
tri-diagonal (Markov), cyclic tri-diagonal (reciprocal) and the two CM forms, whose
band is extended by a dense last (CM_L) or first (CM_F) block row and column.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import linalg

from cmseq.default import DEFAULT_TOL, SYMMETRY_TOL
from cmseq.exceptions import DimensionMismatch, IndexOutOfRange, IndexOverlap, NotPositiveDefinite, NotSymmetric

Array = npt.NDArray[np.float64]


class Direction(Enum):
    L = "L"
    F = "F"


def max_abs(value: Array) -> float:
    return float(np.max(np.abs(value))) if value.size else 0.0


def symmetrize(value: Array) -> Array:
    return 0.5 * (value + value.T)


def check_symmetric(value: Array, tol: float = SYMMETRY_TOL, label: str = "matrix"):
    if value.ndim != 2 or value.shape[0] != value.shape[1]:
        raise DimensionMismatch(f"{label} must be square, got shape {value.shape}")
    asymmetry = max_abs(value - value.T)
    if asymmetry > tol * (1.0 + max_abs(value)):
        raise NotSymmetric(f"{label} is not symmetric (max |A - A'| = {asymmetry:.3e})")


class BlockMatrix:
    """Square matrix of n_blocks x n_blocks blocks, each block_dim x block_dim."""

    __slots__ = 'data', 'n_blocks', 'block_dim'

    def __init__(self, data: npt.ArrayLike, block_dim: int, *, symmetric: bool = False,
                 symmetry_tol: float = SYMMETRY_TOL):
        matrix = np.array(data, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"Block matrix data must be square, got shape {matrix.shape}")
        if block_dim < 1 or matrix.shape[0] % block_dim:
            raise DimensionMismatch(f"Size {matrix.shape[0]} is not a multiple of block dimension {block_dim}")

        if symmetric:
            check_symmetric(matrix, symmetry_tol)
            matrix = symmetrize(matrix)

        self.data: Array = matrix
        self.block_dim = block_dim
        self.n_blocks = matrix.shape[0] // block_dim

    @classmethod
    def zeros(cls, n_blocks: int, block_dim: int):
        return cls(np.zeros((n_blocks * block_dim, n_blocks * block_dim)), block_dim)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence[npt.ArrayLike]], *, symmetric: bool = False):
        rows = [[np.atleast_2d(np.asarray(block, dtype=float)) for block in row] for row in blocks]
        dims = {block.shape for row in rows for block in row}
        if len(dims) != 1 or any(len(row) != len(rows) for row in rows):
            raise DimensionMismatch(f"Blocks must form a square grid of equally sized square blocks, got {dims}")
        (block_dim, _), = dims
        return cls(np.block(rows), block_dim, symmetric=symmetric)

    @property
    def N(self) -> int:
        return self.n_blocks - 1

    @property
    def shape(self):
        return self.data.shape

    @property
    def max_abs(self) -> float:
        return max_abs(self.data)

    def _span(self, index: int):
        if not 0 <= index < self.n_blocks:
            raise IndexOutOfRange(f"Block index {index} outside [0, {self.n_blocks - 1}]")
        return slice(index * self.block_dim, (index + 1) * self.block_dim)

    def _positions(self, indices: Iterable[int]) -> list[int]:
        d = self.block_dim
        positions = []
        for index in indices:
            span = self._span(index)
            positions.extend(range(span.start, span.start + d))
        return positions

    def block(self, i: int, j: int) -> Array:
        return self.data[self._span(i), self._span(j)]

    def set_block(self, i: int, j: int, value: npt.ArrayLike):
        self.data[self._span(i), self._span(j)] = value

    def sub(self, rows: Sequence[int], cols: Sequence[int]) -> Array:
        """Dense submatrix made of the given block rows and block columns."""
        return self.data[np.ix_(self._positions(rows), self._positions(cols))]

    def principal(self, indices: Sequence[int]) -> 'BlockMatrix':
        return BlockMatrix(self.sub(indices, indices), self.block_dim)

    def block_norms(self) -> Array:
        d = self.block_dim
        grid = self.data.reshape(self.n_blocks, d, self.n_blocks, d)
        return np.abs(grid).max(axis=(1, 3))

    def inverse(self, label: str = "matrix") -> 'BlockMatrix':
        return BlockMatrix(factor_pd(self, label).inverse(), self.block_dim)

    def congruence(self, transform: npt.ArrayLike) -> 'BlockMatrix':
        """T' A T"""
        t = np.asarray(transform, dtype=float)
        return BlockMatrix(symmetrize(t.T @ self.data @ t), self.block_dim)

    def regression(self, target: Sequence[int], given: Sequence[int]) -> tuple[Array, Array]:
        """Gaussian conditioning on a covariance: E[x_target | x_given] = gain @ x_given.

        Returns:
            tuple: (gain, conditional covariance of x_target given x_given)
        """
        if set(target) & set(given):
            raise IndexOverlap(f"Target {sorted(target)} and conditioning set {sorted(given)} overlap")
        cov_tt = self.sub(target, target)
        if not given:
            return np.zeros((len(cov_tt), 0)), cov_tt

        cov_tg = self.sub(target, given)
        factor = factor_pd(self.sub(given, given), "conditioning covariance")
        gain = factor.solve(cov_tg.T).T
        return gain, symmetrize(cov_tt - gain @ cov_tg.T)

    def split_gain(self, gain: Array) -> list[Array]:
        """Splits a regression gain into its d x d blocks, one per conditioning index."""
        return [gain[:, i:i + self.block_dim] for i in range(0, gain.shape[1], self.block_dim)]

    def __eq__(self, other):
        if not isinstance(other, BlockMatrix):
            return NotImplemented
        return self.block_dim == other.block_dim and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"BlockMatrix(n_blocks={self.n_blocks}, block_dim={self.block_dim})"


@dataclass(frozen=True)
class PDFactorization:
    lower: Array

    def solve(self, rhs: npt.ArrayLike) -> Array:
        return linalg.cho_solve((self.lower, True), np.asarray(rhs, dtype=float))

    def inverse(self) -> Array:
        return symmetrize(self.solve(np.eye(len(self.lower))))

    @property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def factor_pd(matrix: BlockMatrix | npt.ArrayLike, label: str = "matrix",
              index: Optional[int] = None) -> PDFactorization:
    """Cholesky factorization of a symmetric matrix.

    Args:
        matrix: symmetric block matrix or plain array
        label: parameter name reported on failure
        index: time index reported on failure

    Raises:
        DimensionMismatch: matrix is not square
        NotSymmetric: matrix is not symmetric within tolerance
        NotPositiveDefinite: the factorization breaks down
    """
    data = matrix.data if isinstance(matrix, BlockMatrix) else np.atleast_2d(np.asarray(matrix, dtype=float))
    where = label if index is None else f"{label}[{index}]"
    check_symmetric(data, label=where)
    try:
        lower = linalg.cholesky(symmetrize(data), lower=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"{where} is not positive definite", label, index) from exc
    return PDFactorization(lower)


def inv_pd(matrix: npt.ArrayLike, label: str = "matrix", index: Optional[int] = None) -> Array:
    return factor_pd(matrix, label, index).inverse()


@dataclass(frozen=True, eq=False)
class StructureReport:
    is_tridiagonal: bool
    is_cyclic_tridiagonal: bool
    is_cml_form: bool
    is_cmf_form: bool
    max_offband_residual: float
    tolerance_used: float
    threshold: float
    residuals: dict[str, float] = field(default_factory=dict)
    block_residuals: Optional[Array] = None

    def form(self, direction: Direction) -> bool:
        return self.is_cml_form if direction is Direction.L else self.is_cmf_form


def _allowed_blocks(n_blocks: int):
    last = n_blocks - 1
    return {
        'tridiagonal': lambda i, j: abs(i - j) <= 1,
        'cml': lambda i, j: abs(i - j) <= 1 or last in (i, j),
        'cmf': lambda i, j: abs(i - j) <= 1 or 0 in (i, j),
        'cyclic': lambda i, j: abs(i - j) <= 1 or {i, j} == {0, last},
    }


def structure_classify(matrix: BlockMatrix, tol: float = DEFAULT_TOL) -> StructureReport:
    """Decides which precision-matrix forms a symmetric block matrix has.

    A block counts as zero when its largest entry is at most tol * (1 + max|matrix|).
    """
    if not isinstance(matrix, BlockMatrix):
        raise DimensionMismatch("structure_classify expects a BlockMatrix")
    if tol <= 0:
        raise ValueError("Tolerance must be positive")
    check_symmetric(matrix.data, label="classified matrix")

    norms = matrix.block_norms()
    threshold = tol * (1.0 + matrix.max_abs)
    residuals = {}
    for name, allowed in _allowed_blocks(matrix.n_blocks).items():
        residuals[name] = float(max((norms[i, j]
                                     for i in range(matrix.n_blocks)
                                     for j in range(matrix.n_blocks)
                                     if not allowed(i, j)), default=0.0))

    is_cml = bool(residuals['cml'] <= threshold)
    is_cmf = bool(residuals['cmf'] <= threshold)
    report = StructureReport(is_tridiagonal=bool(residuals['tridiagonal'] <= threshold),
                             # the cyclic pattern is exactly the intersection of both CM patterns
                             is_cyclic_tridiagonal=is_cml and is_cmf,
                             is_cml_form=is_cml,
                             is_cmf_form=is_cmf,
                             max_offband_residual=residuals['tridiagonal'],
                             tolerance_used=tol,
                             threshold=threshold,
                             residuals=residuals,
                             block_residuals=norms)
    logging.debug("Structure of %r: residuals %s, threshold %.3e", matrix, residuals, threshold)
    return report


def _window_span(n_blocks: int, k1: int, k2: int) -> list[int]:
    last = n_blocks - 1
    if not 0 <= k1 < k2 <= last:
        raise IndexOutOfRange(f"Window [{k1}, {k2}] is not inside [0, {last}]")
    return list(range(k1, k2 + 1))


def schur_window(precision: BlockMatrix, k1: int, k2: int) -> BlockMatrix:
    """Precision of the marginal of x_k1..x_k2: the Schur complement of the blocks outside the window.

    For [0, k2] this is A11 - A12 A22^-1 A12', for [k1, N] it is A22 - A12' A11^-1 A12.
    """
    inside = _window_span(precision.n_blocks, k1, k2)
    outside = [index for index in range(precision.n_blocks) if index not in inside]
    inner = precision.sub(inside, inside)
    if not outside:
        return BlockMatrix(inner, precision.block_dim)

    coupling = precision.sub(inside, outside)
    factor = factor_pd(precision.sub(outside, outside), "eliminated precision block")
    return BlockMatrix(symmetrize(inner - coupling @ factor.solve(coupling.T)), precision.block_dim)


def window_structure(precision: BlockMatrix, k1: int, k2: int, tol: float = DEFAULT_TOL) -> StructureReport:
    return structure_classify(schur_window(precision, k1, k2), tol)


def schur_window_classify(precision: BlockMatrix, k1: int, k2: int, direction: Direction,
                          tol: float = DEFAULT_TOL) -> bool:
    """Whether the sequence with this precision is [k1,k2]-CM_c, c = k2 for L and k1 for F."""
    factor_pd(precision, "precision")
    return window_structure(precision, k1, k2, tol).form(direction)
