"""Joint covariance and precision of a model, classification of a covariance and a
brute-force Gaussian conditional-independence oracle."""
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import linalg

from cmseq.blockmat import (Array, BlockMatrix, Direction, factor_pd, max_abs, structure_classify, symmetrize,
                            window_structure)
from cmseq.default import ASSEMBLY_TOL, CLASSIFY_TOL
from cmseq.exceptions import DimensionMismatch, IndexOutOfRange, IndexOverlap
from cmseq.models import MarkovModel, Model
from cmseq.report import Check
from cmseq.transforms import Representation, markov_covariances


def _ordered_equations(m: Model):
    m.validate().raise_for_problems()
    equations = m.equations()
    first = min(equation.index for equation in equations)
    return equations, first


def stacked_coefficients(m: Model) -> tuple[BlockMatrix, list[Array]]:
    """(stacked coefficient matrix with unit block diagonal and -G_{k,j} at dependencies, [G_k] in time order)"""
    equations, first = _ordered_equations(m)
    coefficients = BlockMatrix.zeros(len(equations), m.d)
    for equation in equations:
        row = equation.index - first
        coefficients.set_block(row, row, np.eye(m.d))
        for source, gain in equation.gains:
            coefficients.set_block(row, source - first, coefficients.block(row, source - first) - gain)

    ordered = sorted(equations, key=lambda equation: equation.index)
    return coefficients, [equation.noise_cov for equation in ordered]


def assemble_precision(m: Model) -> BlockMatrix:
    """Joint precision C^-1 = G' diag(G_k)^-1 G of the states of any model, G the stacked coefficients."""
    coefficients, noise = stacked_coefficients(m)
    first = m.N + 1 - len(noise)
    weights = linalg.block_diag(*(factor_pd(block, 'noise_cov', first + k).inverse() for k, block in enumerate(noise)))
    precision = coefficients.data.T @ weights @ coefficients.data
    logging.debug("Assembled precision of a %s model over [%d, %d]", m.kind, first, m.N)
    return BlockMatrix(symmetrize(precision), m.d)


def model_covariance(m: Model) -> BlockMatrix:
    """Joint covariance G^-1 diag(G_k) G^-T, without inverting the precision."""
    coefficients, noise = stacked_coefficients(m)
    left = np.linalg.solve(coefficients.data, linalg.block_diag(*noise))
    return BlockMatrix(symmetrize(np.linalg.solve(coefficients.data, left.T)), m.d)


def markov_joint_covariance(m: MarkovModel) -> BlockMatrix:
    """Joint covariance of a Markov model, C_{i,j} = M_{i|j} C_j for i >= j."""
    m.validate().raise_for_problems()
    marginals = markov_covariances(m)
    times = list(m.times)
    covariance = BlockMatrix.zeros(len(times), m.d)
    for j in times:
        propagated = marginals[j]
        covariance.set_block(j - m.start, j - m.start, propagated)
        for i in range(j + 1, m.N + 1):
            propagated = m.transition[i] @ propagated
            covariance.set_block(i - m.start, j - m.start, propagated)
            covariance.set_block(j - m.start, i - m.start, propagated.T)
    return BlockMatrix(symmetrize(covariance.data), m.d)


@dataclass(frozen=True)
class WindowResult:
    window: tuple[int, int]
    direction: Direction
    holds: bool
    residual: float

    @property
    def name(self) -> str:
        k1, k2 = self.window
        return f"[{k1},{k2}]-CM_{self.direction.value}"


@dataclass
class SequenceClassification:
    is_markov: bool
    is_reciprocal: bool
    is_cml: bool
    is_cmf: bool
    window_results: list[WindowResult] = field(default_factory=list)
    residuals: dict[str, float] = field(default_factory=dict)
    cross_check_consistent: bool = True
    tolerance: float = CLASSIFY_TOL

    def to_dict(self) -> dict[str, Any]:
        return {'is_markov': self.is_markov,
                'is_reciprocal': self.is_reciprocal,
                'is_cml': self.is_cml,
                'is_cmf': self.is_cmf,
                'windows': {result.name: result.holds for result in self.window_results},
                'cross_check_consistent': self.cross_check_consistent,
                'tolerance': self.tolerance,
                'residuals': dict(self.residuals)}


def _window_sweep(precision: BlockMatrix, tol: float) -> list[WindowResult]:
    """[k1,N]-CM_F for k1 in [1, N-3] and [0,k2]-CM_L for k2 in [3, N-1]; shorter windows always hold."""
    N = precision.N
    results = []
    for k1 in range(1, N - 2):
        report = window_structure(precision, k1, N, tol)
        results.append(WindowResult((k1, N), Direction.F, report.is_cmf_form, report.residuals['cmf']))
    for k2 in range(3, N):
        report = window_structure(precision, 0, k2, tol)
        results.append(WindowResult((0, k2), Direction.L, report.is_cml_form, report.residuals['cml']))
    return results


def classify_precision(precision: BlockMatrix, tol: float = CLASSIFY_TOL) -> SequenceClassification:
    factor_pd(precision, 'precision')
    structure = structure_classify(precision, tol)
    windows = _window_sweep(precision, tol)

    residuals = {name: float(value) for name, value in structure.residuals.items()}
    residuals.update({result.name: float(result.residual) for result in windows})

    # a sequence is reciprocal iff it is CM_L and [k1,N]-CM_F for every k1
    cmf_windows = all(result.holds for result in windows if result.direction is Direction.F)
    consistent = structure.is_cyclic_tridiagonal == (structure.is_cml_form and structure.is_cmf_form and cmf_windows)
    if not consistent:
        logging.warning("Reciprocity from the precision pattern disagrees with the [k1,N]-CM_F window sweep")

    return SequenceClassification(is_markov=structure.is_tridiagonal,
                                  is_reciprocal=structure.is_cyclic_tridiagonal,
                                  is_cml=structure.is_cml_form,
                                  is_cmf=structure.is_cmf_form,
                                  window_results=windows,
                                  residuals=residuals,
                                  cross_check_consistent=consistent,
                                  tolerance=tol)


def classify_sequence(covariance: BlockMatrix, tol: float = CLASSIFY_TOL) -> SequenceClassification:
    """Markov / reciprocal / CM_L / CM_F membership of the zero-mean Gaussian sequence with this covariance."""
    return classify_precision(covariance.inverse('covariance'), tol)


def _check_disjoint(*sets: Sequence[int]):
    seen: set[int] = set()
    for indices in sets:
        overlap = seen & set(indices)
        if overlap:
            raise IndexOverlap(f"Index sets overlap in {sorted(overlap)}")
        seen |= set(indices)


def conditional_independence_oracle(covariance: BlockMatrix, inside: Sequence[int], outside: Sequence[int],
                                    given: Sequence[int], tol: float = CLASSIFY_TOL) -> bool:
    """Whether x_inside and x_outside are independent given x_given, by Gaussian conditioning."""
    _check_disjoint(inside, outside, given)
    factor_pd(covariance, 'covariance')
    if not inside or not outside:
        return True

    _, conditional = covariance.regression([*inside, *outside], list(given))
    split = len(inside) * covariance.block_dim
    return bool(max_abs(conditional[:split, split:]) <= tol * (1.0 + covariance.max_abs))


def conditional_transition(covariance: BlockMatrix, k: int, given: Sequence[int]) -> tuple[list[Array], Array]:
    """Gains and covariance of the Gaussian law of x_k given x_given: x_k = sum gain_j x_j + noise."""
    if k in given:
        raise IndexOverlap(f"x_{k} cannot be conditioned on itself")
    gain, noise = covariance.regression([k], list(given))
    return covariance.split_gain(gain), noise


@dataclass
class OracleClassification:
    is_markov: bool
    is_reciprocal: bool
    is_cml: bool
    is_cmf: bool
    windows: dict[tuple[int, int, Direction], bool] = field(default_factory=dict)


def _markov_over(covariance: BlockMatrix, first: int, last: int, extra: Iterable[int], tol: float) -> bool:
    """Whether x_first..x_last is Markov once x_extra is given."""
    fixed = list(extra)
    return all(conditional_independence_oracle(covariance,
                                               list(range(j + 1, last + 1)),
                                               list(range(first, j)),
                                               [j, *fixed], tol)
               for j in range(first + 1, last))


def oracle_window(covariance: BlockMatrix, k1: int, k2: int, direction: Direction, tol: float = CLASSIFY_TOL) -> bool:
    """[k1,k2]-CM_c from its definition: given x_c the rest of the window is Markov."""
    if not 0 <= k1 < k2 <= covariance.N:
        raise IndexOutOfRange(f"Window [{k1}, {k2}] is not inside [0, {covariance.N}]")
    if direction is Direction.L:
        return _markov_over(covariance, k1, k2 - 1, [k2], tol)
    return _markov_over(covariance, k1 + 1, k2, [k1], tol)


def oracle_reciprocal(covariance: BlockMatrix, tol: float = CLASSIFY_TOL) -> bool:
    """Inside and outside of every [j,l] are independent given x_j and x_l."""
    N = covariance.N
    for j in range(N + 1):
        for l in range(j + 2, N + 1):
            outside = [*range(j), *range(l + 1, N + 1)]
            if not conditional_independence_oracle(covariance, list(range(j + 1, l)), outside, [j, l], tol):
                return False
    return True


def oracle_classify(covariance: BlockMatrix, tol: float = CLASSIFY_TOL) -> OracleClassification:
    """Class membership decided only by conditional independence patterns."""
    N = covariance.N
    windows = {}
    for k1 in range(1, N - 2):
        windows[(k1, N, Direction.F)] = oracle_window(covariance, k1, N, Direction.F, tol)
    for k2 in range(3, N):
        windows[(0, k2, Direction.L)] = oracle_window(covariance, 0, k2, Direction.L, tol)

    return OracleClassification(is_markov=_markov_over(covariance, 0, N, [], tol),
                                is_reciprocal=oracle_reciprocal(covariance, tol),
                                is_cml=oracle_window(covariance, 0, N, Direction.L, tol),
                                is_cmf=oracle_window(covariance, 0, N, Direction.F, tol),
                                windows=windows)


def representation_covariance(r: Representation) -> BlockMatrix:
    """B + Gamma D Gamma' with B the underlying covariance padded by a zero block at x_c."""
    d = r.d
    underlying = markov_joint_covariance(r.underlying).data
    padded = np.zeros(((r.N + 1) * d, (r.N + 1) * d))
    if r.direction is Direction.L:
        padded[:r.N * d, :r.N * d] = underlying
    else:
        padded[d:, d:] = underlying
    weights = r.weights()
    return BlockMatrix(symmetrize(padded + weights @ r.endpoint_cov @ weights.T), d)


def verify_covariance_split(covariance: BlockMatrix, r: Representation, tol: float = ASSEMBLY_TOL) -> Check:
    """Whether C = B + Gamma D Gamma' for this representation."""
    if covariance.n_blocks != r.N + 1 or covariance.block_dim != r.d:
        raise DimensionMismatch(f"{covariance!r} does not match a representation with N={r.N}, d={r.d}")

    residual = max_abs(covariance.data - representation_covariance(r).data)
    threshold = tol * (1.0 + covariance.max_abs)
    logging.debug("Covariance split (%s): residual %.3e, threshold %.3e", r.direction.value, residual, threshold)
    return Check(f'split_{r.direction.value}', residual <= threshold, {'max': residual}, tol, threshold)
