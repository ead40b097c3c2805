"""Seeded sampling of model trajectories and Monte-Carlo checks of the sampled law.

Noise comes from a counter-based Philox stream keyed by (seed, chunk), NOISE_CHUNK samples per
chunk. Sample i always reads row i % NOISE_CHUNK of chunk i // NOISE_CHUNK, so a batch of n
samples is a prefix of any larger batch with the same seed and chunks can be generated in any
order.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from cmseq.analysis import model_covariance
from cmseq.blockmat import Array, BlockMatrix, factor_pd, max_abs
from cmseq.default import DEFAULT_SEED, MC_SIGMAS, NOISE_CHUNK
from cmseq.exceptions import DimensionMismatch, ValidationError
from cmseq.models import CMcModel, MarkovModel, Model, as_block
from cmseq.report import Check, Report
from cmseq.serialization import model_digest
from cmseq.transforms import boundary_from_endpoint_joint, induce_cml_from_markov, markov_covariances


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    N: int
    d: int
    data: Array
    seed: int
    model_digest: str
    start: int = 0

    def __post_init__(self):
        expected = (self.N - self.start + 1, self.d)
        if self.data.ndim != 3 or self.data.shape[1:] != expected:
            raise DimensionMismatch(f"Trajectory data of shape {self.data.shape} does not match "
                                    f"{expected[0]} states of dimension {self.d}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    def stacked(self) -> Array:
        """Each sample as one (N+1)d vector."""
        return self.data.reshape(self.n_samples, -1)


def noise_chunk(seed: int, chunk: int, n_states: int, d: int) -> Array:
    if seed < 0:
        raise ValidationError(f"Seed must be non-negative, got {seed}")
    generator = np.random.Generator(np.random.Philox(key=np.array([seed, chunk], dtype=np.uint64)))
    return generator.standard_normal((NOISE_CHUNK, n_states, d))


def standard_noise(n: int, n_states: int, d: int, seed: int) -> Array:
    chunks = [noise_chunk(seed, chunk, n_states, d) for chunk in range(-(-n // NOISE_CHUNK))]
    logging.debug("Drew %d noise chunks for %d samples", len(chunks), n)
    return np.concatenate(chunks)[:n]


def sample_trajectories(m: Model, n: int, seed: int = DEFAULT_SEED) -> TrajectoryBatch:
    """Draws n trajectories by running the model recursions in generative order."""
    if n < 1:
        raise ValidationError(f"Sample count must be positive, got {n}")
    m.validate().raise_for_problems()

    equations = m.equations()
    first = min(equation.index for equation in equations)
    noise = standard_noise(n, len(equations), m.d, seed)
    states = np.zeros_like(noise)
    for equation in equations:
        position = equation.index - first
        lower = factor_pd(equation.noise_cov, 'noise_cov', equation.index).lower
        value = noise[:, position, :] @ lower.T
        for source, gain in equation.gains:
            value += states[:, source - first, :] @ gain.T
        states[:, position, :] = value

    return TrajectoryBatch(m.N, m.d, states, seed, model_digest(m), first)


def empirical_covariance(batch: TrajectoryBatch) -> BlockMatrix:
    """Unbiased sample covariance of the stacked state vector."""
    if batch.n_samples < 2:
        raise ValidationError("An empirical covariance needs at least two samples")
    return BlockMatrix(np.cov(batch.stacked(), rowvar=False, ddof=1), batch.d, symmetric=True)


@dataclass(frozen=True, eq=False)
class EndpointJoint:
    """Joint law of (x_0, x_N): [[cov_x0, cross], [cross', cov_xN]]."""
    cov_x0: Array
    cov_xN: Array
    cross: Array

    def __post_init__(self):
        for name in ('cov_x0', 'cov_xN', 'cross'):
            object.__setattr__(self, name, as_block(getattr(self, name)))

    @classmethod
    def of_markov(cls, m: MarkovModel) -> 'EndpointJoint':
        covariances = markov_covariances(m)
        return cls(covariances[m.start], covariances[m.N], covariances[m.start] @ m.transition_product(m.N, m.start).T)

    def matrix(self) -> Array:
        return np.block([[self.cov_x0, self.cross], [self.cross.T, self.cov_xN]])


def destination_directed_generate(motion: MarkovModel, endpoint_joint: EndpointJoint, n: int,
                                  seed: int = DEFAULT_SEED) -> tuple[CMcModel, TrajectoryBatch]:
    """Reciprocal CM_L model moving like `motion` between endpoints drawn from `endpoint_joint`, and samples of it."""
    factor_pd(endpoint_joint.matrix(), 'endpoint joint')
    interior = induce_cml_from_markov(motion)
    boundary = boundary_from_endpoint_joint(endpoint_joint.cov_x0, endpoint_joint.cov_xN, endpoint_joint.cross)
    model = interior.with_boundary(boundary)
    return model, sample_trajectories(model, n, seed)


def standard_errors(covariance: npt.ArrayLike, n: int) -> Array:
    """Standard error of each sample covariance entry of n Gaussian draws: sqrt((C_ii C_jj + C_ij^2) / n)."""
    values = np.asarray(covariance, dtype=float)
    variances = np.diag(values)
    return np.sqrt((np.outer(variances, variances) + values ** 2) / n)


def monte_carlo_report(m: Model, n: int, seed: int = DEFAULT_SEED, sigmas: float = MC_SIGMAS,
                       analytic: Optional[BlockMatrix] = None) -> Report:
    """Compares the sample covariance of n trajectories with the exact joint covariance, entry by entry."""
    expected = analytic if analytic is not None else model_covariance(m)
    batch = sample_trajectories(m, n, seed)
    empirical = empirical_covariance(batch)
    deviations = np.abs(empirical.data - expected.data) / standard_errors(expected.data, n)

    d = m.d
    report = Report(title=f"Monte-Carlo check of {m.kind} model",
                    summary={'kind': m.kind, 'samples': n, 'seed': seed, 'model_digest': batch.model_digest,
                             'max_abs_error': max_abs(empirical.data - expected.data)})
    for position in range(expected.n_blocks):
        rows = deviations[position * d:(position + 1) * d]
        worst = float(rows.max())
        report.append(Check(f"x_{batch.start + position}", worst <= sigmas, {'sigma': worst}, sigmas, sigmas,
                            detail=f"largest deviation {worst:.2f} standard errors"))
    logging.debug("Monte-Carlo deviations up to %.2f standard errors", float(deviations.max()))
    return report
