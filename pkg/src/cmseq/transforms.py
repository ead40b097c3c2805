"""Conversions between model families.

Markov -> induced reciprocal CM_L interior, reciprocal CM_L + Markov boundary -> Markov,
CM_c <-> underlying Markov model plus a weighted endpoint vector, and the CM_c / waypoint
models implied by a joint covariance.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import numpy.typing as npt

from cmseq.blockmat import Array, BlockMatrix, Direction, factor_pd, inv_pd, max_abs, symmetrize
from cmseq.default import DEFAULT_TOL, RECOVER_BOUNDARY_FACTOR
from cmseq.exceptions import (BoundaryNotMarkov, CmseqError, DimensionMismatch, IncompleteParameters,
                              IndexOutOfRange, NotReciprocal, ValidationError)
from cmseq.models import (Blocks, Boundary, CML0k2Model, CMcModel, Identity, MarkovModel, ValidationReport,
                          as_block, as_blocks, check_reciprocal_condition, cml_precision_blocks, identity_check)
from cmseq.report import Check


def _require_valid(model) -> None:
    model.validate().raise_for_problems()


def _require_start_at_origin(m: MarkovModel) -> None:
    if m.start != 0:
        raise ValidationError(f"Expected a Markov model over [0, N], got one starting at {m.start}")


@dataclass(frozen=True, eq=False)
class HorizonAggregates:
    """m_horizon[k] = M_{N|k} for k in [0, N]; c_horizon[k] = Cov(x_N | x_k) = C_{N|k} for k in [0, N-1]."""
    m_horizon: dict[int, Array]
    c_horizon: dict[int, Array]


def horizon_aggregates(m: MarkovModel) -> HorizonAggregates:
    m_horizon = {m.N: np.eye(m.d)}
    c_horizon = {}
    accumulated = np.zeros((m.d, m.d))
    for k in range(m.N - 1, m.start - 1, -1):
        later = m_horizon[k + 1]
        m_horizon[k] = later @ m.transition[k + 1]
        accumulated = accumulated + later @ m.noise_cov[k + 1] @ later.T
        c_horizon[k] = symmetrize(accumulated)
    return HorizonAggregates(m_horizon, c_horizon)


def _induced_parameters(m: MarkovModel, aggregates: HorizonAggregates, k: int) -> tuple[Array, Array, Array]:
    """(G_{k,k-1}, G_{k,N}, G_k) of the CM_L model induced by m"""
    horizon = aggregates.m_horizon[k]
    factor = factor_pd(aggregates.c_horizon[k], 'horizon_cov', k)
    weighted = factor.solve(horizon)
    noise = inv_pd(inv_pd(m.noise_cov[k], 'noise_cov', k) + horizon.T @ weighted, 'induced noise_cov', k)
    coupling = noise @ weighted.T
    transition = m.transition[k] - coupling @ horizon @ m.transition[k]
    return transition, coupling, noise


def induce_cml_from_markov(m: MarkovModel) -> CMcModel:
    """Interior of the reciprocal CM_L model induced by a Markov model."""
    _require_valid(m)
    _require_start_at_origin(m)

    aggregates = horizon_aggregates(m)
    transition, coupling, noise = {}, {}, {}
    for k in range(1, m.N):
        transition[k], coupling[k], noise[k] = _induced_parameters(m, aggregates, k)
    logging.debug("Induced CM_L interior for N=%d, d=%d", m.N, m.d)
    return CMcModel(Direction.L, m.N, m.d, transition, coupling, noise)


def boundary_from_endpoint_joint(cov_x0: npt.ArrayLike, cov_xN: npt.ArrayLike, cross: npt.ArrayLike) -> Boundary:
    """CM_L boundary reproducing the joint law of (x_0, x_N); `cross` is Cov(x_0, x_N)."""
    cov_x0, cov_xN, cross = as_block(cov_x0), as_block(cov_xN), as_block(cross)
    if not cov_x0.shape == cov_xN.shape == cross.shape:
        raise DimensionMismatch(f"Endpoint blocks have shapes {cov_x0.shape}, {cov_xN.shape}, {cross.shape}")

    gain = factor_pd(cov_xN, 'cov_xN').solve(cross.T).T
    other = symmetrize(cov_x0 - gain @ cross.T)
    factor_pd(other, 'endpoint Schur complement')
    return Boundary(cov_xN, gain, other)


def markov_covariances(m: MarkovModel) -> dict[int, Array]:
    """Marginal covariances C_k = M_{k,k-1} C_{k-1} M_{k,k-1}' + M_k"""
    covariances = {m.start: m.noise_cov[m.start]}
    for k in range(m.start + 1, m.N + 1):
        covariances[k] = symmetrize(m.transition[k] @ covariances[k - 1] @ m.transition[k].T + m.noise_cov[k])
    return covariances


def markov_matching_boundary(m: MarkovModel) -> Boundary:
    """Boundary that completes the induced CM_L interior into the law of m itself."""
    _require_valid(m)
    _require_start_at_origin(m)

    covariances = markov_covariances(m)
    cross = covariances[0] @ m.transition_product(m.N, 0).T
    return boundary_from_endpoint_joint(covariances[0], covariances[m.N], cross)


def _boundary_markov_identity(m: CMcModel) -> Identity:
    """G_{0,N} against G_0 G_{1,0}' G_1^-1 G_{1,N}"""
    cross, other, _ = m.require_boundary().as_triple()
    rhs = other @ m.transition[1].T @ factor_pd(m.noise_cov[1], 'noise_cov', 1).solve(m.coupling[1])
    return 'boundary', cross, rhs, (cross, other, m.transition[1], m.noise_cov[1], m.coupling[1])


def recover_markov_from_reciprocal_cml(m: CMcModel, tol: float = DEFAULT_TOL) -> MarkovModel:
    """Markov model with the same law as a reciprocal CM_L model whose boundary makes it Markov.

    Raises:
        NotReciprocal: the interior violates the reciprocal condition
        BoundaryNotMarkov: the boundary does not describe a Markov member
        NotPositiveDefinite: an intermediate covariance of the ladder is singular
    """
    if m.direction is not Direction.L:
        raise ValidationError("Markov recovery expects a CM_L model")
    _require_valid(m)
    m.require_boundary().as_triple()

    reciprocal = check_reciprocal_condition(m, tol)
    if not reciprocal:
        raise NotReciprocal(f"Interior is not reciprocal, residual {reciprocal.residual:.3e} "
                            f"exceeds {reciprocal.threshold:.3e}")

    boundary = identity_check('boundary_markov', [_boundary_markov_identity(m)], RECOVER_BOUNDARY_FACTOR * tol)
    if not boundary:
        raise BoundaryNotMarkov(f"G_0,N differs from G_0 G_1,0' G_1^-1 G_1,N by {boundary.residual:.3e} "
                                f"(threshold {boundary.threshold:.3e})")

    N = m.N
    blocks = cml_precision_blocks(m)
    precision = {N: symmetrize(blocks.A[N])}
    noise = {N: inv_pd(precision[N], 'recovered noise_cov', N)}
    transition = {N: -noise[N] @ blocks.B[N - 1].T}
    for k in range(N - 2, -1, -1):
        later = transition[k + 2]
        precision[k + 1] = symmetrize(blocks.A[k + 1] - later.T @ precision[k + 2] @ later)
        noise[k + 1] = inv_pd(precision[k + 1], 'recovered noise_cov', k + 1)
        transition[k + 1] = -noise[k + 1] @ blocks.B[k].T

    first = transition[1]
    noise[0] = inv_pd(symmetrize(blocks.A[0] - first.T @ precision[1] @ first), 'recovered noise_cov', 0)
    logging.debug("Recovered Markov model, boundary residual %.3e", boundary.residual)
    return MarkovModel(N, m.d, transition, noise)


@dataclass(frozen=True, eq=False)
class Representation:
    """x_k = y_k + gamma[k] x_c with [y_k] the underlying Markov sequence, independent of x_c ~ N(0, endpoint_cov).

    The underlying model runs over [0, N-1] for direction L and over [1, N] for direction F.
    """
    direction: Direction
    underlying: MarkovModel
    gamma: Blocks
    endpoint_cov: Array

    def __post_init__(self):
        object.__setattr__(self, 'direction', Direction(self.direction))
        object.__setattr__(self, 'gamma', as_blocks(self.gamma))
        object.__setattr__(self, 'endpoint_cov', as_block(self.endpoint_cov))

    @property
    def N(self) -> int:
        return self.underlying.N + 1 if self.direction is Direction.L else self.underlying.N

    @property
    def d(self) -> int:
        return self.underlying.d

    @property
    def gamma_range(self) -> range:
        return range(0, self.N) if self.direction is Direction.L else range(1, self.N + 1)

    def validate(self) -> ValidationReport:
        report = self.underlying.validate()
        report.kind = 'representation'
        expected_start = 0 if self.direction is Direction.L else 1
        if self.underlying.start != expected_start:
            report.add(IndexOutOfRange, f"Underlying model of a {self.direction.value} representation starts at "
                                        f"{expected_start}, got {self.underlying.start}", 'underlying')
        if not report:
            return report

        missing = [k for k in self.gamma_range if k not in self.gamma]
        if missing:
            report.add(IncompleteParameters, f"gamma lacks entries for k in {missing}", 'gamma')
        for k, weight in self.gamma.items():
            if k not in self.gamma_range:
                report.add(IndexOutOfRange, f"gamma[{k}] is not a weight of this representation", 'gamma', k)
            elif weight.shape != (self.d, self.d):
                report.add(DimensionMismatch, f"gamma[{k}] has shape {weight.shape}", 'gamma', k)

        try:
            factor_pd(self.endpoint_cov, 'endpoint_cov')
        except CmseqError as exc:
            report.add(type(exc), str(exc), 'endpoint_cov')
        return report

    def weights(self) -> Array:
        """Stacked weights of x_c in x_0..x_N, an (N+1)d x d matrix."""
        identity = np.eye(self.d)
        if self.direction is Direction.L:
            return np.vstack([*(self.gamma[k] for k in range(self.N)), identity])
        return np.vstack([identity, *(self.gamma[k] for k in range(1, self.N + 1))])


def decompose_to_representation(m: CMcModel) -> Representation:
    """Splits a CM_c model into its underlying Markov model, weights and endpoint covariance."""
    _require_valid(m)
    boundary = m.require_boundary()
    N, d = m.N, m.d

    if m.direction is Direction.L:
        cross, other, endpoint = boundary.as_triple()
        gamma = {0: cross}
        for k in range(1, N):
            gamma[k] = m.transition[k] @ gamma[k - 1] + m.coupling[k]
        underlying = MarkovModel(N - 1, d,
                                 {k: m.transition[k] for k in range(1, N)},
                                 {0: other, **{k: m.noise_cov[k] for k in range(1, N)}})
        return Representation(Direction.L, underlying, gamma, endpoint)

    gamma = {1: m.coupling[1]}
    for k in range(2, N + 1):
        gamma[k] = m.transition[k] @ gamma[k - 1] + m.coupling[k]
    underlying = MarkovModel(N, d,
                             {k: m.transition[k] for k in range(2, N + 1)},
                             {k: m.noise_cov[k] for k in range(1, N + 1)},
                             start=1)
    return Representation(Direction.F, underlying, gamma, boundary.endpoint_cov)


def construct_from_representation(r: Representation) -> CMcModel:
    """CM_c model of the sequence y_k + gamma[k] x_c."""
    r.validate().raise_for_problems()
    N, d, u = r.N, r.d, r.underlying

    if r.direction is Direction.L:
        interior = range(1, N)
        return CMcModel(Direction.L, N, d,
                        {k: u.transition[k] for k in interior},
                        {k: r.gamma[k] - u.transition[k] @ r.gamma[k - 1] for k in interior},
                        {k: u.noise_cov[k] for k in interior},
                        Boundary(r.endpoint_cov, r.gamma[0], u.noise_cov[0]))

    later = range(2, N + 1)
    return CMcModel(Direction.F, N, d,
                    {k: u.transition[k] for k in later},
                    {1: r.gamma[1], **{k: r.gamma[k] - u.transition[k] @ r.gamma[k - 1] for k in later}},
                    {k: u.noise_cov[k] for k in range(1, N + 1)},
                    Boundary(r.endpoint_cov))


class RepresentationClass(Enum):
    general_cm = "general_cm"
    reciprocal = "reciprocal"
    markov = "markov"


def _representation_identity(r: Representation, k: int) -> Identity:
    """U_k^-1 (Gamma_k - U_{k,k-1} Gamma_{k-1}) against U_{k+1,k}' U_{k+1}^-1 (Gamma_{k+1} - U_{k+1,k} Gamma_k)"""
    u = r.underlying

    def innovation(n: int) -> Array:
        if n == u.start:
            return r.gamma[n]
        return r.gamma[n] - u.transition[n] @ r.gamma[n - 1]

    noise, next_noise, next_transition = u.noise_cov[k], u.noise_cov[k + 1], u.transition[k + 1]
    current, following = innovation(k), innovation(k + 1)
    lhs = factor_pd(noise, 'underlying noise_cov', k).solve(current)
    rhs = next_transition.T @ factor_pd(next_noise, 'underlying noise_cov', k + 1).solve(following)
    return k, lhs, rhs, (noise, next_noise, next_transition, current, following)


def representation_conditions(r: Representation, tol: float = DEFAULT_TOL) -> tuple[Check, Check]:
    """(reciprocal, markov) checks stated on the representation parameters."""
    r.validate().raise_for_problems()
    N = r.N
    indices = range(1, N - 1) if r.direction is Direction.L else range(2, N)
    identities = [_representation_identity(r, k) for k in indices]
    reciprocal = identity_check('reciprocal', identities, tol)

    if r.direction is Direction.L:
        _, *terms = _representation_identity(r, 0)
        endpoint: Identity = ('boundary', *terms)
    else:
        last = r.gamma[N] - r.underlying.transition[N] @ r.gamma[N - 1]
        endpoint = ('boundary', last, np.zeros_like(last), (last, r.gamma[N], r.gamma[N - 1]))
    markov = identity_check('markov', [*identities, endpoint], tol)
    return reciprocal, markov


def classify_representation(r: Representation, tol: float = DEFAULT_TOL) -> RepresentationClass:
    reciprocal, markov = representation_conditions(r, tol)
    if markov:
        return RepresentationClass.markov
    if reciprocal:
        return RepresentationClass.reciprocal
    return RepresentationClass.general_cm


def underlying_markov_of_induced(m: MarkovModel, boundary: Optional[Boundary] = None) -> MarkovModel:
    """Underlying Markov model over [0, N-1] of the CM_L model induced by m.

    Only its initial covariance U_0 depends on the boundary; it defaults to that of
    `markov_matching_boundary(m)`.
    """
    _require_valid(m)
    _require_start_at_origin(m)
    aggregates = horizon_aggregates(m)

    transition, noise = {}, {}
    for k in range(1, m.N):
        horizon = aggregates.m_horizon[k]
        weighted = factor_pd(aggregates.c_horizon[k], 'horizon_cov', k).solve(horizon)
        noise[k] = inv_pd(inv_pd(m.noise_cov[k], 'noise_cov', k) + horizon.T @ weighted, 'underlying noise_cov', k)
        transition[k] = m.transition[k] - (noise[k] @ weighted.T) @ aggregates.m_horizon[k - 1]

    closing = boundary if boundary is not None else markov_matching_boundary(m)
    noise[0] = closing.as_triple()[1]
    return MarkovModel(m.N - 1, m.d, transition, noise)


def same_underlying(a: CMcModel, b: CMcModel, tol: float = DEFAULT_TOL) -> bool:
    """Whether two CM_c models share their underlying Markov model, up to its initial condition."""
    if a.direction is not b.direction or a.N != b.N or a.d != b.d:
        return False

    indices = range(1, a.N) if a.direction is Direction.L else range(2, a.N + 1)
    pairs = [(a.transition[k], b.transition[k]) for k in indices] + [(a.noise_cov[k], b.noise_cov[k]) for k in indices]
    scale = 1.0 + max(max(max_abs(x), max_abs(y)) for x, y in pairs)
    return all(max_abs(x - y) <= tol * scale for x, y in pairs)


def _conditional(covariance: BlockMatrix, k: int, given: list[int]) -> tuple[list[Array], Array]:
    gain, noise = covariance.regression([k], given)
    return covariance.split_gain(gain), noise


def _check_covariance(covariance: BlockMatrix, minimum_N: int) -> None:
    if covariance.N < minimum_N:
        raise IndexOutOfRange(f"Covariance over [0, {covariance.N}] is too short, need N >= {minimum_N}")
    factor_pd(covariance, 'covariance')


def cm_model_from_covariance(covariance: BlockMatrix, direction: Direction | str) -> CMcModel:
    """CM_c model whose parameters are the conditional laws of a CM_c covariance.

    L: x_N, then x_0 | x_N, then x_k | x_{k-1}, x_N. F: x_0, then x_1 | x_0, then x_k | x_{k-1}, x_0.
    The law of the model equals `covariance` iff the covariance is CM_c.
    """
    direction = Direction(direction)
    _check_covariance(covariance, 3)
    N, d = covariance.N, covariance.block_dim
    transition, coupling, noise = {}, {}, {}

    if direction is Direction.L:
        (cross,), other = _conditional(covariance, 0, [N])
        for k in range(1, N):
            (transition[k], coupling[k]), noise[k] = _conditional(covariance, k, [k - 1, N])
        boundary = Boundary(covariance.block(N, N), cross, other)
    else:
        (coupling[1],), noise[1] = _conditional(covariance, 1, [0])
        for k in range(2, N + 1):
            (transition[k], coupling[k]), noise[k] = _conditional(covariance, k, [k - 1, 0])
        boundary = Boundary(covariance.block(0, 0))
    return CMcModel(direction, N, d, transition, coupling, noise, boundary)


def cml_0k2_model_from_covariance(covariance: BlockMatrix, k2: int) -> CML0k2Model:
    """Waypoint model whose parameters are the conditional laws of a CM_L and [0,k2]-CM_L covariance."""
    _check_covariance(covariance, 4)
    N, d = covariance.N, covariance.block_dim
    if not 2 <= k2 <= N - 2:
        raise IndexOutOfRange(f"Waypoint k2={k2} must lie in [2, N-2] for N={N}")

    transition, waypoint, destination, noise = {}, {}, {}, {k2: covariance.block(k2, k2)}
    (waypoint[0],), noise[0] = _conditional(covariance, 0, [k2])
    for k in range(1, k2):
        (transition[k], waypoint[k]), noise[k] = _conditional(covariance, k, [k - 1, k2])
    gains, noise[N] = _conditional(covariance, N, list(range(k2 + 1)))
    for k in range(k2 + 1, N):
        (transition[k], destination[k]), noise[k] = _conditional(covariance, k, [k - 1, N])
    return CML0k2Model(N, d, k2, transition, waypoint, dict(enumerate(gains)), destination, noise)
