"""Parameter sets of Markov, CM_c and waypoint sequence models.

Every model is a recursion x_k = sum_j G_{k,j} x_j + e_k over a white zero-mean Gaussian
noise e_k ~ N(0, G_k). `Model.equations()` lists these recursions in generative order, which
is all the precision assembly and the sampler need to know about a model.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Hashable, Iterable, Mapping, Optional, Type

import numpy as np
import numpy.typing as npt

from cmseq.blockmat import Array, Direction, factor_pd, max_abs
from cmseq.default import DEFAULT_TOL
from cmseq.exceptions import (CmseqError, DimensionMismatch, IncompleteParameters, IndexOutOfRange,
                              NotPositiveDefinite, NotSymmetric, ValidationError)
from cmseq.report import Check
from cmseq.util import UniqueDict

Blocks = Mapping[int, Array]


def as_block(value: npt.ArrayLike) -> Array:
    block = np.atleast_2d(np.array(value, dtype=float))
    block.setflags(write=False)
    return block


def as_blocks(values: Optional[Mapping[int, npt.ArrayLike]]) -> Blocks:
    return MappingProxyType({int(index): as_block(value) for index, value in sorted((values or {}).items())})


@dataclass(frozen=True, eq=False)
class Equation:
    """x_index = sum(gain @ x_source for source, gain in gains) + e_index, Cov(e_index) = noise_cov"""
    index: int
    gains: tuple[tuple[int, Array], ...]
    noise_cov: Array


@dataclass(frozen=True, eq=False)
class Problem:
    error: Type[CmseqError]
    message: str
    label: Optional[str] = None
    index: Optional[int] = None


@dataclass
class ValidationReport:
    kind: str
    problems: list[Problem] = field(default_factory=list)

    def __bool__(self):
        return not self.problems

    def add(self, error: Type[CmseqError], message: str, label: Optional[str] = None, index: Optional[int] = None):
        self.problems.append(Problem(error, message, label, index))

    def of_type(self, error: Type[CmseqError]) -> list[Problem]:
        return [problem for problem in self.problems if issubclass(problem.error, error)]

    def raise_for_problems(self):
        if not self.problems:
            return

        first = self.problems[0]
        if first.error is NotPositiveDefinite:
            raise NotPositiveDefinite(first.message, first.label, first.index)
        if first.error is IncompleteParameters:
            missing = [problem.label for problem in self.of_type(IncompleteParameters) if problem.label]
            raise IncompleteParameters(first.message, missing)
        raise first.error(first.message)

    def __str__(self):
        if not self.problems:
            return f"{self.kind} model is valid"
        return "\n".join(f"{problem.error.__name__}: {problem.message}" for problem in self.problems)


class _Validator:
    def __init__(self, report: ValidationReport, d: int):
        self.report = report
        self.d = d

    def block(self, label: str, value: Array, index: Optional[int] = None, pd: bool = False):
        where = label if index is None else f"{label}[{index}]"
        if value.shape != (self.d, self.d):
            self.report.add(DimensionMismatch, f"{where} has shape {value.shape}, expected {(self.d, self.d)}",
                            label, index)
            return
        if not np.all(np.isfinite(value)):
            self.report.add(ValidationError, f"{where} has non-finite entries", label, index)
            return
        if pd:
            try:
                factor_pd(value, label, index)
            except (NotPositiveDefinite, NotSymmetric) as exc:
                self.report.add(type(exc), str(exc), label, index)

    def blocks(self, label: str, blocks: Blocks, indices: Iterable[int], pd: bool = False):
        expected = set(indices)
        missing = sorted(expected - blocks.keys())
        if missing:
            self.report.add(IncompleteParameters, f"{label} lacks entries for k in {missing}", label)
        for extra in sorted(blocks.keys() - expected):
            self.report.add(IndexOutOfRange, f"{label}[{extra}] is not a parameter of this model", label, extra)
        for index in sorted(expected & blocks.keys()):
            self.block(label, blocks[index], index, pd)


class Model(ABC):
    kinds: tuple[str, ...]
    N: int
    d: int

    @classmethod
    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if not hasattr(cls, 'kinds'):
            logging.warning("Model definition %s lacks the `kinds` attribute.", cls.__name__)
            return

        for kind in cls.kinds:
            model_kinds[kind] = cls

    @property
    @abstractmethod
    def kind(self) -> str:
        ...

    @abstractmethod
    def validate(self) -> ValidationReport:
        ...

    @abstractmethod
    def equations(self) -> list[Equation]:
        """Model recursions in generative order: every source state precedes its dependents."""

    @abstractmethod
    def parameters(self) -> dict[str, Blocks]:
        ...

    @property
    def times(self) -> range:
        return range(self.N + 1)

    def _check_dimension(self, report: ValidationReport):
        if self.d < 1:
            report.add(DimensionMismatch, f"State dimension must be positive, got {self.d}", 'd')


model_kinds: dict[str, Type[Model]] = UniqueDict()


@dataclass(frozen=True, eq=False)
class MarkovModel(Model):
    """x_start ~ N(0, M_start), x_k = M_{k,k-1} x_{k-1} + e_k with Cov(e_k) = M_k for k in [start+1, N]."""
    kinds = ('markov',)

    N: int
    d: int
    transition: Blocks
    noise_cov: Blocks
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'transition', as_blocks(self.transition))
        object.__setattr__(self, 'noise_cov', as_blocks(self.noise_cov))

    @classmethod
    def time_invariant(cls, N: int, transition: npt.ArrayLike, noise_cov: npt.ArrayLike,
                       initial_cov: Optional[npt.ArrayLike] = None, start: int = 0) -> 'MarkovModel':
        gain = as_block(transition)
        noise = as_block(noise_cov)
        initial = noise if initial_cov is None else as_block(initial_cov)
        return cls(N, len(gain),
                   {k: gain for k in range(start + 1, N + 1)},
                   {start: initial, **{k: noise for k in range(start + 1, N + 1)}},
                   start)

    @property
    def kind(self) -> str:
        return 'markov'

    @property
    def times(self) -> range:
        return range(self.start, self.N + 1)

    def transition_product(self, k: int, j: int) -> Array:
        """M_{k|j} = M_{k,k-1} ... M_{j+1,j}, the identity for k == j."""
        if not self.start <= j <= k <= self.N:
            raise IndexOutOfRange(f"Transition product M_{{{k}|{j}}} outside [{self.start}, {self.N}]")
        product = np.eye(self.d)
        for n in range(j + 1, k + 1):
            product = self.transition[n] @ product
        return product

    def validate(self) -> ValidationReport:
        report = ValidationReport(self.kind)
        self._check_dimension(report)
        if self.N - self.start < 2:
            report.add(IndexOutOfRange, f"A Markov model needs at least 3 states, got [{self.start}, {self.N}]", 'N')
            return report

        validator = _Validator(report, self.d)
        validator.blocks('transition', self.transition, range(self.start + 1, self.N + 1))
        validator.blocks('noise_cov', self.noise_cov, self.times, pd=True)
        return report

    def equations(self) -> list[Equation]:
        return [Equation(self.start, (), self.noise_cov[self.start]),
                *(Equation(k, ((k - 1, self.transition[k]),), self.noise_cov[k])
                  for k in range(self.start + 1, self.N + 1))]

    def parameters(self) -> dict[str, Blocks]:
        return {'transition': self.transition, 'noise_cov': self.noise_cov}


@dataclass(frozen=True, eq=False)
class Boundary:
    """Endpoint equations x_N = e_N, x_0 = G_{0,N} x_N + e_0 of a CM_L model.

    A CM_F model starts its recursion at x_0 = e_0 and only uses `endpoint_cov` (G_0).
    """
    endpoint_cov: Array
    cross_gain: Optional[Array] = None
    other_end_cov: Optional[Array] = None

    def __post_init__(self):
        object.__setattr__(self, 'endpoint_cov', as_block(self.endpoint_cov))
        if self.cross_gain is not None:
            object.__setattr__(self, 'cross_gain', as_block(self.cross_gain))
        if self.other_end_cov is not None:
            object.__setattr__(self, 'other_end_cov', as_block(self.other_end_cov))

    @property
    def is_complete(self) -> bool:
        return self.cross_gain is not None and self.other_end_cov is not None

    def as_triple(self) -> tuple[Array, Array, Array]:
        """(G_{0,N}, G_0, G_N)"""
        if not self.is_complete:
            raise IncompleteParameters("CM_L boundary needs cross_gain and other_end_cov",
                                       ['cross_gain', 'other_end_cov'])
        assert self.cross_gain is not None and self.other_end_cov is not None
        return self.cross_gain, self.other_end_cov, self.endpoint_cov


@dataclass(frozen=True, eq=False)
class OriginBoundary:
    """Origin-first endpoint equations x_0 = e'_0, x_N = G_{N,0} x_0 + e'_N."""
    origin_cov: Array
    destination_gain: Array
    destination_noise_cov: Array

    def __post_init__(self):
        for name in ('origin_cov', 'destination_gain', 'destination_noise_cov'):
            object.__setattr__(self, name, as_block(getattr(self, name)))


def to_origin_form(boundary: Boundary) -> OriginBoundary:
    cross, other, endpoint = boundary.as_triple()
    origin_cov = cross @ endpoint @ cross.T + other
    destination_gain = factor_pd(origin_cov, 'origin_cov').solve(cross @ endpoint).T
    noise = endpoint - destination_gain @ cross @ endpoint
    return OriginBoundary(origin_cov, destination_gain, 0.5 * (noise + noise.T))


def from_origin_form(origin: OriginBoundary) -> Boundary:
    gain = origin.destination_gain
    endpoint = gain @ origin.origin_cov @ gain.T + origin.destination_noise_cov
    cross = factor_pd(endpoint, 'endpoint_cov').solve(gain @ origin.origin_cov).T
    other = origin.origin_cov - cross @ gain @ origin.origin_cov
    return Boundary(endpoint, cross, 0.5 * (other + other.T))


@dataclass(frozen=True, eq=False)
class CMcModel(Model):
    """CM_c recursion with c = N (direction L) or c = 0 (direction F).

    L: x_k = G_{k,k-1} x_{k-1} + G_{k,N} x_N + e_k for k in [1, N-1], closed by a `Boundary`.
    F: x_1 = coupling[1] x_0 + e_1, x_k = G_{k,k-1} x_{k-1} + G_{k,0} x_0 + e_k for k in [2, N],
    where coupling[1] is the single coefficient of x_0 in the first step.
    """
    kinds = ('cml', 'cmf')

    direction: Direction
    N: int
    d: int
    transition: Blocks
    coupling: Blocks
    noise_cov: Blocks
    boundary: Optional[Boundary] = None

    def __post_init__(self):
        object.__setattr__(self, 'direction', Direction(self.direction))
        for name in ('transition', 'coupling', 'noise_cov'):
            object.__setattr__(self, name, as_blocks(getattr(self, name)))

    @property
    def kind(self) -> str:
        return 'cml' if self.direction is Direction.L else 'cmf'

    @property
    def c(self) -> int:
        return self.N if self.direction is Direction.L else 0

    @property
    def interior_ranges(self) -> dict[str, range]:
        if self.direction is Direction.L:
            interior = range(1, self.N)
            return {'transition': interior, 'coupling': interior, 'noise_cov': interior}
        return {'transition': range(2, self.N + 1),
                'coupling': range(1, self.N + 1),
                'noise_cov': range(1, self.N + 1)}

    def with_boundary(self, boundary: Optional[Boundary]) -> 'CMcModel':
        return replace(self, boundary=boundary)

    def interior(self) -> 'CMcModel':
        return replace(self, boundary=None)

    def require_boundary(self) -> Boundary:
        if self.boundary is None:
            raise IncompleteParameters(f"{self.kind} model has no boundary condition", ['boundary'])
        return self.boundary

    def noise(self, k: int) -> Array:
        """G_k for every k in [0, N], boundary covariances included."""
        if self.direction is Direction.L:
            if k == self.N:
                return self.require_boundary().endpoint_cov
            if k == 0:
                return self.require_boundary().as_triple()[1]
        elif k == 0:
            return self.require_boundary().endpoint_cov
        return self.noise_cov[k]

    def coupling_of(self, k: int) -> Array:
        """G_{k,c}, with G_{0,N} taken from the boundary of a CM_L model."""
        if self.direction is Direction.L and k == 0:
            return self.require_boundary().as_triple()[0]
        return self.coupling[k]

    def first_step_halves(self) -> tuple[Array, Array]:
        """Transition and coupling parts of the first CM_F step under the equal split."""
        if self.direction is not Direction.F:
            raise ValidationError("Only CM_F models have a combined first-step coefficient")
        half = 0.5 * self.coupling[1]
        return half, half

    def validate(self) -> ValidationReport:
        report = ValidationReport(self.kind)
        self._check_dimension(report)
        if self.N < 3:
            report.add(IndexOutOfRange, f"A CM_c model needs N >= 3, got {self.N}", 'N')
            return report

        validator = _Validator(report, self.d)
        ranges = self.interior_ranges
        validator.blocks('transition', self.transition, ranges['transition'])
        validator.blocks('coupling', self.coupling, ranges['coupling'])
        validator.blocks('noise_cov', self.noise_cov, ranges['noise_cov'], pd=True)

        if self.boundary is None:
            return report

        validator.block('endpoint_cov', self.boundary.endpoint_cov, pd=True)
        if self.direction is Direction.L:
            if not self.boundary.is_complete:
                report.add(IncompleteParameters, "CM_L boundary needs cross_gain and other_end_cov", 'boundary')
            else:
                validator.block('cross_gain', self.boundary.cross_gain)
                validator.block('other_end_cov', self.boundary.other_end_cov, pd=True)
        elif self.boundary.cross_gain is not None or self.boundary.other_end_cov is not None:
            report.add(ValidationError, "CM_F boundary only takes endpoint_cov, G_{N,0} is coupling[N]", 'boundary')
        return report

    def equations(self) -> list[Equation]:
        boundary = self.require_boundary()
        if self.direction is Direction.L:
            cross, other, endpoint = boundary.as_triple()
            return [Equation(self.N, (), endpoint),
                    Equation(0, ((self.N, cross),), other),
                    *(Equation(k, ((k - 1, self.transition[k]), (self.N, self.coupling[k])), self.noise_cov[k])
                      for k in range(1, self.N))]

        return [Equation(0, (), boundary.endpoint_cov),
                Equation(1, ((0, self.coupling[1]),), self.noise_cov[1]),
                *(Equation(k, ((k - 1, self.transition[k]), (0, self.coupling[k])), self.noise_cov[k])
                  for k in range(2, self.N + 1))]

    def parameters(self) -> dict[str, Blocks]:
        return {'transition': self.transition, 'coupling': self.coupling, 'noise_cov': self.noise_cov}


@dataclass(frozen=True, eq=False)
class CML0k2Model(Model):
    """CM_L sequence that is also CM_L over [0, k2].

    x_k2 = e_k2, x_0 = G_{0,k2} x_k2 + e_0,
    x_k = G_{k,k-1} x_{k-1} + G_{k,k2} x_k2 + e_k              k in [1, k2-1]
    x_N = sum_{i <= k2} G_{N,i} x_i + e_N
    x_k = G_{k,k-1} x_{k-1} + G_{k,N} x_N + e_k                k in [k2+1, N-1]

    waypoint_coupling[k] is G_{k,k2} (k in [0, k2-1]), terminal_gain[i] is G_{N,i}
    and destination_coupling[k] is G_{k,N}.
    """
    kinds = ('cml_0k2',)

    N: int
    d: int
    k2: int
    transition: Blocks
    waypoint_coupling: Blocks
    terminal_gain: Blocks
    destination_coupling: Blocks
    noise_cov: Blocks

    def __post_init__(self):
        for name in ('transition', 'waypoint_coupling', 'terminal_gain', 'destination_coupling', 'noise_cov'):
            object.__setattr__(self, name, as_blocks(getattr(self, name)))

    @property
    def kind(self) -> str:
        return 'cml_0k2'

    @property
    def first_segment(self) -> range:
        return range(1, self.k2)

    @property
    def second_segment(self) -> range:
        return range(self.k2 + 1, self.N)

    def validate(self) -> ValidationReport:
        report = ValidationReport(self.kind)
        self._check_dimension(report)
        if not 2 <= self.k2 <= self.N - 2:
            report.add(IndexOutOfRange, f"Waypoint k2={self.k2} must lie in [2, N-2] for N={self.N}", 'k2')
            return report

        validator = _Validator(report, self.d)
        validator.blocks('transition', self.transition, [*self.first_segment, *self.second_segment])
        validator.blocks('waypoint_coupling', self.waypoint_coupling, range(self.k2))
        validator.blocks('terminal_gain', self.terminal_gain, range(self.k2 + 1))
        validator.blocks('destination_coupling', self.destination_coupling, self.second_segment)
        validator.blocks('noise_cov', self.noise_cov, self.times, pd=True)
        return report

    def equations(self) -> list[Equation]:
        k2, N = self.k2, self.N
        return [Equation(k2, (), self.noise_cov[k2]),
                Equation(0, ((k2, self.waypoint_coupling[0]),), self.noise_cov[0]),
                *(Equation(k, ((k - 1, self.transition[k]), (k2, self.waypoint_coupling[k])), self.noise_cov[k])
                  for k in self.first_segment),
                Equation(N, tuple((i, self.terminal_gain[i]) for i in range(k2 + 1)), self.noise_cov[N]),
                *(Equation(k, ((k - 1, self.transition[k]), (N, self.destination_coupling[k])), self.noise_cov[k])
                  for k in self.second_segment)]

    def parameters(self) -> dict[str, Blocks]:
        return {'transition': self.transition,
                'waypoint_coupling': self.waypoint_coupling,
                'terminal_gain': self.terminal_gain,
                'destination_coupling': self.destination_coupling,
                'noise_cov': self.noise_cov}


Identity = tuple[Hashable, Array, Array, tuple[Array, ...]]


def identity_check(name: str, identities: Iterable[Identity], tol: float) -> Check:
    """Compares lhs and rhs of every identity against tol * (1 + max|involved block|)."""
    if tol <= 0:
        raise ValueError("Tolerance must be positive")

    residuals: dict[Hashable, float] = {}
    thresholds: dict[Hashable, float] = {}
    for key, lhs, rhs, involved in identities:
        residuals[key] = max_abs(lhs - rhs)
        thresholds[key] = tol * (1.0 + max(max_abs(block) for block in (lhs, rhs, *involved)))

    if not residuals:
        return Check(name, True, residuals, tol, tol)

    # reported threshold is that of the identity closest to failing
    binding = max(residuals, key=lambda key: residuals[key] / thresholds[key])
    passed = all(residuals[key] <= thresholds[key] for key in residuals)
    logging.debug("%s condition: residuals %s, thresholds %s", name, residuals, thresholds)
    return Check(name, passed, residuals, tol, thresholds[binding])


def _neighbour_identity(m: CMcModel, k: int) -> Identity:
    """G_k^-1 G_{k,c} against G_{k+1,k}' G_{k+1}^-1 G_{k+1,c}"""
    noise, coupling = m.noise(k), m.coupling_of(k)
    next_noise, next_transition, next_coupling = m.noise(k + 1), m.transition[k + 1], m.coupling_of(k + 1)
    lhs = factor_pd(noise, 'noise_cov', k).solve(coupling)
    rhs = next_transition.T @ factor_pd(next_noise, 'noise_cov', k + 1).solve(next_coupling)
    return k, lhs, rhs, (noise, coupling, next_noise, next_transition, next_coupling)


def reciprocal_range(m: CMcModel) -> range:
    return range(1, m.N - 1) if m.direction is Direction.L else range(2, m.N)


def check_reciprocal_condition(m: CMcModel, tol: float = DEFAULT_TOL) -> Check:
    """Whether the CM_c interior describes a reciprocal sequence."""
    return identity_check('reciprocal', (_neighbour_identity(m, k) for k in reciprocal_range(m)), tol)


def check_markov_condition(m: CMcModel, tol: float = DEFAULT_TOL) -> Check:
    """Reciprocity plus the endpoint identity, G_0^-1 G_{0,N} = G_{1,0}' G_1^-1 G_{1,N} (L) or G_{N,0} = 0 (F)."""
    identities = [_neighbour_identity(m, k) for k in reciprocal_range(m)]
    if m.direction is Direction.L:
        _, *terms = _neighbour_identity(m, 0)
        identities.append(('boundary', *terms))
    else:
        last = m.coupling[m.N]
        identities.append(('boundary', last, np.zeros_like(last), (last,)))
    return identity_check('markov', identities, tol)


def check_markov_condition_origin_form(m: CMcModel, origin: OriginBoundary, tol: float = DEFAULT_TOL) -> Check:
    """Markov identity for a CM_L interior closed by an origin-first boundary:
    G_N^-1 G_{N,0} = G_{1,N}' G_1^-1 G_{1,0}, with G_N the noise covariance of x_N given x_0."""
    if m.direction is not Direction.L:
        raise ValidationError("Origin-first boundaries close CM_L models only")

    identities: list[Identity] = [_neighbour_identity(m, k) for k in reciprocal_range(m)]
    noise = origin.destination_noise_cov
    lhs = factor_pd(noise, 'destination_noise_cov').solve(origin.destination_gain)
    rhs = m.coupling[1].T @ factor_pd(m.noise_cov[1], 'noise_cov', 1).solve(m.transition[1])
    identities.append(('boundary', lhs, rhs, (noise, origin.destination_gain, m.coupling[1], m.noise_cov[1])))
    return identity_check('markov', identities, tol)


def check_window_cmf_condition(m: CMcModel, k1: int, tol: float = DEFAULT_TOL) -> Check:
    """Whether a CM_L model is also [k1,N]-CM_F."""
    if m.direction is not Direction.L:
        raise ValidationError("The [k1,N]-CM_F window condition applies to CM_L models")
    if not 0 <= k1 <= m.N:
        raise IndexOutOfRange(f"k1={k1} outside [0, {m.N}]")

    # windows of fewer than four states are always CM_F
    indices = range(k1 + 1, m.N - 1) if k1 <= m.N - 3 else range(0)
    return identity_check(f'window_cmf[{k1}]', (_neighbour_identity(m, k) for k in indices), tol)


def check_intersection_conditions(m: CML0k2Model, tol: float = DEFAULT_TOL) -> Check:
    """Whether a waypoint model is CM_L over [0, N] as well as over [0, k2]."""
    k2, N = m.k2, m.N
    terminal_noise = m.noise_cov[N]
    terminal = factor_pd(terminal_noise, 'noise_cov', N)

    def identities():
        for j in range(k2 - 2):
            for i in range(j + 2, k2):
                product = m.terminal_gain[j].T @ terminal.solve(m.terminal_gain[i])
                yield (f'cross[{j},{i}]', product, np.zeros_like(product),
                       (m.terminal_gain[j], m.terminal_gain[i], terminal_noise))

        for l in range(k2 - 1):
            noise, coupling = m.noise_cov[l], m.waypoint_coupling[l]
            next_noise, next_transition, next_coupling = (m.noise_cov[l + 1], m.transition[l + 1],
                                                          m.waypoint_coupling[l + 1])
            lhs = factor_pd(noise, 'noise_cov', l).solve(coupling)
            rhs = (next_transition.T @ factor_pd(next_noise, 'noise_cov', l + 1).solve(next_coupling)
                   + m.terminal_gain[l].T @ terminal.solve(m.terminal_gain[k2]))
            yield (f'waypoint[{l}]', lhs, rhs,
                   (noise, coupling, next_noise, next_transition, next_coupling,
                    m.terminal_gain[l], m.terminal_gain[k2], terminal_noise))

    return identity_check('intersection', identities(), tol)


@dataclass(frozen=True, eq=False)
class CMLPrecisionBlocks:
    """Nonzero blocks of a CM_L precision: diagonal A_k, superdiagonal B_k = C^-1[k, k+1]
    and last column D_k = C^-1[k, N]."""
    A: list[Array]
    B: list[Array]
    D: list[Array]


def cml_precision_blocks(m: CMcModel) -> CMLPrecisionBlocks:
    if m.direction is not Direction.L:
        raise ValidationError("Closed-form precision blocks are defined for CM_L models")

    N = m.N
    inverse = [factor_pd(m.noise(k), 'noise_cov', k).inverse() for k in range(N + 1)]
    coupling = [m.coupling_of(k) for k in range(N)]

    A = [inverse[k] + m.transition[k + 1].T @ inverse[k + 1] @ m.transition[k + 1] for k in range(N - 1)]
    A.append(inverse[N - 1])
    A.append(inverse[N] + sum(coupling[k].T @ inverse[k] @ coupling[k] for k in range(N)))

    B = [-m.transition[k + 1].T @ inverse[k + 1] for k in range(N - 1)]
    B.append(-inverse[N - 1] @ coupling[N - 1])

    D = [-inverse[k] @ coupling[k] + m.transition[k + 1].T @ inverse[k + 1] @ coupling[k + 1] for k in range(N - 1)]
    return CMLPrecisionBlocks(A, B, D)


def project_intersection(m: CML0k2Model) -> CML0k2Model:
    """Solves the waypoint identities for G_{l,k2}, l = k2-2 .. 0, keeping every other parameter.

    The cross products G_{N,j}' G_N^-1 G_{N,i} are left alone; choose terminal gains that make them vanish.
    """
    k2, N = m.k2, m.N
    terminal = factor_pd(m.noise_cov[N], 'noise_cov', N)
    coupling = dict(m.waypoint_coupling)
    for l in range(k2 - 2, -1, -1):
        rhs = (m.transition[l + 1].T @ factor_pd(m.noise_cov[l + 1], 'noise_cov', l + 1).solve(coupling[l + 1])
               + m.terminal_gain[l].T @ terminal.solve(m.terminal_gain[k2]))
        coupling[l] = m.noise_cov[l] @ rhs
    return replace(m, waypoint_coupling=coupling)


def random_gain(d: int, rng: np.random.Generator, max_norm: float = 1.2) -> Array:
    gain = rng.uniform(-1.0, 1.0, size=(d, d))
    norm = np.linalg.norm(gain, 2)
    if norm > max_norm:
        gain *= max_norm / norm
    return gain


def random_covariance(d: int, rng: np.random.Generator) -> Array:
    factor = rng.uniform(-1.0, 1.0, size=(d, d))
    return factor @ factor.T + 0.1 * np.eye(d)


def random_markov_model(N: int, d: int, rng: np.random.Generator, start: int = 0) -> MarkovModel:
    return MarkovModel(N, d,
                       {k: random_gain(d, rng) for k in range(start + 1, N + 1)},
                       {k: random_covariance(d, rng) for k in range(start, N + 1)},
                       start)


def random_boundary(d: int, rng: np.random.Generator, direction: Direction = Direction.L) -> Boundary:
    if direction is Direction.F:
        return Boundary(random_covariance(d, rng))
    return Boundary(random_covariance(d, rng), random_gain(d, rng), random_covariance(d, rng))


def random_cm_model(direction: Direction, N: int, d: int, rng: np.random.Generator,
                    with_boundary: bool = True) -> CMcModel:
    """CM_c model with independent random parameters; generically neither reciprocal nor Markov."""
    shell = CMcModel(direction, N, d, {}, {}, {})
    ranges = shell.interior_ranges
    return replace(shell,
                   transition=as_blocks({k: random_gain(d, rng) for k in ranges['transition']}),
                   coupling=as_blocks({k: random_gain(d, rng) for k in ranges['coupling']}),
                   noise_cov=as_blocks({k: random_covariance(d, rng) for k in ranges['noise_cov']}),
                   boundary=random_boundary(d, rng, shell.direction) if with_boundary else None)


def random_cml_0k2_model(N: int, d: int, k2: int, rng: np.random.Generator, project: bool = True) -> CML0k2Model:
    """Random waypoint model whose terminal gains act on x_k2 and one adjacent pair of earlier states.

    With `project` the waypoint couplings are solved so that the model satisfies the intersection conditions.
    """
    pair = int(rng.integers(0, k2 - 1))
    terminal_gain = {i: random_gain(d, rng) if i in (pair, pair + 1, k2) else np.zeros((d, d))
                     for i in range(k2 + 1)}
    model = CML0k2Model(N, d, k2,
                        transition={k: random_gain(d, rng) for k in [*range(1, k2), *range(k2 + 1, N)]},
                        waypoint_coupling={k: random_gain(d, rng) for k in range(k2)},
                        terminal_gain=terminal_gain,
                        destination_coupling={k: random_gain(d, rng) for k in range(k2 + 1, N)},
                        noise_cov={k: random_covariance(d, rng) for k in range(N + 1)})
    return project_intersection(model) if project else model
