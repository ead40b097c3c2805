from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmseq.analysis import model_covariance, verify_covariance_split
from cmseq.blockmat import BlockMatrix, Direction
from cmseq.exceptions import (BoundaryNotMarkov, IncompleteParameters, IndexOutOfRange, NotPositiveDefinite,
                              NotReciprocal, ValidationError)
from cmseq.models import (Boundary, MarkovModel, check_intersection_conditions, check_markov_condition,
                          check_reciprocal_condition, random_boundary, random_cm_model, random_cml_0k2_model,
                          random_markov_model)
from cmseq.transforms import (Representation, RepresentationClass, boundary_from_endpoint_joint,
                              classify_representation, cm_model_from_covariance, cml_0k2_model_from_covariance,
                              construct_from_representation, decompose_to_representation, horizon_aggregates,
                              induce_cml_from_markov, markov_matching_boundary, recover_markov_from_reciprocal_cml,
                              representation_conditions, same_underlying, underlying_markov_of_induced)

from conftest import RW3_BOUNDARY, RW3_GAMMA, RW3_INTERIOR, RW3_UNDERLYING_NOISE, block_values

markov_fixtures = st.tuples(st.integers(min_value=0, max_value=2 ** 32 - 1),
                            st.integers(min_value=3, max_value=12),
                            st.integers(min_value=1, max_value=3))


def relative_frobenius(a: BlockMatrix, b: BlockMatrix) -> float:
    return float(np.linalg.norm(a.data - b.data) / np.linalg.norm(b.data))


def assert_same_blocks(actual, expected, atol=1e-12):
    assert actual.keys() == expected.keys()
    for k in expected:
        np.testing.assert_allclose(actual[k], expected[k], atol=atol, rtol=0)


def test_rw3_horizon_aggregates(rw3):
    aggregates = horizon_aggregates(rw3)
    assert block_values(aggregates.m_horizon) == {0: 1.0, 1: 1.0, 2: 1.0, 3: 1.0}
    assert block_values(aggregates.c_horizon) == {0: 3.0, 1: 2.0, 2: 1.0}


def test_rw3_induced_interior(rw3):
    induced = induce_cml_from_markov(rw3)
    assert induced.direction is Direction.L and induced.boundary is None
    for k, (transition, coupling, noise) in RW3_INTERIOR.items():
        assert induced.transition[k].item() == pytest.approx(transition, abs=1e-12)
        assert induced.coupling[k].item() == pytest.approx(coupling, abs=1e-12)
        assert induced.noise_cov[k].item() == pytest.approx(noise, abs=1e-12)


def test_rw3_matching_boundary(rw3):
    cross, other, endpoint = markov_matching_boundary(rw3).as_triple()
    assert (cross.item(), other.item(), endpoint.item()) == pytest.approx(RW3_BOUNDARY, abs=1e-12)


def test_induce_requires_a_model_starting_at_the_origin(rng):
    with pytest.raises(ValidationError):
        induce_cml_from_markov(random_markov_model(5, 1, rng, start=1))
    with pytest.raises(IncompleteParameters):
        induce_cml_from_markov(MarkovModel(3, 1, {1: 1.0}, {0: 1.0}))


@settings(max_examples=100, deadline=None)
@given(fixture=markov_fixtures)
def test_induced_models_are_reciprocal(fixture):
    seed, N, d = fixture
    induced = induce_cml_from_markov(random_markov_model(N, d, np.random.default_rng(seed)))
    assert check_reciprocal_condition(induced, 1e-9)


@settings(max_examples=100, deadline=None)
@given(fixture=markov_fixtures)
def test_recover_after_induce_reproduces_the_law(fixture):
    seed, N, d = fixture
    m = random_markov_model(N, d, np.random.default_rng(seed))
    model = induce_cml_from_markov(m).with_boundary(markov_matching_boundary(m))
    recovered = recover_markov_from_reciprocal_cml(model)
    assert relative_frobenius(model_covariance(recovered), model_covariance(m)) <= 1e-8


def test_rw3_recovery(rw3_cml):
    recovered = recover_markov_from_reciprocal_cml(rw3_cml)
    for values in (recovered.transition, recovered.noise_cov):
        assert all(value == pytest.approx(1.0, abs=1e-12) for value in block_values(values).values())


def test_recover_rejects_non_reciprocal_and_non_markov_models(rng):
    with pytest.raises(NotReciprocal):
        recover_markov_from_reciprocal_cml(random_cm_model(Direction.L, 6, 2, rng))

    m = random_markov_model(6, 2, rng)
    with pytest.raises(BoundaryNotMarkov):
        recover_markov_from_reciprocal_cml(induce_cml_from_markov(m).with_boundary(random_boundary(2, rng)))
    with pytest.raises(IncompleteParameters):
        recover_markov_from_reciprocal_cml(induce_cml_from_markov(m))
    with pytest.raises(ValidationError):
        recover_markov_from_reciprocal_cml(random_cm_model(Direction.F, 6, 2, rng))


def test_endpoint_joint_must_be_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        boundary_from_endpoint_joint(1.0, 1.0, 1.0)
    boundary = boundary_from_endpoint_joint(1.0, 4.0, 1.0)
    assert boundary.cross_gain.item() == pytest.approx(0.25)


def test_rw3_representation(rw3_cml):
    r = decompose_to_representation(rw3_cml)
    assert r.direction is Direction.L and r.N == 3 and r.d == 1
    assert list(r.gamma_range) == [0, 1, 2]
    assert tuple(block_values(r.gamma).values()) == pytest.approx(RW3_GAMMA, abs=1e-12)
    assert r.endpoint_cov.item() == 4.0
    assert tuple(block_values(r.underlying.noise_cov).values()) == pytest.approx(RW3_UNDERLYING_NOISE, abs=1e-12)
    assert block_values(r.underlying.transition) == pytest.approx({1: 2 / 3, 2: 1 / 2}, abs=1e-12)
    np.testing.assert_allclose(r.weights().ravel(), [*RW3_GAMMA, 1.0])
    assert classify_representation(r) is RepresentationClass.markov


@pytest.mark.parametrize("direction", list(Direction))
def test_representation_round_trip(rng, direction):
    for N in range(3, 10):
        m = random_cm_model(direction, N, 2, rng)
        back = construct_from_representation(decompose_to_representation(m))
        assert back.direction is m.direction
        assert_same_blocks(back.transition, m.transition)
        assert_same_blocks(back.coupling, m.coupling)
        assert_same_blocks(back.noise_cov, m.noise_cov)
        np.testing.assert_allclose(back.boundary.endpoint_cov, m.boundary.endpoint_cov, atol=1e-12)
        if direction is Direction.L:
            for original, rebuilt in zip(m.boundary.as_triple(), back.boundary.as_triple()):
                np.testing.assert_allclose(rebuilt, original, atol=1e-12)


@pytest.mark.parametrize("direction", list(Direction))
def test_covariance_split(rng, direction):
    for _ in range(50):
        m = random_cm_model(direction, int(rng.integers(3, 9)), int(rng.integers(1, 4)), rng)
        assert verify_covariance_split(model_covariance(m), decompose_to_representation(m), 1e-10)


def test_representation_validation(rng):
    r = decompose_to_representation(random_cm_model(Direction.F, 5, 2, rng))
    assert r.validate()
    assert not replace(r, gamma={k: v for k, v in r.gamma.items() if k != 3}).validate()
    assert not replace(r, endpoint_cov=-np.eye(2)).validate()
    shifted = Representation(Direction.L, r.underlying, r.gamma, r.endpoint_cov)
    assert shifted.validate().of_type(IndexOutOfRange)


def reciprocal_covariance(rng, N: int, d: int) -> BlockMatrix:
    m = random_markov_model(N, d, rng)
    return model_covariance(induce_cml_from_markov(m).with_boundary(random_boundary(d, rng)))


def test_reciprocal_sequences_have_both_representations(rng):
    for _ in range(50):
        covariance = reciprocal_covariance(rng, int(rng.integers(4, 9)), int(rng.integers(1, 4)))
        for direction in Direction:
            model = cm_model_from_covariance(covariance, direction)
            assert check_reciprocal_condition(model, 1e-7)
            assert verify_covariance_split(covariance, decompose_to_representation(model), 1e-9)


def test_cml_only_sequences_lack_a_cmf_representation(rng):
    for _ in range(50):
        covariance = model_covariance(random_cm_model(Direction.L, int(rng.integers(4, 9)), 2, rng))
        forward = decompose_to_representation(cm_model_from_covariance(covariance, Direction.F))
        check = verify_covariance_split(covariance, forward, 1e-9)
        assert not check
        assert check.residual > 1e-4


def test_rw3_models_from_covariance(rw3_covariance):
    backward = cm_model_from_covariance(rw3_covariance, 'L')
    for k, (transition, coupling, noise) in RW3_INTERIOR.items():
        assert (backward.transition[k].item(), backward.coupling[k].item(),
                backward.noise_cov[k].item()) == pytest.approx((transition, coupling, noise), abs=1e-12)

    forward = cm_model_from_covariance(rw3_covariance, Direction.F)
    assert block_values(forward.coupling) == pytest.approx({1: 1.0, 2: 0.0, 3: 0.0}, abs=1e-12)
    assert block_values(forward.noise_cov) == pytest.approx({1: 1.0, 2: 1.0, 3: 1.0}, abs=1e-12)
    assert check_markov_condition(forward)

    with pytest.raises(IndexOutOfRange):
        cm_model_from_covariance(rw3_covariance.principal([0, 1, 2]), Direction.L)


def collect_fixtures(rng):
    fixtures = []
    for direction in Direction:
        fixtures += [random_cm_model(direction, int(rng.integers(3, 9)), int(rng.integers(1, 4)), rng)
                     for _ in range(40)]
    for _ in range(40):
        m = random_markov_model(int(rng.integers(3, 9)), int(rng.integers(1, 4)), rng)
        fixtures.append(induce_cml_from_markov(m).with_boundary(markov_matching_boundary(m)))
        fixtures.append(induce_cml_from_markov(m).with_boundary(random_boundary(m.d, rng)))
        fixtures.append(cm_model_from_covariance(model_covariance(m), Direction.F))
    return fixtures


def test_representation_classes_agree_with_the_model_conditions(rng):
    disagreements = []
    fixtures = collect_fixtures(rng)
    assert len(fixtures) == 200
    for m in fixtures:
        r = decompose_to_representation(m)
        reciprocal, markov = representation_conditions(r, 1e-7)
        expected_reciprocal = bool(check_reciprocal_condition(m, 1e-7))
        expected_markov = bool(check_markov_condition(m, 1e-7))
        if (bool(reciprocal), bool(markov)) != (expected_reciprocal, expected_markov):
            disagreements.append(m)

        expected = (RepresentationClass.markov if expected_markov
                    else RepresentationClass.reciprocal if expected_reciprocal
                    else RepresentationClass.general_cm)
        if classify_representation(r, 1e-7) is not expected:
            disagreements.append(m)
    assert not disagreements


def test_rw3_underlying_model(rw3):
    underlying = underlying_markov_of_induced(rw3)
    assert underlying.N == 2 and underlying.start == 0
    assert tuple(block_values(underlying.noise_cov).values()) == pytest.approx(RW3_UNDERLYING_NOISE, abs=1e-12)
    assert block_values(underlying.transition) == pytest.approx({1: 2 / 3, 2: 1 / 2}, abs=1e-12)

    other = underlying_markov_of_induced(rw3, Boundary(2.0, 0.5, 5.0))
    assert other.noise_cov[0].item() == 5.0


def test_induced_models_share_their_underlying_model(rng):
    m = random_markov_model(7, 2, rng)
    induced = induce_cml_from_markov(m)
    a, b = induced.with_boundary(random_boundary(2, rng)), induced.with_boundary(markov_matching_boundary(m))
    assert same_underlying(a, b)
    assert not same_underlying(a, random_cm_model(Direction.L, 7, 2, rng))
    assert not same_underlying(a, random_cm_model(Direction.F, 7, 2, rng))

    boundary = random_boundary(2, rng)
    underlying = decompose_to_representation(induced.with_boundary(boundary)).underlying
    expected = underlying_markov_of_induced(m, boundary)
    assert_same_blocks(underlying.transition, expected.transition, 1e-9)
    assert_same_blocks(underlying.noise_cov, expected.noise_cov, 1e-9)


def test_waypoint_model_from_covariance(rng):
    model = random_cml_0k2_model(8, 2, 4, rng)
    covariance = model_covariance(model)
    fitted = cml_0k2_model_from_covariance(covariance, 4)
    assert check_intersection_conditions(fitted, 1e-7)
    np.testing.assert_allclose(model_covariance(fitted).data, covariance.data, atol=1e-8 * covariance.max_abs)
    assert_same_blocks(fitted.waypoint_coupling, model.waypoint_coupling, 1e-7)

    with pytest.raises(IndexOutOfRange):
        cml_0k2_model_from_covariance(covariance, 7)
