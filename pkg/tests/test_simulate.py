import numpy as np
import pytest

from cmseq.analysis import model_covariance
from cmseq.blockmat import Direction
from cmseq.default import NOISE_CHUNK
from cmseq.exceptions import DimensionMismatch, IncompleteParameters, NotPositiveDefinite, ValidationError
from cmseq.models import (check_markov_condition, check_reciprocal_condition, random_cm_model, random_cml_0k2_model,
                          random_markov_model)
from cmseq.simulate import (EndpointJoint, TrajectoryBatch, destination_directed_generate, empirical_covariance,
                            monte_carlo_report, noise_chunk, sample_trajectories, standard_errors, standard_noise)

from conftest import rw3_covariance_values


def test_batch_layout(rw3):
    batch = sample_trajectories(rw3, 10, seed=3)
    assert batch.data.shape == (10, 4, 1)
    assert batch.stacked().shape == (10, 4)
    assert batch.n_samples == 10 and batch.seed == 3 and batch.start == 0
    assert len(batch.model_digest) == 64

    with pytest.raises(DimensionMismatch):
        TrajectoryBatch(3, 1, np.zeros((10, 3, 1)), 0, batch.model_digest)


def test_sampling_is_reproducible(rng):
    m = random_cm_model(Direction.F, 5, 2, rng)
    first = sample_trajectories(m, 50, seed=7)
    np.testing.assert_array_equal(first.data, sample_trajectories(m, 50, seed=7).data)
    assert not np.array_equal(first.data, sample_trajectories(m, 50, seed=8).data)


def test_smaller_batches_are_prefixes(rw3):
    small = sample_trajectories(rw3, 10, seed=1)
    large = sample_trajectories(rw3, NOISE_CHUNK + 10, seed=1)
    np.testing.assert_array_equal(large.data[:10], small.data)


def test_noise_chunks_are_independent_of_order():
    stream = standard_noise(2 * NOISE_CHUNK, 3, 2, seed=5)
    np.testing.assert_array_equal(stream[NOISE_CHUNK:], noise_chunk(5, 1, 3, 2))
    with pytest.raises(ValidationError):
        noise_chunk(-1, 0, 3, 2)


def test_sampling_rejects_bad_requests(rw3, rng):
    with pytest.raises(ValidationError):
        sample_trajectories(rw3, 0)
    with pytest.raises(IncompleteParameters):
        sample_trajectories(random_cm_model(Direction.L, 4, 1, rng, with_boundary=False), 10)


def test_shifted_markov_models_sample_their_own_times(rng):
    m = random_markov_model(6, 2, rng, start=2)
    batch = sample_trajectories(m, 20)
    assert batch.start == 2 and batch.data.shape == (20, 5, 2)


def test_standard_errors():
    errors = standard_errors([[4.0, 2.0], [2.0, 1.0]], 100)
    np.testing.assert_allclose(errors, np.sqrt(np.array([[32.0, 8.0], [8.0, 2.0]]) / 100))


def test_empirical_covariance_needs_two_samples(rw3):
    with pytest.raises(ValidationError):
        empirical_covariance(sample_trajectories(rw3, 1))


def test_rw3_endpoint_joint(rw3):
    joint = EndpointJoint.of_markov(rw3)
    np.testing.assert_allclose(joint.matrix(), [[1.0, 1.0], [1.0, 4.0]])


def test_destination_directed_model_with_the_motion_endpoints_is_the_motion(rng):
    motion = random_markov_model(6, 2, rng)
    model, batch = destination_directed_generate(motion, EndpointJoint.of_markov(motion), 5)
    assert check_markov_condition(model)
    np.testing.assert_allclose(model_covariance(model).data, model_covariance(motion).data,
                               atol=1e-9 * model_covariance(motion).max_abs)
    assert batch.n_samples == 5


def test_destination_directed_model_hits_the_destination_law(rw3):
    joint = EndpointJoint([[1.0]], [[0.01]], [[0.0]])
    model, _ = destination_directed_generate(rw3, joint, 2)
    assert check_reciprocal_condition(model)
    assert not check_markov_condition(model)
    covariance = model_covariance(model)
    assert covariance.block(3, 3).item() == pytest.approx(0.01)
    assert covariance.block(0, 3).item() == pytest.approx(0.0, abs=1e-12)
    assert covariance.block(0, 0).item() == pytest.approx(1.0)

    with pytest.raises(NotPositiveDefinite):
        destination_directed_generate(rw3, EndpointJoint([[1.0]], [[1.0]], [[2.0]]), 2)


def test_destination_directed_interior_ignores_the_endpoints(rng):
    motion = random_markov_model(6, 2, rng)
    first, _ = destination_directed_generate(motion, EndpointJoint(np.eye(2), 0.01 * np.eye(2), np.zeros((2, 2))), 2)
    second, _ = destination_directed_generate(motion, EndpointJoint.of_markov(motion), 2)
    for name in ('transition', 'coupling', 'noise_cov'):
        blocks, other = getattr(first, name), getattr(second, name)
        assert blocks.keys() == other.keys()
        for k in blocks:
            np.testing.assert_array_equal(blocks[k], other[k])
    assert not np.array_equal(first.boundary.endpoint_cov, second.boundary.endpoint_cov)


def test_monte_carlo_report_shape(rw3):
    report = monte_carlo_report(rw3, 2000, seed=0)
    assert [check.name for check in report] == ["x_0", "x_1", "x_2", "x_3"]
    assert report.summary['samples'] == 2000
    assert all(check.residual >= 0 for check in report)


@pytest.mark.slow
def test_rw3_sample_variance(rw3):
    batch = sample_trajectories(rw3, 100_000, seed=0)
    covariance = empirical_covariance(batch)
    assert covariance.block(3, 3).item() == pytest.approx(4.0, abs=0.08)
    np.testing.assert_allclose(covariance.data, rw3_covariance_values(), atol=0.1)


def monte_carlo_fixtures():
    rng = np.random.default_rng(99)
    motion = random_markov_model(5, 2, rng)
    destination, _ = destination_directed_generate(
        motion, EndpointJoint(np.eye(2), 0.01 * np.eye(2), np.zeros((2, 2))), 1)
    return {'markov': motion,
            'cml': random_cm_model(Direction.L, 6, 2, rng),
            'cmf': random_cm_model(Direction.F, 5, 3, rng),
            'waypoint': random_cml_0k2_model(7, 1, 3, rng),
            'destination': destination}


@pytest.mark.slow
@pytest.mark.parametrize("name", ['rw3', *monte_carlo_fixtures()])
def test_sampled_law_matches_the_joint_covariance(name, rw3):
    model = rw3 if name == 'rw3' else monte_carlo_fixtures()[name]
    report = monte_carlo_report(model, 100_000, seed=2024)
    assert report, [check.to_dict() for check in report if not check]
