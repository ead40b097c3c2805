import json

import numpy as np
import pytest

from cmseq.blockmat import BlockMatrix, Direction
from cmseq.exceptions import DimensionMismatch, ModelFormatError
from cmseq.models import CMcModel, MarkovModel, random_cm_model, random_cml_0k2_model, random_markov_model
from cmseq.serialization import (check_format, dumps, endpoint_joint_from_dict, is_representation, load_json,
                                 load_matrix, load_model, loads, matrix_from_dict, matrix_to_dict, model_digest,
                                 model_from_dict, model_to_dict, read_trajectories_csv, representation_from_dict,
                                 representation_to_dict, save_json, save_model, write_trajectories_csv)
from cmseq.transforms import decompose_to_representation


def assert_same_model(a, b):
    assert type(a) is type(b) and a.kind == b.kind and a.N == b.N and a.d == b.d
    for name, blocks in a.parameters().items():
        other = b.parameters()[name]
        assert blocks.keys() == other.keys(), name
        for k in blocks:
            np.testing.assert_array_equal(blocks[k], other[k])


def test_rw3_document_layout(rw3_cml):
    document = model_to_dict(rw3_cml)
    assert document['format'] == "1.0"
    assert document['kind'] == 'cml'
    assert document['params']['coupling'] == {'1': [[1 / 3]], '2': [[0.5]]}
    assert document['boundary'] == {'endpoint_cov': [[4.0]], 'cross_gain': [[0.25]], 'other_end_cov': [[0.75]]}
    assert 'start' not in document


def test_models_survive_a_file(tmp_path, rng):
    models = [random_markov_model(5, 2, rng), random_markov_model(6, 1, rng, start=1),
              random_cm_model(Direction.L, 5, 2, rng), random_cm_model(Direction.F, 4, 3, rng),
              random_cm_model(Direction.L, 4, 1, rng, with_boundary=False), random_cml_0k2_model(7, 2, 3, rng)]
    for index, m in enumerate(models):
        path = tmp_path / f"model{index}.json"
        save_model(m, path)
        loaded = load_model(path)
        assert_same_model(loaded, m)
        assert model_digest(loaded) == model_digest(m)

    assert load_model(tmp_path / "model1.json").start == 1
    assert load_model(tmp_path / "model4.json").boundary is None


def test_cm_direction_follows_the_kind(rng):
    document = model_to_dict(random_cm_model(Direction.F, 4, 1, rng))
    model = model_from_dict(document)
    assert isinstance(model, CMcModel) and model.direction is Direction.F


def test_digest_tracks_parameters(rw3):
    assert len(model_digest(rw3)) == 64
    assert model_digest(rw3) == model_digest(MarkovModel.time_invariant(3, 1.0, 1.0))
    assert model_digest(rw3) != model_digest(MarkovModel.time_invariant(3, 1.0, 2.0))


def test_malformed_json_reports_line_and_column(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "kind": "markov",\n  "N": 3,\n}\n')
    with pytest.raises(ModelFormatError) as info:
        load_model(path)
    assert info.value.file == path
    assert info.value.line == 4
    assert info.value.column is not None


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(ModelFormatError):
        load_json(tmp_path / "missing.json")


@pytest.mark.parametrize("document, field", [
    ({'kind': 'markov', 'N': 3}, 'd'),
    ({'kind': 'spline', 'N': 3, 'd': 1, 'params': {}}, 'kind'),
    ({'kind': 'markov', 'N': "3", 'd': 1, 'params': {}}, 'N'),
    ({'kind': 'markov', 'N': 3, 'd': 1, 'params': {'transition': {'one': [[1.0]]}}}, 'params.transition.one'),
    ({'kind': 'markov', 'N': 3, 'd': 1, 'params': {'transition': {'1': [["a"]]}}}, 'params.transition.1'),
    ({'kind': 'markov', 'N': 3, 'd': 1, 'params': {'drift': {}}}, 'params'),
    ({'format': "2.0", 'kind': 'markov', 'N': 3, 'd': 1, 'params': {}}, 'format'),
    ({'format': "one", 'kind': 'markov', 'N': 3, 'd': 1, 'params': {}}, 'format'),
])
def test_bad_fields_are_named(document, field):
    with pytest.raises(ModelFormatError) as info:
        model_from_dict(document)
    assert info.value.field == field


def test_format_versions():
    assert str(check_format({})) == "1.0"
    assert str(check_format({'format': "1.3"})) == "1.3"
    with pytest.raises(ModelFormatError):
        model_from_dict([1, 2, 3])


def test_dumps_is_canonical(rw3):
    text = dumps(model_to_dict(rw3))
    assert text.endswith("\n")
    assert loads(text) == json.loads(text)
    assert text == dumps(loads(text))


def test_matrix_documents(tmp_path, rw3_covariance):
    document = matrix_to_dict(rw3_covariance)
    assert document['n_blocks'] == 4 and document['block_dim'] == 1
    path = tmp_path / "covariance.json"
    save_json(document, path)
    assert load_matrix(path) == rw3_covariance

    with pytest.raises(ModelFormatError):
        matrix_from_dict({**document, 'n_blocks': 3})
    with pytest.raises(ModelFormatError) as info:
        matrix_from_dict({**document, 'rows': [[1.0, 2.0], [0.0, 1.0]], 'n_blocks': 2})
    assert info.value.field == 'rows'


def test_representation_documents(rng):
    r = decompose_to_representation(random_cm_model(Direction.F, 5, 2, rng))
    document = representation_to_dict(r)
    assert is_representation(document) and not is_representation(model_to_dict(r.underlying))
    back = representation_from_dict(json.loads(json.dumps(document)))
    assert back.direction is Direction.F and back.underlying.start == 1
    assert_same_model(back.underlying, r.underlying)
    for k in r.gamma:
        np.testing.assert_array_equal(back.gamma[k], r.gamma[k])

    with pytest.raises(ModelFormatError):
        representation_from_dict({**document, 'direction': 'X'})
    with pytest.raises(ModelFormatError):
        representation_from_dict({**document, 'underlying': model_to_dict(random_cm_model(Direction.L, 4, 2, rng))})


def test_endpoint_joint_documents():
    joint = {'cov_x0': [[1.0]], 'cov_xN': [[0.01]], 'cross': [[0.0]]}
    for document in (joint, {'format': "1.0", 'boundary': joint}):
        cov_x0, cov_xN, cross = endpoint_joint_from_dict(document)
        assert (cov_x0.item(), cov_xN.item(), cross.item()) == (1.0, 0.01, 0.0)
    with pytest.raises(ModelFormatError) as info:
        endpoint_joint_from_dict({'cov_x0': [[1.0]], 'cov_xN': [[1.0]]})
    assert info.value.field == 'cross'


def test_trajectory_csv(tmp_path, rng):
    data = rng.standard_normal((3, 4, 2))
    path = tmp_path / "runs" / "trajectories.csv"
    write_trajectories_csv(data, path, start=1)
    assert path.read_text().splitlines()[0] == "sample,k,x0,x1"
    loaded, start = read_trajectories_csv(path)
    assert start == 1
    np.testing.assert_array_equal(loaded, data)


def test_trajectory_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n")
    with pytest.raises(ModelFormatError):
        read_trajectories_csv(path)
    path.write_text("sample,k,x0\n0,0,1.0\n0,1,1.0\n1,0,1.0\n")
    with pytest.raises(DimensionMismatch):
        read_trajectories_csv(path)
