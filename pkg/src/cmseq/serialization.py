"""JSON exchange formats for models, matrices and representations, CSV for trajectories.

Every JSON document carries "format"; readers accept any version matching SUPPORTED_FORMATS.
Indexed parameters are objects keyed by the decimal time index, each value a d x d block
given as a list of rows.
"""
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable, Mapping, NoReturn, Optional

import numpy as np
from packaging.specifiers import SpecifierSet
from packaging.version import InvalidVersion, Version

from cmseq.blockmat import Array, BlockMatrix, Direction
from cmseq.exceptions import CmseqError, DimensionMismatch, ModelFormatError
from cmseq.models import Blocks, Boundary, CML0k2Model, CMcModel, MarkovModel, Model, model_kinds
from cmseq.transforms import Representation

FORMAT_VERSION = "1.0"
SUPPORTED_FORMATS = SpecifierSet(">=1.0,<2")


class _Reader:
    """Field access on a decoded document that reports where a bad field came from."""

    def __init__(self, data: Any, source: Optional[Path] = None, path: str = ""):
        self.data = data
        self.source = source
        self.path = path

    def fail(self, message: str, field: Optional[str] = None) -> NoReturn:
        raise ModelFormatError((self.source, None, None), message, field or self.path or None)

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def child(self, key: str, optional: bool = False) -> Optional['_Reader']:
        if not isinstance(self.data, dict):
            self.fail("Expected a JSON object")
        if key not in self.data:
            if optional:
                return None
            self.fail(f"Missing field \"{key}\"", self._where(key))
        return _Reader(self.data[key], self.source, self._where(key))

    def integer(self, key: str, optional: bool = False, default: Optional[int] = None) -> Optional[int]:
        reader = self.child(key, optional)
        if reader is None:
            return default
        if not isinstance(reader.data, int) or isinstance(reader.data, bool):
            reader.fail(f"Expected an integer, got {reader.data!r}")
        return reader.data

    def string(self, key: str) -> str:
        reader = self.child(key)
        assert reader is not None
        if not isinstance(reader.data, str):
            reader.fail(f"Expected a string, got {reader.data!r}")
        return reader.data

    def block(self) -> Array:
        try:
            value = np.array(self.data, dtype=float)
        except (TypeError, ValueError):
            self.fail("Expected a matrix given as a list of rows")
        return np.atleast_2d(value)

    def blocks(self) -> dict[int, Array]:
        if not isinstance(self.data, dict):
            self.fail("Expected an object mapping time indices to blocks")
        result = {}
        for key, value in self.data.items():
            try:
                index = int(key)
            except ValueError:
                self.fail(f"Time index {key!r} is not an integer", self._where(key))
            result[index] = _Reader(value, self.source, self._where(key)).block()
        return result


def check_format(data: Mapping[str, Any], source: Optional[Path] = None) -> Version:
    raw = data.get('format', FORMAT_VERSION)
    try:
        version = Version(str(raw))
    except InvalidVersion as exc:
        raise ModelFormatError((source, None, None), f"Invalid format version {raw!r}", 'format') from exc
    if version not in SUPPORTED_FORMATS:
        raise ModelFormatError((source, None, None),
                               f"Unsupported format {version}, expected {SUPPORTED_FORMATS}", 'format')
    return version


def load_json(path: Path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError((Path(path), None, None), f"Cannot read file: {exc.strerror}") from exc
    return loads(text, Path(path))


def loads(text: str, source: Optional[Path] = None) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError((source, exc.lineno, exc.colno), exc.msg) from exc


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_json(data: Any, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    logging.info("Wrote %s", path)


def encode_block(block: Array) -> list[list[float]]:
    return [[float(value) for value in row] for row in np.atleast_2d(block)]


def encode_blocks(blocks: Blocks) -> dict[str, list[list[float]]]:
    return {str(index): encode_block(block) for index, block in sorted(blocks.items())}


def encode_boundary(boundary: Boundary) -> dict[str, Any]:
    encoded: dict[str, Any] = {'endpoint_cov': encode_block(boundary.endpoint_cov)}
    if boundary.cross_gain is not None:
        encoded['cross_gain'] = encode_block(boundary.cross_gain)
    if boundary.other_end_cov is not None:
        encoded['other_end_cov'] = encode_block(boundary.other_end_cov)
    return encoded


def model_to_dict(m: Model) -> dict[str, Any]:
    encoded: dict[str, Any] = {'format': FORMAT_VERSION,
                               'kind': m.kind,
                               'N': m.N,
                               'd': m.d,
                               'params': {name: encode_blocks(blocks) for name, blocks in m.parameters().items()}}
    if isinstance(m, MarkovModel) and m.start:
        encoded['start'] = m.start
    if isinstance(m, CML0k2Model):
        encoded['k2'] = m.k2
    if isinstance(m, CMcModel) and m.boundary is not None:
        encoded['boundary'] = encode_boundary(m.boundary)
    return encoded


def _decode_boundary(reader: Optional[_Reader]) -> Optional[Boundary]:
    if reader is None:
        return None
    endpoint = reader.child('endpoint_cov')
    cross = reader.child('cross_gain', optional=True)
    other = reader.child('other_end_cov', optional=True)
    assert endpoint is not None
    return Boundary(endpoint.block(),
                    None if cross is None else cross.block(),
                    None if other is None else other.block())


def _decode_params(reader: _Reader, names: tuple[str, ...]) -> dict[str, dict[int, Array]]:
    params = reader.child('params')
    assert params is not None
    decoded = {}
    for name in names:
        child = params.child(name, optional=True)
        decoded[name] = {} if child is None else child.blocks()
    unknown = set(params.data) - set(names)
    if unknown:
        params.fail(f"Unknown parameters {sorted(unknown)}")
    return decoded


def _decode_markov(reader: _Reader, N: int, d: int) -> MarkovModel:
    params = _decode_params(reader, ('transition', 'noise_cov'))
    return MarkovModel(N, d, params['transition'], params['noise_cov'], reader.integer('start', True, 0) or 0)


def _decode_cm(reader: _Reader, N: int, d: int) -> CMcModel:
    direction = Direction.L if reader.string('kind') == 'cml' else Direction.F
    params = _decode_params(reader, ('transition', 'coupling', 'noise_cov'))
    return CMcModel(direction, N, d, params['transition'], params['coupling'], params['noise_cov'],
                    _decode_boundary(reader.child('boundary', optional=True)))


def _decode_cml_0k2(reader: _Reader, N: int, d: int) -> CML0k2Model:
    k2 = reader.integer('k2')
    assert k2 is not None
    params = _decode_params(reader, ('transition', 'waypoint_coupling', 'terminal_gain', 'destination_coupling',
                                     'noise_cov'))
    return CML0k2Model(N, d, k2, **params)


_decoders: dict[type, Callable[[_Reader, int, int], Model]] = {
    MarkovModel: _decode_markov,
    CMcModel: _decode_cm,
    CML0k2Model: _decode_cml_0k2,
}


def model_from_dict(data: Any, source: Optional[Path] = None) -> Model:
    reader = _Reader(data, source)
    if not isinstance(data, dict):
        reader.fail("A model file must hold a JSON object")
    check_format(data, source)

    kind = reader.string('kind')
    if kind not in model_kinds:
        reader.fail(f"Unknown model kind {kind!r}, expected one of {sorted(model_kinds)}", 'kind')
    N, d = reader.integer('N'), reader.integer('d')
    assert N is not None and d is not None
    return _decoders[model_kinds[kind]](reader, N, d)


def load_model(path: Path) -> Model:
    return model_from_dict(load_json(path), Path(path))


def save_model(m: Model, path: Path) -> None:
    save_json(model_to_dict(m), path)


def model_digest(m: Model) -> str:
    """SHA-256 of the canonical JSON form of a model."""
    canonical = json.dumps(model_to_dict(m), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def matrix_to_dict(matrix: BlockMatrix) -> dict[str, Any]:
    return {'format': FORMAT_VERSION,
            'n_blocks': matrix.n_blocks,
            'block_dim': matrix.block_dim,
            'rows': encode_block(matrix.data)}


def matrix_from_dict(data: Any, source: Optional[Path] = None) -> BlockMatrix:
    reader = _Reader(data, source)
    if not isinstance(data, dict):
        reader.fail("A matrix file must hold a JSON object")
    check_format(data, source)

    n_blocks, block_dim = reader.integer('n_blocks'), reader.integer('block_dim')
    rows = reader.child('rows')
    assert rows is not None and n_blocks is not None and block_dim is not None
    values = rows.block()
    if values.shape != (n_blocks * block_dim, n_blocks * block_dim):
        rows.fail(f"Expected {n_blocks * block_dim} x {n_blocks * block_dim} rows, got shape {values.shape}")
    try:
        return BlockMatrix(values, block_dim, symmetric=True)
    except CmseqError as exc:
        raise ModelFormatError((source, None, None), str(exc), 'rows') from exc


def load_matrix(path: Path) -> BlockMatrix:
    return matrix_from_dict(load_json(path), Path(path))


def representation_to_dict(r: Representation) -> dict[str, Any]:
    return {'format': FORMAT_VERSION,
            'direction': r.direction.value,
            'underlying': model_to_dict(r.underlying),
            'gamma': encode_blocks(r.gamma),
            'endpoint_cov': encode_block(r.endpoint_cov)}


def representation_from_dict(data: Any, source: Optional[Path] = None) -> Representation:
    reader = _Reader(data, source)
    if not isinstance(data, dict):
        reader.fail("A representation file must hold a JSON object")
    check_format(data, source)

    direction = reader.string('direction')
    if direction not in ('L', 'F'):
        reader.fail(f"Direction must be \"L\" or \"F\", got {direction!r}", 'direction')
    underlying_reader = reader.child('underlying')
    gamma, endpoint = reader.child('gamma'), reader.child('endpoint_cov')
    assert underlying_reader is not None and gamma is not None and endpoint is not None

    underlying = model_from_dict(underlying_reader.data, source)
    if not isinstance(underlying, MarkovModel):
        underlying_reader.fail("The underlying model must be of kind \"markov\"")
    return Representation(Direction(direction), underlying, gamma.blocks(), endpoint.block())


def is_representation(data: Any) -> bool:
    return isinstance(data, dict) and 'underlying' in data and 'gamma' in data


def endpoint_joint_from_dict(data: Any, source: Optional[Path] = None) -> tuple[Array, Array, Array]:
    """(cov_x0, cov_xN, cross) from an object, or from its "boundary" member."""
    reader = _Reader(data, source)
    if isinstance(data, dict) and 'boundary' in data:
        check_format(data, source)
        boundary = reader.child('boundary')
        assert boundary is not None
        reader = boundary
    blocks = [reader.child(name) for name in ('cov_x0', 'cov_xN', 'cross')]
    cov_x0, cov_xN, cross = (block.block() for block in blocks if block is not None)
    return cov_x0, cov_xN, cross


def write_trajectories_csv(data: Array, path: Path, start: int = 0) -> None:
    """One row per (sample, time): sample,k,x0..x{d-1}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_samples, n_times, d = data.shape
    with path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["sample", "k", *(f"x{i}" for i in range(d))])
        for sample in range(n_samples):
            for offset in range(n_times):
                writer.writerow([sample, start + offset, *(repr(float(value)) for value in data[sample, offset])])
    logging.info("Wrote %d trajectories to %s", n_samples, path)


def read_trajectories_csv(path: Path) -> tuple[Array, int]:
    """(samples x times x d array, first time index)"""
    with Path(path).open(newline="", encoding="utf-8") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if not header or header[:2] != ["sample", "k"]:
            raise ModelFormatError((Path(path), 1, 1), "Expected header sample,k,x0,...")
        rows = [(int(row[0]), int(row[1]), [float(value) for value in row[2:]]) for row in reader]

    if not rows:
        raise ModelFormatError((Path(path), 2, 1), "No trajectory rows")
    samples = max(row[0] for row in rows) + 1
    start = min(row[1] for row in rows)
    times = max(row[1] for row in rows) - start + 1
    d = len(header) - 2
    if len(rows) != samples * times:
        raise DimensionMismatch(f"Expected {samples * times} rows for {samples} samples, got {len(rows)}")

    data = np.empty((samples, times, d))
    for sample, k, values in rows:
        data[sample, k - start] = values
    return data, start
