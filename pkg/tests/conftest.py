import numpy as np
import pytest

from cmseq.blockmat import BlockMatrix, Direction
from cmseq.models import Boundary, CMcModel, MarkovModel

# scalar random walk x_0 ~ N(0, 1), x_k = x_{k-1} + w_k, w_k ~ N(0, 1), N = 3
RW3_INTERIOR = {1: (2 / 3, 1 / 3, 2 / 3), 2: (1 / 2, 1 / 2, 1 / 2)}
RW3_BOUNDARY = (1 / 4, 3 / 4, 4.0)
RW3_GAMMA = (1 / 4, 1 / 2, 3 / 4)
RW3_UNDERLYING_NOISE = (3 / 4, 2 / 3, 1 / 2)


def rw3_covariance_values():
    return np.array([[min(i, j) + 1.0 for j in range(4)] for i in range(4)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def rw3():
    return MarkovModel.time_invariant(3, 1.0, 1.0)


@pytest.fixture
def rw3_covariance():
    return BlockMatrix(rw3_covariance_values(), 1, symmetric=True)


@pytest.fixture
def rw3_cml():
    """Induced CM_L model of the random walk, closed by the boundary reproducing the walk."""
    return CMcModel(Direction.L, 3, 1,
                    {k: values[0] for k, values in RW3_INTERIOR.items()},
                    {k: values[1] for k, values in RW3_INTERIOR.items()},
                    {k: values[2] for k, values in RW3_INTERIOR.items()},
                    Boundary(RW3_BOUNDARY[2], RW3_BOUNDARY[0], RW3_BOUNDARY[1]))


def block_values(blocks):
    return {k: float(np.squeeze(value)) for k, value in blocks.items()}
