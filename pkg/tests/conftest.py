import numpy as np
import pytest
from hypothesis import settings

from kcones.cocycle import trace_from_matrices
from kcones.cones import standard_cone
from kcones.subspaces import make_subspace

settings.register_profile("kcones", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("kcones")

FIB = np.array([[2.0, 1.0], [1.0, 1.0]])
DIAG = np.diag([2.0, 0.5])
SHEAR = np.array([[2.0, 1.0], [0.0, 0.5]])


def const_trace(A, n=400, past=None):
    """Trace of a constant cocycle with ``n`` future and ``past`` past steps."""
    A = np.asarray(A, dtype=float)
    return trace_from_matrices([A] * n, past=[A] * (n if past is None else past))


def line(*v):
    return make_subspace(np.asarray(v, dtype=float))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square_cone():
    return standard_cone(2, 1, 1.0)
