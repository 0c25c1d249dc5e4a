import numpy as np
import pytest

from conjlab.conjugacy import ConjugacyProblem
from conjlab.dichotomy import DichotomyData
from conjlab.examples import planar_example
from conjlab.flows import MatrixField, zero_field


@pytest.fixture(scope="session")
def planar():
    A, f, D = planar_example(0.1, alpha1=0.5)
    return ConjugacyProblem(A, f, D)


@pytest.fixture(scope="session")
def zero_problem():
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0)
    return ConjugacyProblem(A, zero_field(2), D)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
