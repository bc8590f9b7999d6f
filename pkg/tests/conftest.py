import numpy as np
import pytest

from helpers import triangle_case, two_bus_case
from opflearn.network import build_all_matrices, enumerate_contingencies
from opflearn.scopf import assemble


@pytest.fixture(scope="session")
def triangle():
    return triangle_case()


@pytest.fixture(scope="session")
def triangle_cont(triangle):
    return enumerate_contingencies(triangle)


@pytest.fixture(scope="session")
def triangle_mats(triangle, triangle_cont):
    return build_all_matrices(triangle, triangle_cont)


@pytest.fixture(scope="session")
def triangle_problem(triangle, triangle_cont, triangle_mats):
    return assemble(triangle, triangle_cont, triangle_mats)


@pytest.fixture(scope="session")
def twobus():
    return two_bus_case()


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
