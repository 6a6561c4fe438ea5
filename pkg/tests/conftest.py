import pytest

from funcdp.basis import BoxDomain, build_basis
from funcdp.regularity import class_params_for_logistic


@pytest.fixture(scope="session")
def square():
    return BoxDomain.cube(5.0)


@pytest.fixture(scope="session")
def basis14(square):
    return build_basis(square, 14)


@pytest.fixture(scope="session")
def basis6(square):
    return build_basis(square, 6)


@pytest.fixture(scope="session")
def logistic_class():
    return class_params_for_logistic(100, 0.01, 5.0)
