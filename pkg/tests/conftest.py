import numpy as np
import pytest

from kslab.velocity_basis import BasisSpec, build_basis


@pytest.fixture(scope="session")
def basis_default():
    return build_basis(BasisSpec())


@pytest.fixture(scope="session")
def basis_small():
    return build_basis(BasisSpec(radial_order=6, angular_max=3))


@pytest.fixture(scope="session")
def collision_default(basis_default):
    from kslab.collision_ops import assemble_collision

    return assemble_collision(basis_default)


@pytest.fixture(scope="session")
def collision_small(basis_small):
    from kslab.collision_ops import assemble_collision

    return assemble_collision(basis_small, build_gamma=False)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20230823)
