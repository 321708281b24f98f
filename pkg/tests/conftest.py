import numpy as np
import pytest

import capsize_tst as ct

# default configuration used throughout: omega0^2 = 1, alpha = 1, delta = 0.5,
# A = disk radius 0.2 at the origin, B = {|theta| >= 1.5},
# grid 200x200 on [-2,2]x[-2.5,2.5]

DEFAULT = dict(omega0_sq=1.0, alpha=1.0, delta=0.5)
EPS = 0.4


@pytest.fixture(scope="session")
def params04():
    return ct.RollModelParams(epsilon=EPS, **DEFAULT)


@pytest.fixture(scope="session")
def system04(params04):
    return ct.toy_roll_system(params04)


@pytest.fixture(scope="session")
def system_det():
    return ct.toy_roll_system(ct.RollModelParams(epsilon=0.0, **DEFAULT))


@pytest.fixture(scope="session")
def grid():
    return ct.Grid2D((-2.0, 2.0), (-2.5, 2.5), 200, 200)


@pytest.fixture(scope="session")
def region_a():
    return ct.disk_region("A", (0.0, 0.0), 0.2)


@pytest.fixture(scope="session")
def region_b():
    return ct.band_exterior_region("B", 1.5)


@pytest.fixture(scope="session")
def fields(system04, grid, region_a, region_b):
    """Stationary density (reset variant), q+ and q- on the default grid."""
    rho = ct.solve_stationary_density(system04, grid, reset_region=region_b,
                                      reset_state=(0.0, 0.0))
    q_plus = ct.solve_committor_forward(system04, grid, region_a, region_b)
    q_minus = ct.solve_committor_backward(system04, grid, region_a, region_b,
                                          rho)
    return rho, q_plus, q_minus


def gibbs_energy(params):
    def energy(th, v):
        return 0.5 * v**2 + params.potential(th)
    return energy


@pytest.fixture(scope="session")
def gibbs04(params04, grid):
    beta = 2.0 * params04.delta / params04.epsilon**2
    return ct.boltzmann_density(grid, gibbs_energy(params04), beta)
