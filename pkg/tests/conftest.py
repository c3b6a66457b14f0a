import numpy as np
import pytest

from vplab import build_grid, maxwellian, CollisionAssembly


@pytest.fixture(scope="session")
def grid8():
    return build_grid(nv=8, vmax=6.0, nx=16, lx=np.pi)


@pytest.fixture(scope="session")
def maxw8(grid8):
    return maxwellian(grid8)


@pytest.fixture(scope="session")
def asm8(grid8, maxw8):
    return CollisionAssembly(grid8, maxw8, 0.0)


@pytest.fixture(scope="session")
def asm8_soft(grid8, maxw8):
    return CollisionAssembly(grid8, maxw8, -2.5)
