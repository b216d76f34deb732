import numpy as np
import pytest

import airmarkov as am
from airmarkov.flowfield import VelocityField
from airmarkov.grid import Grid


@pytest.fixture(scope="session")
def gyre16():
    """16x16 unit-square double gyre with an outlet on the right wall."""
    grid = Grid(nx=16, ny=16, dx=1 / 16, dy=1 / 16,
                boundary_roles={"right": ["outlet"] * 16})
    return grid, am.gen_double_gyre(grid, 1.0)


@pytest.fixture(scope="session")
def op16(gyre16):
    grid, field = gyre16
    return am.build(grid, field, 1e-3, 0.5)


@pytest.fixture()
def shift_fixture():
    """1x5 channel with u = dx/dt_markov for dt_markov = 0.5 (binary-exact),
    so a CFL=1 substep is an exact one-cell shift."""
    grid = Grid(nx=5, ny=1, dx=1.0, dy=1.0,
                boundary_roles={"left": ["inlet"], "right": ["outlet"]})
    field = VelocityField(grid=grid, u=np.full(5, 2.0), v=np.zeros(5))
    return grid, field


@pytest.fixture()
def shift_operator(shift_fixture):
    grid, field = shift_fixture
    return am.build(grid, field, 0.0, 0.5, dt_sub=0.5)


def make_desk_ensemble():
    """Four occupant positions (3x3 blocks) in a 16x16 room with an outlet."""
    ref = Grid(nx=16, ny=16, dx=1 / 16, dy=1 / 16,
               boundary_roles={"right": ["outlet"] * 16})
    rects = [(2, 2, 4, 4), (10, 2, 12, 4), (2, 10, 4, 12), (10, 10, 12, 12)]
    realizations = []
    for rid, (i0, j0, i1, j1) in enumerate(rects, start=1):
        mask = am.CellSet.from_rect(ref, i0, j0, i1, j1).mask()
        grid = ref.with_obstructions(mask)
        realizations.append(am.Realization(rid=f"occupant{rid}", grid=grid,
                                           field=am.gen_double_gyre(grid, 1.0),
                                           weight=0.25))
    return am.Ensemble(realizations, ref), rects


@pytest.fixture(scope="session")
def desk_ensemble():
    return make_desk_ensemble()


@pytest.fixture(scope="session")
def desk_tracking(desk_ensemble):
    ensemble, _ = desk_ensemble
    return am.build_ensemble(ensemble, 1e-3, 0.5, 8, 1e-4)
