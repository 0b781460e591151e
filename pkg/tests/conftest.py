import math

import numpy as np
import pytest

from mcdesign import engine
from mcdesign.domain import ChannelSystem, PiecewiseConstant, free_potential
from mcdesign.engine import SolverConfig


COUPLED_WELL = np.array([[-5.0, 0.3], [0.3, -5.0]])


@pytest.fixture(scope="session")
def cfg():
    return SolverConfig(step=1e-3, bracket_step=0.05)


@pytest.fixture(scope="session")
def cfg_fast():
    return SolverConfig(step=2e-3, bracket_step=0.05)


@pytest.fixture(scope="session")
def coupled_well_system():
    pot = PiecewiseConstant(2, pieces=[(0.0, math.pi, COUPLED_WELL)])
    return ChannelSystem((0.0, 1.0), pot, "half_line", 30.0)


@pytest.fixture(scope="session")
def coupled_well_states(coupled_well_system, cfg):
    return engine.find_bound_states(coupled_well_system, (-4.99, -0.02), cfg)


@pytest.fixture(scope="session")
def one_channel_well_system():
    pot = PiecewiseConstant(1, pieces=[(0.0, math.pi, [[-5.0]])])
    return ChannelSystem((0.0,), pot, "half_line", 25.0)


@pytest.fixture(scope="session")
def one_channel_well_states(one_channel_well_system, cfg):
    return engine.find_bound_states(one_channel_well_system, (-4.99, -0.02), cfg)


@pytest.fixture(scope="session")
def free_two_channel():
    return ChannelSystem((0.0, 1.0), free_potential(2), "half_line", 12.0)
