import numpy as np
import pytest

from cyldrag.env import EnvConfig, ObservationSet
from cyldrag.lattice import FluidConfig, desk_config

# Small channel for fast tests: Re 100 keeps the cell Reynolds number low
# enough that 20 cells across the diameter stays stable even at full-cap
# spin; Re 200 (the richer desk default) needs 40 cells.
TINY_SAFE_ACTION = 0.3


def tiny_fluid(**overrides) -> FluidConfig:
    base = dict(
        cells_across_diameter=20,
        lattice_mach=0.1,
        channel_length=0.15,
        cylinder_center_x=0.05,
        kinematic_viscosity=0.12 * 0.042 / 100.0,
        seed=5,
    )
    base.update(overrides)
    return FluidConfig(**base)


def tiny_env_cfg(**overrides) -> EnvConfig:
    base = dict(
        episode_duration=2.0,
        stabilization_duration=1.0,
        torque_noise=0.0,
        no_control_torque=30.0,
    )
    base.update(overrides)
    return EnvConfig(**base)


@pytest.fixture
def fluid():
    return tiny_fluid()


@pytest.fixture
def env_cfg():
    return tiny_env_cfg()


@pytest.fixture(scope="session")
def desk_fluid():
    return desk_config(seed=21)


@pytest.fixture(scope="session")
def tiny_wake_state():
    """A developed tiny-channel wake shared by sampling/imaging tests."""
    from cyldrag.lattice import init_lattice, step

    state = init_lattice(tiny_fluid(seed=9))
    for _ in range(3000):
        step(state, 2.0)
    return state


def mild_actions(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(0.0, 0.15, n), -TINY_SAFE_ACTION, TINY_SAFE_ACTION)
