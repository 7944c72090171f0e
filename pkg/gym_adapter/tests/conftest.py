import json

import pytest

from cyldrag_gym.client import ServerProcess

# Small, fast channel the server runs for every adapter test; the client only
# ever sees the wire protocol.
SERVER_CONFIG = {
    "fluid": {
        "cells_across_diameter": 20,
        "lattice_mach": 0.1,
        "channel_length": 0.15,
        "cylinder_center_x": 0.05,
        "kinematic_viscosity": 5.04e-05,
        "seed": 5,
    },
    "env": {
        "episode_duration": 1.0,
        "stabilization_duration": 0.5,
        "torque_noise": 0.0,
        "no_control_torque": 30.0,
    },
}


@pytest.fixture(scope="session")
def server(tmp_path_factory):
    base = tmp_path_factory.mktemp("server")
    env_file = base / "env.json"
    env_file.write_text(json.dumps(SERVER_CONFIG))
    with ServerProcess(env_file=env_file, profile="paper", log_dir=base / "logs") as proc:
        yield proc


@pytest.fixture(scope="session")
def server_logs(server, tmp_path_factory):
    # resolved from the ServerProcess launch arguments in the fixture above
    return None
