import copy

import pytest

from dronenav import config
from dronenav.planner import PathParams


def _deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


# Shrunk geometry for fast closed-loop tests; paper geometry where a test
# pins the study setup (h=45, r=6, d=100.03).
SMALL_GEOMETRY = {
    "mission": {"goal": [24.0, 0.0, 0.0], "max_time": 180.0},
    "path": {"height": 9.0, "arc_radius": 2.0},
}

NOISE_FREE = {
    "drone": {"tau": 0.0},
    "sensors": {
        "gps_bias": [0.0, 0.0, 0.0],
        "gps_noise": {"position": 0.0, "angle": 0.0},
        "gyro_bias": [0.0, 0.0, 0.0],
        "input_noise": {"velocity": 0.0, "gyro": 0.0},
        "aruco": {"noise": {"position": 0.0, "yaw": 0.0, "rollpitch": 0.0}},
        "uwb": {"range_noise": 0.0},
    },
}


def small_config(*extras: dict) -> dict:
    overrides = copy.deepcopy(SMALL_GEOMETRY)
    for extra in extras:
        _deep_update(overrides, copy.deepcopy(extra))
    return config.merged_config(overrides)


def paper_config(*extras: dict) -> dict:
    overrides: dict = {}
    for extra in extras:
        _deep_update(overrides, copy.deepcopy(extra))
    return config.merged_config(overrides)


@pytest.fixture
def paper_params() -> PathParams:
    return PathParams(height=45.0, arc_radius=6.0, start_distance=100.03)


@pytest.fixture
def small_params() -> PathParams:
    return PathParams(height=9.0, arc_radius=2.0, start_distance=24.0)
