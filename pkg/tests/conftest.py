from __future__ import annotations

import pytest

from scenefuzz.perception import DetectorProfile, DetectorStack, SensorProfile, TrackerConfig
from scenefuzz.scenario import Category, ObstacleSpec, Scenario


def obstacle(id, position, prototype="adult_male", **kwargs):
    return ObstacleSpec.from_prototype(id, prototype, position, **kwargs)


def scene(*obstacles, seed=1, **kwargs):
    return Scenario(obstacles=tuple(obstacles), rngSeed=seed, **kwargs)


def stack(lidar=None, camera=None, tracker=False, **kwargs):
    profile = DetectorProfile(
        lidar=lidar or SensorProfile.perfect(),
        camera=camera or SensorProfile.perfect(),
        tracker=TrackerConfig(enabled=tracker),
        **kwargs,
    )
    return DetectorStack.from_profile(profile)


def blind_to(*categories: Category) -> SensorProfile:
    return SensorProfile(base=1.0, distance_slope=0.0, noise=0.0, phantom_rate=0.0,
                         size_penalty={c.value: 1.0 for c in categories})


@pytest.fixture
def perfect_stack():
    return stack()


# one line per acceptance criterion, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
