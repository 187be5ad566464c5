import numpy as np
import pytest
from hypothesis import settings

from voxpose.camera import Intrinsics
from voxpose.scenes import SceneSpec, build_scene

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_intr():
    return Intrinsics(32, 32, 44.45)


@pytest.fixture(scope="session")
def sphere16():
    return build_scene(SceneSpec(kind="sphere", resolution=16))


@pytest.fixture(scope="session")
def checker32():
    return build_scene(SceneSpec(kind="checker_sphere", resolution=32))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "criterion"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
