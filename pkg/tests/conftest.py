import numpy as np
import pytest

from tidalopt.mesh import build_mesh, generate_channel_mesh, Tag
from tidalopt.spaces import build_spaces
from tidalopt.swe import ModelConfig, ShallowWater
from tidalopt.turbine import TurbineFarm

SITE = (160.0, 480.0, 80.0, 240.0)


def unit_square():
    """Two triangles on the unit square, inflow left, outflow right, walls elsewhere."""
    V = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    T = np.array([[0, 1, 2], [0, 2, 3]])
    tags = {(0, 1): Tag.WALL, (1, 2): Tag.OUTFLOW, (2, 3): Tag.WALL, (0, 3): Tag.INFLOW}
    return build_mesh(V, T, tags)


@pytest.fixture(scope="session")
def square_mesh():
    return unit_square()


@pytest.fixture(scope="session")
def coarse_mesh():
    """Small channel with a refined site; cheap enough for many solves."""
    return generate_channel_mesh(640.0, 320.0, 80.0, site=SITE, h_in=10.0)


@pytest.fixture(scope="session")
def coarse_spaces(coarse_mesh):
    return build_spaces(coarse_mesh)


@pytest.fixture(scope="session")
def steady_problem(coarse_spaces):
    return ShallowWater(coarse_spaces, ModelConfig())


@pytest.fixture
def two_turbines():
    return TurbineFarm([[280.0, 150.0], [360.0, 175.0]], 21.0, 10.0, site=SITE)


# ---------------------------------------------------------------- acceptance
ACCEPTANCE_LINES: list = []


def report(number: int, title: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line."""
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
