import numpy as np
import pytest

from misar.arraygeom import build_default_geometry
from misar.imaging import VoxelGrid
from misar.simulator import Scene, Trajectory, simulate_collection
from misar.waveform import ChirpParams


@pytest.fixture(scope="session")
def geom():
    return build_default_geometry()


@pytest.fixture(scope="session")
def params():
    return ChirpParams()


def moving_point_cube(geom, params, n_bursts=8, position=(0.0, 0.0, 0.0), speed=0.55,
                      burst_interval=20e-3, errors=None):
    """Point target on a straight +x pass centered on the aperture midpoint."""
    t1 = (n_bursts - 1) * burst_interval + 127 * params.prt
    tm = 0.5 * t1
    traj = Trajectory.linear((-speed * (tm + 0.1), 0.0, 0.0), (speed, 0.0, 0.0), -0.1, t1 + 0.1)
    cube = simulate_collection(Scene.point(position), traj, geom, errors, params, n_bursts, burst_interval)
    return cube, traj


def small_grid(center=(0.0, 0.0, 0.0), spacing=0.005, dims=(12, 12, 12)):
    return VoxelGrid.centered(center, spacing, dims)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    def record(number, name, status, detail):
        line = f"[{status}] criterion {number}: {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
