import math

import numpy as np
import pytest
from hypothesis import settings

from goalnav.geometry import CameraExtrinsics, default_intrinsics
from goalnav.sim.scenario import SCHEMA, VERSION, validate

# numba kernels compile on first use, which would trip per-example deadlines
settings.register_profile("goalnav", deadline=None)
settings.load_profile("goalnav")


def wall(a, b, t=0.1, h=2.5):
    return {"from": list(a), "to": list(b), "thickness": t, "height": h}


def box_walls(x0, y0, x1, y1):
    return [wall((x0, y0), (x1, y0)), wall((x0, y1), (x1, y1)), wall((x0, y0), (x0, y1)), wall((x1, y0), (x1, y1))]


def scenario(name="t", size=(6.0, 6.0), walls=(), objects=(), spawns=((3.0, 3.0, 0.0),), subtasks=None):
    objects = [dict(o) for o in objects]
    if subtasks is None:
        subtasks = [objects[0]["label"]] if objects else []
    return {
        "schema": SCHEMA, "version": VERSION, "name": name, "size_m": list(size), "cell_size": 0.05,
        "height_m": 2.5, "walls": list(walls), "objects": objects, "spawns": [list(s) for s in spawns],
        "subtasks": list(subtasks),
    }


@pytest.fixture(scope="session")
def intr():
    return default_intrinsics()


@pytest.fixture(scope="session")
def ext():
    return CameraExtrinsics()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def room_world():
    """4 x 4 m room with a box and a chair, two spawns."""
    scn = scenario(
        "room", (5.0, 5.0), box_walls(0.5, 0.5, 4.5, 4.5),
        [{"label": "box", "aabb": [3.6, 3.6, 0.0, 4.2, 4.2, 0.8]},
         {"label": "chair", "aabb": [0.8, 3.7, 0.0, 1.3, 4.2, 0.9]}],
        [(1.5, 1.5, math.degrees(-math.pi / 4)), (2.0, 1.2, 0.0)],
        ["box", "chair"],
    )
    return validate(scn)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
