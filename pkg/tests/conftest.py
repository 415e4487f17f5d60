import numpy as np
import pytest

from scenaug.scenario import MapElement, ObjectClass, Scenario, SceneObject, Trajectory
from scenaug.synth import generate_suite


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def lane(lid, x0, y0, x1, y1, neighbors=(), intersection=None):
    return MapElement(lid, rect(x0, y0, x1, y1), frozenset(neighbors), intersection)


def track(oid, xy, t=None, heading=None, cls=ObjectClass.VEHICLE, size=(4.5, 1.8)):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    t = np.arange(len(xy), dtype=float) if t is None else np.asarray(t, dtype=float)
    return SceneObject(oid, Trajectory(t, xy, heading), size, cls)


def straight_ego(n=6, dx=1.0, y=0.0, heading=None):
    xy = np.stack([np.arange(n) * dx, np.full(n, y)], axis=1)
    return track("ego", xy, heading=heading, cls=ObjectClass.EGO)


def scenario(objects, lanes, sid="s", span=None):
    if span is None:
        ts = np.concatenate([o.trajectory.t for o in objects])
        span = (float(ts.min()), float(ts.max()))
    return Scenario(sid, tuple(objects), tuple(lanes), span)


@pytest.fixture(scope="session")
def suite():
    return generate_suite(40, seed=11)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a result line and fails the test when ``ok`` is false."""

    def record(n, ok, detail):
        ACCEPTANCE[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE[n])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
