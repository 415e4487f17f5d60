import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenaug.scenario import (MapElement, ObjectClass, StructuralError, Trajectory, TrajectoryPoint, ego,
                              heading_at, validate)

from conftest import lane, scenario, straight_ego, track


def basic():
    return scenario([straight_ego(), track("car", [[0, 1]] * 6)], [lane("L", -1, -2, 10, 2)])


def test_valid_scenario_has_empty_report():
    rep = validate(basic())
    assert rep.ok and rep.violations == ()


def test_two_egos_reported():
    s = basic()
    s2 = s.replace(objects=s.objects + (track("ego2", [[0, 0]] * 6, cls=ObjectClass.EGO),))
    assert any("multiple EGO" in v for v in validate(s2).violations)
    with pytest.raises(StructuralError):
        ego(s2)


def test_missing_ego():
    s = basic()
    s2 = s.replace(objects=s.objects[1:])
    assert any("missing EGO" in v for v in validate(s2).violations)
    with pytest.raises(StructuralError):
        ego(s2)


def test_dangling_neighbor():
    s = basic().replace(map=[lane("L", -1, -2, 10, 2, neighbors={"nope"})])
    assert any("dangling neighbor" in v for v in validate(s).violations)


def test_asymmetric_neighbor_and_bad_polygon_reported():
    bow = MapElement("B", np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float))
    s = basic().replace(map=[lane("L", -1, -2, 10, 2, neighbors={"B"}), bow])
    v = validate(s).violations
    assert any("asymmetric" in x for x in v)
    assert any("simple" in x for x in v)


def test_validate_is_idempotent_and_pure():
    s = basic().replace(map=[lane("L", -1, -2, 10, 2, neighbors={"x"})])
    assert validate(s) == validate(s)


def test_ego_picks_the_single_ego_among_vehicles():
    objs = [track(f"v{i}", [[i, 0]] * 6) for i in range(5)] + [straight_ego()]
    s = scenario(objs, [lane("L", -1, -2, 10, 2)])
    assert ego(s).id == "ego"


def test_heading_straight_x_and_y():
    tx = Trajectory(np.arange(5.0), np.stack([np.arange(5.0), np.zeros(5)], 1), None)
    ty = Trajectory(np.arange(5.0), np.stack([np.zeros(5), np.arange(5.0)], 1), None)
    for t in (0.0, 1.3, 4.0):
        assert heading_at(tx, t) == pytest.approx(0.0)
        assert heading_at(ty, t) == pytest.approx(math.pi / 2)


def test_heading_on_quarter_arc_matches_tangent():
    phi = np.linspace(0, np.pi / 2, 21)
    tr = Trajectory(phi, np.stack([np.cos(phi), np.sin(phi)], 1), None)
    mid = np.pi / 4
    assert abs(heading_at(tr, mid) - (mid + np.pi / 2)) < 0.05


def test_stored_heading_wins_and_stationary_inherits():
    pts = [TrajectoryPoint(0, 0, 0, 1.0), TrajectoryPoint(1, 1, 0), TrajectoryPoint(2, 1, 0), TrajectoryPoint(3, 1, 0)]
    tr = Trajectory.from_points(pts)
    assert heading_at(tr, 0.0) == 1.0
    # stationary bracket after moving along +x
    assert heading_at(tr, 2.5) == pytest.approx(0.0)
    still = Trajectory(np.arange(3.0), np.zeros((3, 2)), None)
    assert heading_at(still, 1.5) == 0.0


def test_heading_out_of_span():
    tr = Trajectory(np.arange(3.0), np.zeros((3, 2)), None)
    with pytest.raises(ValueError):
        heading_at(tr, 5.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 2**31 - 1))
def test_heading_invariant_under_time_shift(shift, seed):
    rng = np.random.default_rng(seed)
    xy = np.cumsum(rng.normal(size=(8, 2)), axis=0)
    t = np.arange(8.0)
    a = Trajectory(t, xy, None)
    b = Trajectory(t + shift, xy, None)
    q = float(rng.uniform(0, 7))
    assert heading_at(a, q) == pytest.approx(heading_at(b, q + shift), abs=1e-6)


def test_points_roundtrip():
    tr = Trajectory.from_points([TrajectoryPoint(0, 1, 2), TrajectoryPoint(1, 2, 3, 0.5)])
    assert Trajectory.from_points(tr.points) == tr


def test_suite_scenarios_valid_and_ego_spans(suite):
    for s in suite:
        assert validate(s).ok
        tr = ego(s).trajectory
        assert tr.t[0] <= s.time_span[0] and tr.t[-1] >= s.time_span[1]
