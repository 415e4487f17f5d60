"""Deterministic synthetic scenarios on a fixed four-way-intersection map.

Layout (right-hand traffic, lane width 3.5 m): a north-south and an
east-west road with two lanes per direction cross at a box
``[-7, 7] x [-7, 7]`` split into four quadrant pieces sharing one
intersection id. Arms run out to 100 m. A short two-lane service road east
of the southern arm has no links to the rest of the map; background objects
placed there are disconnected from the EGO by construction.

The EGO always starts on the southern arm heading north. Background object
ids encode ground truth: ``con-*`` objects drive on lanes one hop from the
EGO's start lane, ``dis-*`` objects drive on the service road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scenario import MapElement, ObjectClass, Scenario, SceneObject, Trajectory

LANE_W = 3.5
BOX = 2 * LANE_W
ARM = 100.0
HZ = 10
DURATION = 5.0
INTERSECTION_ID = "I0"
MANEUVERS = ("straight", "left_turn", "right_turn", "lane_change")
EGO_SIZE = (4.6, 1.9)
SERVICE_X = (28.0, 35.0)
SERVICE_Y = (-ARM, -12.0)


@dataclass(frozen=True)
class SynthSpec:
    maneuver: str = "straight"
    n_background_objects: int = 0
    connected_fraction: float = 0.5
    speed: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {self.maneuver!r}")
        if self.n_background_objects < 0:
            raise ValueError("n_background_objects must be >= 0")
        if not 0.0 <= self.connected_fraction <= 1.0:
            raise ValueError("connected_fraction must lie in [0, 1]")
        if self.speed <= 0:
            raise ValueError("speed must be positive")


def _rect(x0, y0, x1, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def build_map() -> tuple[MapElement, ...]:
    pieces: dict[str, np.ndarray] = {}
    inter: dict[str, Optional[str]] = {}
    links: dict[str, set] = {}

    def add(pid, poly, intersection=None):
        pieces[pid] = poly
        inter[pid] = intersection
        links[pid] = set()

    def link(a, b):
        links[a].add(b)
        links[b].add(a)

    w, b = LANE_W, BOX
    # quadrants of the intersection box
    add("X_ne", _rect(0, 0, b, b), INTERSECTION_ID)
    add("X_nw", _rect(-b, 0, 0, b), INTERSECTION_ID)
    add("X_sw", _rect(-b, -b, 0, 0), INTERSECTION_ID)
    add("X_se", _rect(0, -b, b, 0), INTERSECTION_ID)

    # north-south road: northbound on x > 0, southbound on x < 0
    for arm, (y0, y1), q_east, q_west in (("S", (-ARM, -b), "X_se", "X_sw"), ("N", (b, ARM), "X_ne", "X_nw")):
        add(f"{arm}_nb_in", _rect(0, y0, w, y1))
        add(f"{arm}_nb_out", _rect(w, y0, b, y1))
        add(f"{arm}_sb_in", _rect(-w, y0, 0, y1))
        add(f"{arm}_sb_out", _rect(-b, y0, -w, y1))
        link(f"{arm}_nb_in", f"{arm}_nb_out")
        link(f"{arm}_sb_in", f"{arm}_sb_out")
        link(f"{arm}_nb_in", f"{arm}_sb_in")
        link(f"{arm}_nb_in", q_east)
        link(f"{arm}_nb_out", q_east)
        link(f"{arm}_sb_in", q_west)
        link(f"{arm}_sb_out", q_west)

    # east-west road: eastbound on y < 0, westbound on y > 0
    for arm, (x0, x1), q_north, q_south in (("W", (-ARM, -b), "X_nw", "X_sw"), ("E", (b, ARM), "X_ne", "X_se")):
        add(f"{arm}_eb_in", _rect(x0, -w, x1, 0))
        add(f"{arm}_eb_out", _rect(x0, -b, x1, -w))
        add(f"{arm}_wb_in", _rect(x0, 0, x1, w))
        add(f"{arm}_wb_out", _rect(x0, w, x1, b))
        link(f"{arm}_eb_in", f"{arm}_eb_out")
        link(f"{arm}_wb_in", f"{arm}_wb_out")
        link(f"{arm}_eb_in", f"{arm}_wb_in")
        link(f"{arm}_eb_in", q_south)
        link(f"{arm}_eb_out", q_south)
        link(f"{arm}_wb_in", q_north)
        link(f"{arm}_wb_out", q_north)

    # isolated service road
    sx0, sx1 = SERVICE_X
    mid = 0.5 * (sx0 + sx1)
    add("R_sb", _rect(sx0, SERVICE_Y[0], mid, SERVICE_Y[1]))
    add("R_nb", _rect(mid, SERVICE_Y[0], sx1, SERVICE_Y[1]))
    link("R_sb", "R_nb")

    return tuple(
        MapElement(pid, poly, frozenset(links[pid]), inter[pid]) for pid, poly in pieces.items()
    )


def _timestamps() -> np.ndarray:
    return np.arange(int(DURATION * HZ) + 1) / float(HZ)


def _straight_arc_straight(p0, psi0: float, lead: float, radius: float, turn: int, s: np.ndarray):
    """Positions and headings along: ``lead`` m straight, a 90 degree arc, then straight."""
    p0 = np.asarray(p0, dtype=float)
    u0 = np.array([math.cos(psi0), math.sin(psi0)])
    n0 = np.array([-u0[1], u0[0]]) * turn
    arc_len = 0.5 * math.pi * radius
    pa = p0 + lead * u0
    center = pa + radius * n0
    psi1 = psi0 + turn * 0.5 * math.pi
    u1 = np.array([math.cos(psi1), math.sin(psi1)])
    pb = center + radius * u0

    xy = np.empty((len(s), 2))
    hd = np.empty(len(s))
    for i, si in enumerate(s):
        if si <= lead:
            xy[i] = p0 + si * u0
            hd[i] = psi0
        elif si <= lead + arc_len:
            phi = (si - lead) / radius
            # rotate the centre->start vector by turn*phi
            r0 = pa - center
            c, sn = math.cos(turn * phi), math.sin(turn * phi)
            xy[i] = center + np.array([c * r0[0] - sn * r0[1], sn * r0[0] + c * r0[1]])
            hd[i] = psi0 + turn * phi
        else:
            xy[i] = pb + (si - lead - arc_len) * u1
            hd[i] = psi1
    return xy, hd


def _ego_path(maneuver: str, speed: float, rng: np.random.Generator):
    t = _timestamps()
    s = speed * t
    total = speed * DURATION
    up = 0.5 * math.pi
    if maneuver in ("straight", "lane_change"):
        y_hi = -BOX - 1.0 - total
        y0 = rng.uniform(-ARM + 3.0, max(-ARM + 3.0, y_hi))
        inner, outer = 0.5 * LANE_W, 1.5 * LANE_W
        if maneuver == "straight":
            x = inner if rng.random() < 0.5 else outer
            xy = np.stack([np.full_like(s, x), y0 + s], axis=1)
            hd = np.full_like(s, up)
        else:
            x_from, x_to = (outer, inner) if rng.random() < 0.5 else (inner, outer)
            t_a, t_b = rng.uniform(0.5, 1.5), rng.uniform(3.5, 4.5)
            frac = np.clip((t - t_a) / (t_b - t_a), 0.0, 1.0)
            smooth = 0.5 - 0.5 * np.cos(math.pi * frac)
            xy = np.stack([x_from + (x_to - x_from) * smooth, y0 + s], axis=1)
            dxdt = np.where((t > t_a) & (t < t_b),
                            (x_to - x_from) * 0.5 * math.pi * np.sin(math.pi * frac) / (t_b - t_a), 0.0)
            hd = np.arctan2(np.full_like(s, speed), dxdt)
        return t, xy, hd
    if maneuver == "left_turn":
        radius, turn = BOX + 0.5 * LANE_W, 1
    else:
        radius, turn = BOX - 0.5 * LANE_W, -1
    arc = 0.5 * math.pi * radius
    spare = max(total - arc, 0.0)
    lead = rng.uniform(0.2, 0.6) * spare
    p0 = (0.5 * LANE_W, -BOX - lead)
    xy, hd = _straight_arc_straight(p0, up, lead, radius, turn, s)
    return t, xy, hd


def _lane_object(oid: str, x: float, heading: float, y0: float, speed: float, size) -> SceneObject:
    t = _timestamps()
    y = y0 + math.sin(heading) * speed * t
    xy = np.stack([np.full_like(t, x), y], axis=1)
    return SceneObject(oid, Trajectory(t, xy, np.full_like(t, heading)), size, ObjectClass.VEHICLE)


def generate(spec: SynthSpec) -> Scenario:
    rng = np.random.default_rng([spec.seed, MANEUVERS.index(spec.maneuver)])
    t, xy, hd = _ego_path(spec.maneuver, spec.speed, rng)
    ego_obj = SceneObject("ego", Trajectory(t, xy, hd), EGO_SIZE, ObjectClass.EGO)

    n_con = int(round(spec.connected_fraction * spec.n_background_objects))
    n_dis = spec.n_background_objects - n_con
    up, down = 0.5 * math.pi, -0.5 * math.pi
    start_inner = abs(xy[0, 0] - 0.5 * LANE_W) < 1e-9
    # lanes one hop from the EGO's start lane
    con_lanes = [(0.5 * LANE_W, up), (1.5 * LANE_W, up)]
    if start_inner:
        con_lanes.append((-0.5 * LANE_W, down))

    objects = [ego_obj]
    for i in range(n_con):
        x, head = con_lanes[int(rng.integers(len(con_lanes)))]
        v = float(rng.uniform(4.0, 12.0))
        size = (float(rng.uniform(4.0, 5.2)), float(rng.uniform(1.7, 2.0)))
        if head > 0:
            y0 = float(rng.uniform(-ARM + 3.0, -BOX - 3.0))
        else:
            y0 = float(rng.uniform(-ARM + 3.0 + 5 * v, -BOX - 1.0))
        objects.append(_lane_object(f"con-{i}", x, head, y0, v, size))
    mid = 0.5 * sum(SERVICE_X)
    for i in range(n_dis):
        v = float(rng.uniform(3.0, 10.0))
        size = (float(rng.uniform(4.0, 5.2)), float(rng.uniform(1.7, 2.0)))
        lo, hi = SERVICE_Y[0] + 3.0, SERVICE_Y[1] - 3.0
        if rng.random() < 0.5:
            x, head, y0 = 0.5 * (mid + SERVICE_X[1]), up, float(rng.uniform(lo, hi - 5 * v))
        else:
            x, head, y0 = 0.5 * (SERVICE_X[0] + mid), down, float(rng.uniform(lo + 5 * v, hi))
        objects.append(_lane_object(f"dis-{i}", x, head, y0, v, size))

    sid = f"synth-{spec.maneuver}-{spec.seed}"
    return Scenario(sid, tuple(objects), build_map(), (0.0, DURATION))


def generate_suite(count: int, seed: int = 0, n_background: tuple[int, int] = (2, 8),
                   connected_fraction: float = 0.5, speed: tuple[float, float] = (6.0, 12.0)) -> list[Scenario]:
    """``count`` scenarios cycling through the four maneuvers, ids unique within the suite."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        spec = SynthSpec(
            maneuver=MANEUVERS[i % len(MANEUVERS)],
            n_background_objects=int(rng.integers(n_background[0], n_background[1] + 1)),
            connected_fraction=connected_fraction,
            speed=float(rng.uniform(*speed)),
            seed=int(rng.integers(2**31)),
        )
        s = generate(spec)
        out.append(Scenario(f"{s.id}-{i}", s.objects, s.map, s.time_span))
    return out
