"""Scenario model: objects with trajectories plus a lane-piece map."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import polygon_is_simple

STATIONARY_EPS = 1e-6
TIME_TOL = 1e-9


class StructuralError(ValueError):
    """Raised when a scenario lacks the structure an operation needs."""


class ObjectClass(str, enum.Enum):
    EGO = "ego"
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    OTHER = "other"


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    x: float
    y: float
    heading: Optional[float] = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered samples; ``heading`` holds NaN where no heading was given."""

    t: np.ndarray
    xy: np.ndarray
    heading: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if self.heading is None:
            heading = np.full(len(t), np.nan)
        else:
            heading = np.asarray(self.heading, dtype=float).reshape(-1)
        if not (len(t) == len(xy) == len(heading)):
            raise ValueError("trajectory arrays differ in length")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "xy", _frozen(xy))
        object.__setattr__(self, "heading", _frozen(heading))

    @classmethod
    def from_points(cls, points: Iterable[TrajectoryPoint]) -> "Trajectory":
        pts = list(points)
        return cls(
            t=np.array([p.t for p in pts], dtype=float),
            xy=np.array([[p.x, p.y] for p in pts], dtype=float).reshape(-1, 2),
            heading=np.array([np.nan if p.heading is None else p.heading for p in pts], dtype=float),
        )

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [
            TrajectoryPoint(float(t), float(x), float(y), None if math.isnan(h) else float(h))
            for t, (x, y), h in zip(self.t, self.xy, self.heading)
        ]

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.heading, other.heading, equal_nan=True)
        )

    __hash__ = None

    def subset(self, mask: np.ndarray) -> "Trajectory":
        mask = np.asarray(mask, dtype=bool)
        return Trajectory(self.t[mask], self.xy[mask], self.heading[mask])

    @property
    def has_heading(self) -> np.ndarray:
        return ~np.isnan(self.heading)


@dataclass(frozen=True)
class SceneObject:
    id: str
    trajectory: Trajectory
    size: tuple[float, float]
    object_class: ObjectClass = ObjectClass.VEHICLE

    @property
    def is_ego(self) -> bool:
        return self.object_class == ObjectClass.EGO


@dataclass(frozen=True, eq=False)
class MapElement:
    id: str
    polygon: np.ndarray
    neighbors: frozenset = field(default_factory=frozenset)
    intersection: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "polygon", _frozen(np.asarray(self.polygon, dtype=float).reshape(-1, 2)))
        object.__setattr__(self, "neighbors", frozenset(self.neighbors))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapElement):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.polygon, other.polygon)
            and self.neighbors == other.neighbors
            and self.intersection == other.intersection
        )

    __hash__ = None

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.polygon.min(axis=0)
        hi = self.polygon.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


@dataclass(frozen=True)
class Scenario:
    id: str
    objects: tuple[SceneObject, ...]
    map: tuple[MapElement, ...]
    time_span: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "map", tuple(self.map))
        object.__setattr__(self, "time_span", (float(self.time_span[0]), float(self.time_span[1])))

    def object_ids(self) -> list[str]:
        return [o.id for o in self.objects]

    def map_ids(self) -> list[str]:
        return [m.id for m in self.map]

    def replace(self, objects: Optional[Sequence[SceneObject]] = None,
                map: Optional[Sequence[MapElement]] = None) -> "Scenario":
        return Scenario(
            id=self.id,
            objects=self.objects if objects is None else tuple(objects),
            map=self.map if map is None else tuple(map),
            time_span=self.time_span,
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(scenario: Scenario) -> ValidationReport:
    """Collect every violated invariant; never raises."""
    out: list[str] = []
    t0, t1 = scenario.time_span
    if not (math.isfinite(t0) and math.isfinite(t1)) or t1 < t0:
        out.append(f"invalid time_span {scenario.time_span}")

    egos = [o for o in scenario.objects if o.is_ego]
    if not egos:
        out.append("missing EGO")
    elif len(egos) > 1:
        out.append("multiple EGO")

    seen: set[str] = set()
    for o in scenario.objects:
        if o.id in seen:
            out.append(f"duplicate object id {o.id!r}")
        seen.add(o.id)
        if len(o.size) != 2 or not all(math.isfinite(s) and s > 0 for s in o.size):
            out.append(f"object {o.id!r}: non-positive size {tuple(o.size)}")
        tr = o.trajectory
        if not np.all(np.isfinite(tr.t)) or not np.all(np.isfinite(tr.xy)):
            out.append(f"object {o.id!r}: non-finite trajectory sample")
        if len(tr) > 1 and np.any(np.diff(tr.t) <= 0):
            out.append(f"object {o.id!r}: timestamps not strictly increasing")
        if len(tr) and (tr.t.min() < t0 - TIME_TOL or tr.t.max() > t1 + TIME_TOL):
            out.append(f"object {o.id!r}: timestamps outside time_span")
        if o.is_ego:
            if len(tr) == 0:
                out.append("EGO trajectory empty")
            elif tr.t[0] > t0 + TIME_TOL or tr.t[-1] < t1 - TIME_TOL:
                out.append("EGO trajectory does not cover time_span")

    ids = {m.id for m in scenario.map}
    if len(ids) != len(scenario.map):
        out.append("duplicate map element id")
    by_id = {m.id: m for m in scenario.map}
    for m in scenario.map:
        if len(m.polygon) < 3:
            out.append(f"map element {m.id!r}: polygon has fewer than 3 vertices")
        elif not np.all(np.isfinite(m.polygon)):
            out.append(f"map element {m.id!r}: non-finite polygon vertex")
        elif not polygon_is_simple(m.polygon):
            out.append(f"map element {m.id!r}: polygon not simple")
        for n in sorted(m.neighbors):
            if n not in by_id:
                out.append(f"map element {m.id!r}: dangling neighbor {n!r}")
            elif m.id not in by_id[n].neighbors:
                out.append(f"map element {m.id!r}: asymmetric neighbor {n!r}")
    return ValidationReport(tuple(out))


def ego(scenario: Scenario) -> SceneObject:
    egos = [o for o in scenario.objects if o.is_ego]
    if len(egos) != 1:
        raise StructuralError(f"scenario {scenario.id!r} has {len(egos)} EGO objects, expected 1")
    return egos[0]


def heading_at(trajectory: Trajectory, t: float) -> float:
    """Heading in radians at time ``t``.

    A stored heading at the nearest sample wins. Otherwise the displacement
    between the samples bracketing ``t`` is used; stationary brackets fall
    back to the most recent earlier heading, or 0.
    """
    ts = trajectory.t
    n = len(ts)
    if n == 0:
        raise ValueError("empty trajectory")
    if t < ts[0] - TIME_TOL or t > ts[-1] + TIME_TOL:
        raise ValueError(f"t={t} outside trajectory span [{ts[0]}, {ts[-1]}]")
    hs = trajectory.heading
    nearest = int(np.argmin(np.abs(ts - t)))
    if not math.isnan(hs[nearest]):
        return float(hs[nearest])
    if n == 1:
        return 0.0
    i = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, n - 2))
    xy = trajectory.xy
    # walk back until a moving bracket or a stored heading turns up
    for j in range(i, -1, -1):
        d = xy[j + 1] - xy[j]
        if math.hypot(d[0], d[1]) >= STATIONARY_EPS:
            return math.atan2(d[1], d[0])
        if not math.isnan(hs[j]):
            return float(hs[j])
    return 0.0


def headings(trajectory: Trajectory) -> np.ndarray:
    """heading_at evaluated at every sample of the trajectory."""
    return np.array([heading_at(trajectory, t) for t in trajectory.t])
