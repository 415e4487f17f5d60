"""Expert-guided scenario augmentations.

Three scenario -> scenario transforms:

* connectivity (:func:`augment_con`): keep the objects and lane pieces that
  are topologically linked to the EGO, iterating to a fixpoint;
* visible region (:func:`augment_vr`): keep, per timestamp, only objects
  inside a cone of half-aperture ``alpha_vr`` and range ``d_vr`` around the
  EGO's line of sight;
* their intersection (:func:`augment_combined`).

All randomness goes through an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import points_in_polygon
from .scenario import MapElement, Scenario, SceneObject, Trajectory, ego, heading_at


# --- connectivity ------------------------------------------------------------

def inpolygon(objects: Iterable[SceneObject], element: MapElement) -> bool:
    """True if any trajectory point of any object lies in (or on) the element polygon."""
    pts = [o.trajectory.xy for o in objects]
    if not pts:
        return False
    return bool(points_in_polygon(np.concatenate(pts), element.polygon).any())


def pass_matrix(objects: Sequence[SceneObject], elements: Sequence[MapElement]) -> np.ndarray:
    """(n_objects, n_elements) matrix of ``inpolygon({o}, m)``."""
    out = np.zeros((len(objects), len(elements)), dtype=bool)
    if not objects or not elements:
        return out
    pts = np.concatenate([o.trajectory.xy for o in objects])
    owner = np.repeat(np.arange(len(objects)), [len(o.trajectory) for o in objects])
    for j, m in enumerate(elements):
        x0, y0, x1, y1 = m.bbox
        near = (pts[:, 0] >= x0 - 1e-9) & (pts[:, 0] <= x1 + 1e-9) & (pts[:, 1] >= y0 - 1e-9) & (pts[:, 1] <= y1 + 1e-9)
        if not near.any():
            continue
        idx = np.flatnonzero(near)
        inside = points_in_polygon(pts[idx], m.polygon)
        out[np.unique(owner[idx[inside]]), j] = True
    return out


def connected(elements: Iterable[MapElement], candidate: MapElement) -> bool:
    """True if ``candidate`` neighbours any member or shares a (non-null) intersection with one."""
    for m in elements:
        if candidate.id in m.neighbors or m.id in candidate.neighbors:
            return True
        if candidate.intersection is not None and candidate.intersection == m.intersection:
            return True
    return False


def connection_matrix(elements: Sequence[MapElement]) -> np.ndarray:
    """Symmetric (n, n) matrix of pairwise ``connected({a}, b)``."""
    n = len(elements)
    out = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(elements):
        for j, b in enumerate(elements):
            out[i, j] = connected((a,), b)
    return out


@dataclass(frozen=True)
class ConnectivityClosure:
    object_ids: frozenset
    map_ids: frozenset
    iterations: int


def connectivity_closure(scenario: Scenario) -> ConnectivityClosure:
    """Run the connectivity fixpoint and report the kept ids and loop count."""
    objs = scenario.objects
    elems = scenario.map
    passes = pass_matrix(objs, elems)
    conn = connection_matrix(elems)
    ego_mask = np.array([o.is_ego for o in objs], dtype=bool)
    if ego_mask.sum() != 1:
        ego(scenario)  # raises the structural error

    o_temp = ego_mask.copy()
    m_temp = np.zeros(len(elems), dtype=bool)
    iterations = 0
    while True:
        iterations += 1
        m_pass = passes[o_temp].any(axis=0)
        m_conn = conn[m_pass].any(axis=0) if m_pass.any() else np.zeros(len(elems), dtype=bool)
        m_new = m_pass | m_conn
        o_new = passes[:, m_new].any(axis=1) | ego_mask
        if np.array_equal(o_new, o_temp) and np.array_equal(m_new, m_temp):
            break
        o_temp, m_temp = o_new, m_new
    return ConnectivityClosure(
        frozenset(o.id for o, k in zip(objs, o_temp) if k),
        frozenset(m.id for m, k in zip(elems, m_temp) if k),
        iterations,
    )


def augment_con(scenario: Scenario, closure: Optional[ConnectivityClosure] = None) -> Scenario:
    """Keep the objects and lane pieces connected to the EGO; trajectories stay whole."""
    closure = closure or connectivity_closure(scenario)
    return scenario.replace(
        objects=[o for o in scenario.objects if o.id in closure.object_ids],
        map=[m for m in scenario.map if m.id in closure.map_ids],
    )


# --- visible region ----------------------------------------------------------

@dataclass(frozen=True)
class VRParams:
    alpha_min: float
    alpha_max: float
    d_min: float
    d_max: float
    alpha_vr: float
    d_vr: float

    def __post_init__(self):
        if not (0 < self.alpha_min <= self.alpha_vr <= self.alpha_max <= 360):
            raise ValueError(f"need 0 < alpha_min <= alpha_vr <= alpha_max <= 360, got {self}")
        if not (0 < self.d_min <= self.d_vr <= self.d_max):
            raise ValueError(f"need 0 < d_min <= d_vr <= d_max, got {self}")

    @classmethod
    def fixed(cls, alpha_vr: float, d_vr: float) -> "VRParams":
        return cls(alpha_vr, alpha_vr, d_vr, d_vr, alpha_vr, d_vr)


@dataclass(frozen=True)
class VRRanges:
    d_min: float = 20.0
    d_max: float = 100.0
    alpha_min: float = 60.0
    alpha_max: float = 360.0

    def __post_init__(self):
        if not 0 < self.alpha_min <= self.alpha_max <= 360:
            raise ValueError(f"need 0 < alpha_min <= alpha_max <= 360, got {self}")
        if not 0 < self.d_min <= self.d_max:
            raise ValueError(f"need 0 < d_min <= d_max, got {self}")

    def sample(self, rng: np.random.Generator) -> VRParams:
        alpha = float(rng.uniform(self.alpha_min, self.alpha_max))
        d = float(rng.uniform(self.d_min, self.d_max))
        # uniform() can return the upper bound through rounding; keep the invariant tight
        alpha = min(max(alpha, self.alpha_min), self.alpha_max)
        d = min(max(d, self.d_min), self.d_max)
        return VRParams(self.alpha_min, self.alpha_max, self.d_min, self.d_max, alpha, d)


def wrap_deg(a):
    """Wrap degrees to (-180, 180]."""
    w = np.mod(np.asarray(a, dtype=float) + 180.0, 360.0) - 180.0
    return np.where(w == -180.0, 180.0, w)


def in_vr(obj_xy, ego_xy, ego_heading, alpha_vr: float, d_vr: float):
    """Visible-region membership; accepts single points or aligned arrays.

    ``ego_heading`` is in radians, ``alpha_vr`` is the half-aperture in degrees.
    """
    obj_xy = np.asarray(obj_xy, dtype=float)
    ego_xy = np.asarray(ego_xy, dtype=float)
    delta = obj_xy - ego_xy
    dist = np.hypot(delta[..., 0], delta[..., 1])
    bearing = np.degrees(np.arctan2(delta[..., 1], delta[..., 0]))
    alpha_o = wrap_deg(bearing - np.degrees(ego_heading))
    # alpha_o lies in (-180, 180], so a half-aperture of 180 or more admits every bearing
    angle_ok = True if alpha_vr >= 180.0 else (-alpha_vr < alpha_o) & (alpha_o < alpha_vr)
    res = angle_ok & (dist < d_vr)
    return bool(res) if np.ndim(res) == 0 else res


def ego_pose_at(trajectory: Trajectory, ts: np.ndarray,
                cache: Optional[dict] = None) -> tuple[np.ndarray, np.ndarray]:
    """EGO positions (linear interpolation) and headings at times ``ts``."""
    ts = np.asarray(ts, dtype=float)
    x = np.interp(ts, trajectory.t, trajectory.xy[:, 0])
    y = np.interp(ts, trajectory.t, trajectory.xy[:, 1])
    cache = {} if cache is None else cache
    hd = np.empty(len(ts))
    for i, t in enumerate(ts):
        t = float(t)
        if t not in cache:
            cache[t] = heading_at(trajectory, t)
        hd[i] = cache[t]
    return np.stack([x, y], axis=1), hd


def _with_headings(source: Trajectory, mask: np.ndarray) -> Trajectory:
    """Subset of ``source``; kept samples carry the heading they had in the full trajectory."""
    kept = source.subset(mask)
    missing = np.isnan(kept.heading)
    if not missing.any():
        return kept
    hd = kept.heading.copy()
    hd[missing] = [heading_at(source, t) for t in kept.t[missing]]
    return Trajectory(kept.t, kept.xy, hd)


def vr_masks(scenario: Scenario, params: VRParams) -> dict[str, np.ndarray]:
    """Per-object boolean masks of visible samples; the EGO is always fully visible."""
    e = ego(scenario)
    headings_seen: dict[float, float] = {}
    out = {}
    for o in scenario.objects:
        if o.is_ego:
            out[o.id] = np.ones(len(o.trajectory), dtype=bool)
            continue
        exy, ehd = ego_pose_at(e.trajectory, o.trajectory.t, headings_seen)
        out[o.id] = np.asarray(in_vr(o.trajectory.xy, exy, ehd, params.alpha_vr, params.d_vr), dtype=bool).reshape(-1)
    return out


def _filter_objects(scenario: Scenario, masks: dict[str, np.ndarray]) -> list[SceneObject]:
    kept = []
    for o in scenario.objects:
        mask = masks.get(o.id)
        if mask is None or not mask.any():
            if o.is_ego:
                kept.append(o)
            continue
        if mask.all():
            kept.append(o)
        else:
            kept.append(SceneObject(o.id, _with_headings(o.trajectory, mask), o.size, o.object_class))
    return kept


def augment_vr(scenario: Scenario, params: VRParams) -> Scenario:
    """Drop, timestamp by timestamp, every non-EGO sample outside the visible region.

    The map is left untouched; objects with no visible sample disappear.
    """
    return scenario.replace(objects=_filter_objects(scenario, vr_masks(scenario, params)))


def augment_combined(scenario: Scenario, params: VRParams,
                     closure: Optional[ConnectivityClosure] = None) -> Scenario:
    """Intersection of the connectivity and visible-region views on (object, timestamp) pairs."""
    closure = closure or connectivity_closure(scenario)
    vr = vr_masks(scenario, params)
    masks = {
        oid: m for oid, m in vr.items() if oid in closure.object_ids
    }
    # the visible-region view keeps the whole map, so the map intersection is the connectivity map
    return scenario.replace(
        objects=_filter_objects(scenario, masks),
        map=[m for m in scenario.map if m.id in closure.map_ids],
    )


# --- view sampling -----------------------------------------------------------

@dataclass(frozen=True)
class AugmentationPolicy:
    """Per-view probabilities of the two expert augmentations.

    View b defaults to the view-a probabilities swapped between the two
    augmentations.
    """

    p_con_view_a: float = 0.7
    p_vr_view_a: float = 0.3
    vr_ranges: VRRanges = field(default_factory=VRRanges)
    rng_seed: int = 0
    p_con_view_b: Optional[float] = None
    p_vr_view_b: Optional[float] = None

    def __post_init__(self):
        for name in ("p_con_view_a", "p_vr_view_a", "p_con_view_b", "p_vr_view_b"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def view_probabilities(self) -> tuple[tuple[float, float], tuple[float, float]]:
        pb_con = self.p_vr_view_a if self.p_con_view_b is None else self.p_con_view_b
        pb_vr = self.p_con_view_a if self.p_vr_view_b is None else self.p_vr_view_b
        return (self.p_con_view_a, self.p_vr_view_a), (pb_con, pb_vr)


@dataclass(frozen=True)
class ViewPlan:
    apply_con: bool
    apply_vr: bool
    vr: VRParams


def draw_view_plans(policy: AugmentationPolicy, rng: np.random.Generator) -> tuple[ViewPlan, ViewPlan]:
    plans = []
    for p_con, p_vr in policy.view_probabilities:
        apply_con = bool(rng.random() < p_con)
        apply_vr = bool(rng.random() < p_vr)
        plans.append(ViewPlan(apply_con, apply_vr, policy.vr_ranges.sample(rng)))
    return plans[0], plans[1]


def apply_view_plan(scenario: Scenario, plan: ViewPlan,
                    closure: Optional[ConnectivityClosure] = None) -> Scenario:
    if plan.apply_con and plan.apply_vr:
        return augment_combined(scenario, plan.vr, closure)
    if plan.apply_con:
        return augment_con(scenario, closure)
    if plan.apply_vr:
        return augment_vr(scenario, plan.vr)
    return scenario


def scenario_rng(seed: int, scenario_id: str, *extra: int) -> np.random.Generator:
    """Generator keyed by (seed, scenario id); independent of processing order."""
    key = zlib.crc32(scenario_id.encode("utf-8"))
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, key, *extra])


def sample_views(scenario: Scenario, policy: AugmentationPolicy,
                 rng: Optional[np.random.Generator] = None) -> tuple[Scenario, Scenario]:
    """Two expert views of ``scenario``; deterministic for a fixed (scenario id, seed)."""
    if rng is None:
        rng = scenario_rng(policy.rng_seed, scenario.id)
    plan_a, plan_b = draw_view_plans(policy, rng)
    closure = connectivity_closure(scenario) if (plan_a.apply_con or plan_b.apply_con) else None
    return apply_view_plan(scenario, plan_a, closure), apply_view_plan(scenario, plan_b, closure)


def kept_pairs(scenario: Scenario) -> set[tuple[str, float]]:
    """All (object id, timestamp) pairs present in a scenario."""
    return {(o.id, float(t)) for o in scenario.objects for t in o.trajectory.t}

