"""Scenario JSON reading/writing and maneuver-label mining."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .geometry import points_in_polygon
from .scenario import (
    MapElement,
    ObjectClass,
    Scenario,
    SceneObject,
    Trajectory,
    ego,
    headings,
    validate,
)

log = logging.getLogger(__name__)


class ScenarioParseError(ValueError):
    """Malformed JSON; ``offset`` is the byte offset of the failure."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class SchemaError(ValueError):
    """A document field is missing or has the wrong shape; ``path`` names it."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class ScenarioValidationError(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("; ".join(violations))
        self.violations = tuple(violations)


class LabelMiningWarning(UserWarning):
    pass


# --- parsing -----------------------------------------------------------------

def _need(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise SchemaError(path or "<root>", "expected an object")
    if key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing field")
    return obj[key]


def _as_id(v, path: str) -> str:
    if isinstance(v, bool) or not isinstance(v, (str, int)):
        raise SchemaError(path, "expected a string id")
    return str(v)


def _as_num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    return float(v)


def _as_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise SchemaError(path, "expected an array")
    return v


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a Scenario from a decoded JSON document; raises SchemaError on shape problems."""
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "expected an object")
    sid = _as_id(_need(doc, "id", ""), "id")
    span = _as_list(_need(doc, "time_span", ""), "time_span")
    if len(span) != 2:
        raise SchemaError("time_span", "expected [t0, t1]")
    time_span = (_as_num(span[0], "time_span[0]"), _as_num(span[1], "time_span[1]"))

    objects = []
    for i, od in enumerate(_as_list(_need(doc, "objects", ""), "objects")):
        p = f"objects[{i}]"
        oid = _as_id(_need(od, "id", p), f"{p}.id")
        cls = _need(od, "class", p)
        try:
            ocls = ObjectClass(cls)
        except ValueError:
            raise SchemaError(f"{p}.class", f"unknown class {cls!r}") from None
        size = _as_list(_need(od, "size", p), f"{p}.size")
        if len(size) != 2:
            raise SchemaError(f"{p}.size", "expected [length, width]")
        size_t = (_as_num(size[0], f"{p}.size[0]"), _as_num(size[1], f"{p}.size[1]"))
        rows = _as_list(_need(od, "trajectory", p), f"{p}.trajectory")
        t, xy, hd = [], [], []
        for j, row in enumerate(rows):
            rp = f"{p}.trajectory[{j}]"
            row = _as_list(row, rp)
            if len(row) not in (3, 4):
                raise SchemaError(rp, "expected [t, x, y] or [t, x, y, heading]")
            t.append(_as_num(row[0], f"{rp}[0]"))
            xy.append((_as_num(row[1], f"{rp}[1]"), _as_num(row[2], f"{rp}[2]")))
            hd.append(_as_num(row[3], f"{rp}[3]") if len(row) == 4 else math.nan)
        traj = Trajectory(np.array(t), np.array(xy).reshape(-1, 2), np.array(hd))
        objects.append(SceneObject(oid, traj, size_t, ocls))

    elements = []
    for i, md in enumerate(_as_list(_need(doc, "map", ""), "map")):
        p = f"map[{i}]"
        mid = _as_id(_need(md, "id", p), f"{p}.id")
        poly = _as_list(_need(md, "polygon", p), f"{p}.polygon")
        verts = []
        for j, v in enumerate(poly):
            v = _as_list(v, f"{p}.polygon[{j}]")
            if len(v) != 2:
                raise SchemaError(f"{p}.polygon[{j}]", "expected [x, y]")
            verts.append((_as_num(v[0], f"{p}.polygon[{j}][0]"), _as_num(v[1], f"{p}.polygon[{j}][1]")))
        nbrs = [_as_id(n, f"{p}.neighbors[{j}]")
                for j, n in enumerate(_as_list(md.get("neighbors", []), f"{p}.neighbors"))]
        inter = md.get("intersection")
        inter = None if inter is None else _as_id(inter, f"{p}.intersection")
        elements.append(MapElement(mid, np.array(verts).reshape(-1, 2), frozenset(nbrs), inter))

    return Scenario(sid, tuple(objects), tuple(symmetrize_neighbors(elements)), time_span)


def symmetrize_neighbors(elements: Sequence[MapElement]) -> list[MapElement]:
    """Add the reverse of every resolvable neighbor link; dangling ids are left for validate()."""
    ids = {m.id for m in elements}
    extra: dict[str, set] = {m.id: set() for m in elements}
    for m in elements:
        for n in m.neighbors:
            if n in ids:
                extra[n].add(m.id)
    return [
        m if extra[m.id] <= m.neighbors
        else MapElement(m.id, m.polygon, m.neighbors | extra[m.id], m.intersection)
        for m in elements
    ]


def parse_scenario(data: Union[bytes, str]) -> Scenario:
    """Parse and validate one scenario document."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, len(text[: exc.pos].encode("utf-8"))) from None
    scenario = scenario_from_dict(doc)
    report = validate(scenario)
    if not report.ok:
        raise ScenarioValidationError(report.violations)
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    objs = []
    for o in scenario.objects:
        rows = []
        for t, (x, y), h in zip(o.trajectory.t, o.trajectory.xy, o.trajectory.heading):
            row = [float(t), float(x), float(y)]
            if not math.isnan(h):
                row.append(float(h))
            rows.append(row)
        objs.append({
            "id": o.id,
            "class": o.object_class.value,
            "size": [float(o.size[0]), float(o.size[1])],
            "trajectory": rows,
        })
    return {
        "id": scenario.id,
        "time_span": [scenario.time_span[0], scenario.time_span[1]],
        "objects": objs,
        "map": [
            {
                "id": m.id,
                "polygon": [[float(x), float(y)] for x, y in m.polygon],
                "neighbors": sorted(m.neighbors),
                "intersection": m.intersection,
            }
            for m in scenario.map
        ],
    }


def serialize_scenario(scenario: Scenario) -> bytes:
    return json.dumps(scenario_to_dict(scenario), separators=(",", ":")).encode("utf-8")


def canonicalize(data: Union[bytes, str, dict]) -> bytes:
    """Canonical byte form of a scenario document (what serialize(parse(x)) yields)."""
    doc = json.loads(data) if isinstance(data, (bytes, bytearray, str)) else data
    return serialize_scenario(scenario_from_dict(doc))


def read_scenarios(path: Union[str, Path]) -> list[Scenario]:
    """Load a ``.jsonl`` file (one document per line), a single ``.json`` file, or a directory of ``.json`` files."""
    path = Path(path)
    if path.is_dir():
        return [parse_scenario(p.read_bytes()) for p in sorted(path.glob("*.json"))]
    if path.suffix == ".jsonl":
        out = []
        for lineno, line in enumerate(path.read_bytes().splitlines(), 1):
            if line.strip():
                try:
                    out.append(parse_scenario(line))
                except ValueError as exc:
                    exc.args = (f"{path}:{lineno}: {exc}",)
                    raise
        return out
    return [parse_scenario(path.read_bytes())]


def write_scenarios(scenarios: Iterable[Scenario], path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        for s in scenarios:
            fh.write(serialize_scenario(s))
            fh.write(b"\n")


# --- label mining ------------------------------------------------------------

@dataclass(frozen=True, order=True)
class LabelVector:
    in_left: bool = False
    in_right: bool = False
    in_straight: bool = False
    lane_change: bool = False
    straight: bool = False

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, f.name)) for f in fields(self))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "LabelVector":
        if len(bits) != 5:
            raise ValueError("label vector needs 5 bits")
        return cls(*(bool(b) for b in bits))


@dataclass(frozen=True)
class LabelMiningConfig:
    turn_threshold_deg: float = 25.0


def _ego_lane_hits(scenario: Scenario) -> np.ndarray:
    """Boolean (n_samples, n_elements) matrix of EGO sample containment."""
    pts = ego(scenario).trajectory.xy
    if not scenario.map:
        return np.zeros((len(pts), 0), dtype=bool)
    return np.stack([points_in_polygon(pts, m.polygon) for m in scenario.map], axis=1)


def net_heading_change(trajectory: Trajectory) -> float:
    hs = np.unwrap(headings(trajectory))
    return float(hs[-1] - hs[0])


def mine_labels(scenario: Scenario, config: Optional[LabelMiningConfig] = None) -> LabelVector:
    """Maneuver flags of the EGO over the whole scenario.

    Emits a ``LabelMiningWarning`` and returns all-false when the EGO never
    enters a lane polygon.
    """
    config = config or LabelMiningConfig()
    hits = _ego_lane_hits(scenario)
    if not hits.any():
        warnings.warn(f"scenario {scenario.id!r}: EGO never inside a lane polygon", LabelMiningWarning, stacklevel=2)
        return LabelVector()

    is_inter = np.array([m.intersection is not None for m in scenario.map], dtype=bool)
    involved = bool(hits[:, is_inter].any())
    in_left = in_right = in_straight = False
    if involved:
        dpsi = math.degrees(net_heading_change(ego(scenario).trajectory))
        if dpsi > config.turn_threshold_deg:
            in_left = True
        elif dpsi < -config.turn_threshold_deg:
            in_right = True
        else:
            in_straight = True

    ids = scenario.map_ids()
    by_id = {m.id: m for m in scenario.map}
    seq: list[str] = []
    current = None
    for row in hits:
        if (row & is_inter).any():
            continue
        cands = sorted(ids[j] for j in np.flatnonzero(row))
        if not cands:
            continue
        if current not in cands:
            current = cands[0]
        if not seq or seq[-1] != current:
            seq.append(current)
    lane_change = any(
        b in by_id[a].neighbors or a in by_id[b].neighbors for a, b in zip(seq, seq[1:])
    )
    straight = not (in_left or in_right or in_straight or lane_change)
    return LabelVector(in_left, in_right, in_straight, lane_change, straight)


@dataclass(frozen=True)
class LabeledDataset:
    entries: tuple[tuple[str, LabelVector], ...]
    class_table: tuple[tuple[int, ...], ...]

    @property
    def n_classes(self) -> int:
        return len(self.class_table)

    def class_id(self, label: LabelVector) -> int:
        return self.class_table.index(label.bits)

    @property
    def class_ids(self) -> np.ndarray:
        lookup = {p: i for i, p in enumerate(self.class_table)}
        return np.array([lookup[y.bits] for _, y in self.entries], dtype=int)

    def to_jsonl(self) -> bytes:
        ids = self.class_ids
        lines = [
            json.dumps({"scenario_id": sid, "y": list(y.bits), "class_id": int(c)}, separators=(",", ":"))
            for (sid, y), c in zip(self.entries, ids)
        ]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""

    @classmethod
    def from_jsonl(cls, data: Union[bytes, str]) -> "LabeledDataset":
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        entries = []
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                entries.append((str(rec["scenario_id"]), LabelVector.from_bits(rec["y"])))
        return cls._from_entries(entries)

    @classmethod
    def _from_entries(cls, entries) -> "LabeledDataset":
        table = tuple(sorted({y.bits for _, y in entries}))
        return cls(tuple(entries), table)


def build_labeled_dataset(scenarios: Sequence[Scenario], config: Optional[LabelMiningConfig] = None) -> LabeledDataset:
    return LabeledDataset._from_entries([(s.id, mine_labels(s, config)) for s in scenarios])
