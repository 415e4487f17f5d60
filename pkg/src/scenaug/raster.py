"""EGO-fixed occupancy-grid rendering and the grid file formats."""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from .geometry import points_in_polygon, rect_corners
from .scenario import Scenario, Trajectory, ego, heading_at

GRID_MAGIC = b"EXGT"
GRID_VERSION = 1


class GridConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    height: int = 120
    width: int = 120
    channels: int = 4
    meters_per_pixel: float = 1.0
    ego_pixel: tuple[int, int] = (40, 60)
    map_intensity: float = 0.5
    object_intensity: float = 1.0

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise GridConfigError("height, width and channels must be >= 1")
        if self.meters_per_pixel <= 0:
            raise GridConfigError("meters_per_pixel must be positive")
        r, c = self.ego_pixel
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise GridConfigError(f"ego_pixel {self.ego_pixel} outside the grid")
        for v in (self.map_intensity, self.object_intensity):
            if not 0.0 <= v <= 1.0:
                raise GridConfigError("intensities must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.channels, self.height, self.width


@dataclass(frozen=True, eq=False)
class GridSequence:
    data: np.ndarray
    config: GridConfig
    scenario_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != self.config.shape:
            raise GridConfigError(f"grid shape {data.shape} != {self.config.shape}")
        object.__setattr__(self, "data", data)

    def with_data(self, data: np.ndarray) -> "GridSequence":
        return GridSequence(data, self.config, self.scenario_id)


def sample_frames(time_span: tuple[float, float], c: int) -> list[float]:
    """``c`` timestamps evenly spaced over ``time_span``, both ends included."""
    if c < 2:
        raise GridConfigError("need at least 2 frames")
    t0, t1 = float(time_span[0]), float(time_span[1])
    if not t1 > t0:
        raise GridConfigError("time span must have t1 > t0")
    return [t0 + k * (t1 - t0) / (c - 1) for k in range(c)]


@dataclass(frozen=True)
class GridFrame:
    """World -> grid transform anchored at the EGO pose at the scenario start."""

    origin: tuple[float, float]
    heading: float
    config: GridConfig

    @classmethod
    def from_scenario(cls, scenario: Scenario, config: GridConfig) -> "GridFrame":
        tr = ego(scenario).trajectory
        t0 = scenario.time_span[0]
        x = float(np.interp(t0, tr.t, tr.xy[:, 0]))
        y = float(np.interp(t0, tr.t, tr.xy[:, 1]))
        return cls((x, y), heading_at(tr, min(max(t0, tr.t[0]), tr.t[-1])), config)

    def to_grid(self, xy: np.ndarray) -> np.ndarray:
        """Map-frame points to continuous (row, col); pixel (r, c) is centred on integers."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        d = xy - np.asarray(self.origin)
        c, s = math.cos(self.heading), math.sin(self.heading)
        fwd = d[:, 0] * c + d[:, 1] * s
        left = -d[:, 0] * s + d[:, 1] * c
        mpp = self.config.meters_per_pixel
        r0, c0 = self.config.ego_pixel
        return np.stack([r0 + fwd / mpp, c0 + left / mpp], axis=1)

    @property
    def key(self) -> tuple:
        return (self.origin, self.heading, self.config)


def fill_polygon(grid_poly: np.ndarray, height: int, width: int) -> np.ndarray:
    """Flat indices of pixels whose centre lies inside a polygon given in (row, col)."""
    lo = np.ceil(grid_poly.min(axis=0) - 1e-9).astype(int)
    hi = np.floor(grid_poly.max(axis=0) + 1e-9).astype(int)
    r0, c0 = max(lo[0], 0), max(lo[1], 0)
    r1, c1 = min(hi[0], height - 1), min(hi[1], width - 1)
    if r1 < r0 or c1 < c0:
        return np.empty(0, dtype=np.int64)
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    pts = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(float)
    inside = points_in_polygon(pts, grid_poly)
    return (rr.ravel()[inside] * width + cc.ravel()[inside]).astype(np.int64)


class RasterCache:
    """Memo of pixel sets keyed by exact geometry, safe to share across scenarios."""

    def __init__(self):
        self._store: dict = {}

    def get(self, key, make):
        hit = self._store.get(key)
        if hit is None:
            hit = make()
            self._store[key] = hit
        return hit

    def __len__(self) -> int:
        return len(self._store)


def _frame_sample(trajectory: Trajectory, t: float, half_window: float) -> Optional[int]:
    if len(trajectory) == 0:
        return None
    i = int(np.argmin(np.abs(trajectory.t - t)))
    return i if abs(trajectory.t[i] - t) <= half_window + 1e-9 else None


def _map_pixels(scenario: Scenario, frame: GridFrame, cache: Optional[RasterCache]) -> list[np.ndarray]:
    cfg = frame.config
    out = []
    for m in scenario.map:
        make = lambda m=m: fill_polygon(frame.to_grid(m.polygon), cfg.height, cfg.width)
        out.append(cache.get(("map", frame.key, m.polygon.tobytes()), make) if cache is not None else make())
    return out


def rasterize_map(scenario: Scenario, config: Optional[GridConfig] = None,
                  cache: Optional[RasterCache] = None) -> np.ndarray:
    """Single H x W map-only image in the EGO-fixed frame."""
    config = config or GridConfig()
    frame = GridFrame.from_scenario(scenario, config)
    img = np.zeros(config.height * config.width, dtype=np.float32)
    for idx in _map_pixels(scenario, frame, cache):
        img[idx] = config.map_intensity
    return img.reshape(config.height, config.width)


def rasterize(scenario: Scenario, config: Optional[GridConfig] = None,
              cache: Optional[RasterCache] = None) -> GridSequence:
    """Render ``scenario`` into a C x H x W grid sequence.

    The frame is fixed by the EGO pose at the first timestamp: the EGO
    starts on ``ego_pixel`` and its initial heading points along increasing
    row index. Lanes are filled at ``map_intensity``; each object present at
    a frame is drawn as its oriented footprint at ``object_intensity``.
    """
    config = config or GridConfig()
    frame = GridFrame.from_scenario(scenario, config)
    h, w = config.height, config.width
    base = np.zeros(h * w, dtype=np.float32)
    for idx in _map_pixels(scenario, frame, cache):
        base[idx] = config.map_intensity

    times = sample_frames(scenario.time_span, config.channels) if config.channels >= 2 else [scenario.time_span[0]]
    spacing = (times[1] - times[0]) if len(times) > 1 else (scenario.time_span[1] - scenario.time_span[0])
    data = np.empty((config.channels, h * w), dtype=np.float32)
    for k, t in enumerate(times):
        layer = base.copy()
        for o in scenario.objects:
            i = _frame_sample(o.trajectory, t, 0.5 * spacing)
            if i is None:
                continue
            tr = o.trajectory
            pos = (float(tr.xy[i, 0]), float(tr.xy[i, 1]))
            hd = float(tr.heading[i]) if not math.isnan(tr.heading[i]) else heading_at(tr, float(tr.t[i]))
            length, width = float(o.size[0]), float(o.size[1])

            def make(pos=pos, hd=hd, length=length, width=width):
                return fill_polygon(frame.to_grid(rect_corners(pos, hd, length, width)), h, w)

            key = ("obj", frame.key, pos, hd, length, width)
            idx = cache.get(key, make) if cache is not None else make()
            layer[idx] = config.object_intensity
        data[k] = layer
    return GridSequence(data.reshape(config.shape), config, scenario.id)


# --- binary grid files -------------------------------------------------------

def _header(grid: GridSequence) -> bytes:
    c, h, w = grid.data.shape
    return struct.pack("<III", c, h, w)


def write_grid(grid: GridSequence, fh: BinaryIO) -> None:
    """Single record: magic, u32 version, u32 C, H, W, float32 LE values."""
    fh.write(GRID_MAGIC + struct.pack("<I", GRID_VERSION) + _header(grid))
    fh.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise ValueError("truncated grid file")
    return b


def _read_magic(fh: BinaryIO) -> None:
    magic = _read_exact(fh, 4)
    if magic != GRID_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != GRID_VERSION:
        raise ValueError(f"unsupported grid version {version}")


def _read_body(fh: BinaryIO, config: Optional[GridConfig], scenario_id: str) -> GridSequence:
    c, h, w = struct.unpack("<III", _read_exact(fh, 12))
    data = np.frombuffer(_read_exact(fh, 4 * c * h * w), dtype="<f4").reshape(c, h, w)
    if config is None or config.shape != (c, h, w):
        base = config or GridConfig()
        ego_px = base.ego_pixel if base.ego_pixel[0] < h and base.ego_pixel[1] < w else (0, 0)
        config = GridConfig(h, w, c, base.meters_per_pixel, ego_px, base.map_intensity, base.object_intensity)
    return GridSequence(data.astype(np.float32), config, scenario_id)


def read_grid(fh: BinaryIO, config: Optional[GridConfig] = None) -> GridSequence:
    _read_magic(fh)
    return _read_body(fh, config, "")


def write_grid_sequence(grids: Sequence[GridSequence], path: Union[str, Path]) -> None:
    """Sequence file: magic, u32 version, u64 count, id table (u32 len + UTF-8), then records."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC + struct.pack("<IQ", GRID_VERSION, len(grids)))
        for g in grids:
            sid = g.scenario_id.encode("utf-8")
            fh.write(struct.pack("<I", len(sid)) + sid)
        for g in grids:
            fh.write(_header(g))
            fh.write(np.ascontiguousarray(g.data, dtype="<f4").tobytes())


def read_grid_sequence(path: Union[str, Path], config: Optional[GridConfig] = None) -> list[GridSequence]:
    with open(path, "rb") as fh:
        _read_magic(fh)
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        ids = []
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            ids.append(_read_exact(fh, n).decode("utf-8"))
        return [_read_body(fh, config, sid) for sid in ids]


# --- PNG ---------------------------------------------------------------------

_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


def render_png(grid: GridSequence, directory: Union[str, Path], stem: Optional[str] = None) -> list[Path]:
    """One 8-bit grayscale PNG per channel: ``<stem>_c<k>.png`` inside ``directory``."""
    from PIL import Image

    directory = Path(directory)
    stem = _SAFE.sub("_", stem or grid.scenario_id or "grid")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, frame in enumerate(grid.data):
            img = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
            p = directory / f"{stem}_c{k}.png"
            Image.fromarray(img, mode="L").save(p, format="PNG")
            paths.append(p)
    except OSError as exc:
        raise OSError(f"writing PNG under {directory}: {exc}") from exc
    return paths
