"""Top-down rasters of plans and layouts, and PPM/PNG image output.

Rasters live in a fixed world frame (default: 6.4 m square starting at
(-0.2, -0.2)), so room size is visible to the networks. Row 0 is the
southernmost row; images are flipped so north is up.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import FURNITURE_CATEGORIES, FloorPlan, FurnitureItem, Rect, furniture_footprint
from .errors import InvalidGeometryError, ShapeError
from .graph import WALL_THICKNESS, opening_box

PLAN_CHANNELS = ("interior", "wall", "door", "window")
MIN_RESOLUTION = 4


@dataclass(frozen=True)
class RasterFrame:
    origin: tuple[float, float] = (-0.2, -0.2)
    extent: float = 6.4
    resolution: int = 32

    def __post_init__(self):
        if self.resolution < MIN_RESOLUTION:
            raise ValueError(f"raster resolution must be at least {MIN_RESOLUTION}, got {self.resolution}")
        if not self.extent > 0:
            raise ValueError(f"raster extent must be positive, got {self.extent}")

    @property
    def cell(self) -> float:
        return self.extent / self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(xs, ys)`` coordinates of column and row centers."""
        idx = np.arange(self.resolution) + 0.5
        return self.origin[0] + idx * self.cell, self.origin[1] + idx * self.cell

    def with_resolution(self, resolution: int) -> RasterFrame:
        return RasterFrame(self.origin, self.extent, resolution)

    def cell_rect(self, row: int, col: int) -> Rect:
        x0 = self.origin[0] + col * self.cell
        y0 = self.origin[1] + row * self.cell
        return Rect(x0, y0, x0 + self.cell, y0 + self.cell)


DEFAULT_FRAME = RasterFrame()


@dataclass
class Raster:
    values: np.ndarray  # (channels, rows, cols)
    channels: tuple[str, ...]
    frame: RasterFrame = DEFAULT_FRAME

    def __post_init__(self):
        if self.values.shape[0] != len(self.channels):
            raise ShapeError(f"{self.values.shape[0]} raster planes for {len(self.channels)} channels")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("raster values must lie in [0, 1]")

    @property
    def resolution(self) -> int:
        return self.values.shape[-1]

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.channels.index(name)]


def _box_mask(box: Rect, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    inside_x = (xs >= box.x0) & (xs <= box.x1)
    inside_y = (ys >= box.y0) & (ys <= box.y1)
    return inside_y[:, None] & inside_x[None, :]


def raster_wall_box(start, end, half_width: float) -> Rect:
    """Wall band used for rasterization: grown on all sides so corners close."""
    return Rect(
        min(start[0], end[0]) - half_width,
        min(start[1], end[1]) - half_width,
        max(start[0], end[0]) + half_width,
        max(start[1], end[1]) + half_width,
    )


def wall_half_width(frame: RasterFrame, thickness: float = WALL_THICKNESS) -> float:
    # At least 1.5 cells wide so a wall always covers one row of cell centers.
    return max(thickness / 2.0, 0.75 * frame.cell)


def plan_element_boxes(plan: FloorPlan, frame: RasterFrame) -> dict[str, list[Rect]]:
    half = wall_half_width(frame)
    depth = 2.0 * half
    walls = [raster_wall_box(w.start, w.end, half) for w in plan.walls]
    doors = [opening_box(o, plan.bounds, depth) for o in plan.doors]
    windows = [opening_box(o, plan.bounds, depth) for o in plan.windows]
    return {"wall": walls, "door": doors, "window": windows}


def rasterize_floorplan(plan: FloorPlan, resolution: int = 32, frame: RasterFrame | None = None) -> Raster:
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(f"raster resolution must be at least {MIN_RESOLUTION}, got {resolution}")
    frame = (frame or DEFAULT_FRAME).with_resolution(resolution)
    xs, ys = frame.cell_centers()
    boxes = plan_element_boxes(plan, frame)
    planes = {}
    for name in ("wall", "door", "window"):
        mask = np.zeros((resolution, resolution), dtype=bool)
        for box in boxes[name]:
            mask |= _box_mask(box, xs, ys)
        planes[name] = mask
    planes["interior"] = _box_mask(plan.bounds, xs, ys) & ~planes["wall"]
    values = np.stack([planes[c] for c in PLAN_CHANNELS]).astype(np.float64)
    return Raster(values, PLAN_CHANNELS, frame)


def rasterize_layout(
    layout: Sequence[FurnitureItem],
    bounds: Rect,
    resolution: int = 32,
    frame: RasterFrame | None = None,
    categories: Sequence[str] = FURNITURE_CATEGORIES,
) -> Raster:
    """One channel per furniture category, restricted to cells inside ``bounds``."""
    if resolution < MIN_RESOLUTION:
        raise InvalidGeometryError(f"raster resolution must be at least {MIN_RESOLUTION}, got {resolution}")
    frame = (frame or DEFAULT_FRAME).with_resolution(resolution)
    xs, ys = frame.cell_centers()
    room = _box_mask(bounds, xs, ys)
    values = np.zeros((len(categories), resolution, resolution))
    for item in layout:
        if item.category_id >= len(categories):
            raise InvalidGeometryError(f"furniture category id {item.category_id} outside table of {len(categories)}")
        values[item.category_id][_box_mask(furniture_footprint(item), xs, ys) & room] = 1.0
    return Raster(values, tuple(categories), frame)


# rendering

WALL_COLOR = (0, 0, 0)
DOOR_COLOR = (139, 69, 19)
WINDOW_COLOR = (0, 200, 220)
INTERIOR_COLOR = (236, 236, 236)
BACKGROUND_COLOR = (255, 255, 255)

CATEGORY_COLORS: tuple[tuple[int, int, int], ...] = (
    (31, 119, 180),
    (174, 199, 232),
    (255, 127, 14),
    (148, 103, 189),
    (44, 160, 44),
    (152, 223, 138),
    (214, 39, 40),
    (255, 152, 150),
    (23, 190, 207),
    (127, 127, 127),
    (188, 189, 34),
    (197, 176, 213),
    (140, 86, 75),
    (227, 119, 194),
    (219, 219, 141),
)


@dataclass(frozen=True)
class Palette:
    categories: tuple[str, ...] = FURNITURE_CATEGORIES
    colors: tuple[tuple[int, int, int], ...] = CATEGORY_COLORS

    def color(self, category_id: int) -> tuple[int, int, int]:
        return self.colors[category_id % len(self.colors)]


@dataclass
class Image:
    pixels: np.ndarray  # (height, width, 3) uint8, north up
    legend: list[tuple[int, str, tuple[int, int, int]]] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def render_image(
    plan: Raster,
    layout: Raster | Sequence[tuple[int, Rect]] | None = None,
    palette: Palette = Palette(),
    scale: int = 8,
    threshold: float = 0.5,
) -> Image:
    """Composite a plan raster and furniture into an RGB image.

    ``layout`` is either a per-category raster at the plan's resolution or
    a list of ``(category_id, rect)`` boxes painted at pixel resolution.
    """
    res = plan.resolution
    if isinstance(layout, Raster) and layout.resolution != res:
        raise ShapeError(f"layout raster {layout.resolution} vs plan raster {res}")
    size = res * scale

    def up(mask):
        return np.repeat(np.repeat(mask, scale, axis=0), scale, axis=1)

    rgb = np.empty((size, size, 3), dtype=np.uint8)
    rgb[...] = BACKGROUND_COLOR
    rgb[up(plan.channel("interior") >= threshold)] = INTERIOR_COLOR

    present: list[int] = []
    if isinstance(layout, Raster):
        for cid in range(layout.values.shape[0]):
            mask = layout.values[cid] >= threshold
            if mask.any():
                rgb[up(mask)] = palette.color(cid)
                present.append(cid)
    elif layout:
        pixel_frame = plan.frame.with_resolution(size)
        xs, ys = pixel_frame.cell_centers()
        for cid, rect in layout:
            rgb[_box_mask(rect, xs, ys)] = palette.color(cid)
            present.append(cid)

    rgb[up(plan.channel("wall") >= threshold)] = WALL_COLOR
    rgb[up(plan.channel("door") >= threshold)] = DOOR_COLOR
    rgb[up(plan.channel("window") >= threshold)] = WINDOW_COLOR
    legend = [(cid, palette.categories[cid], palette.color(cid)) for cid in sorted(set(present))]
    return Image(rgb[::-1].copy(), legend)


def encode_ppm(image: Image) -> bytes:
    header = [b"P6"]
    for cid, name, (r, g, b) in image.legend:
        header.append(f"# legend {cid} {name} #{r:02x}{g:02x}{b:02x}".encode("ascii"))
    header.append(f"{image.width} {image.height}".encode("ascii"))
    header.append(b"255")
    return b"\n".join(header) + b"\n" + image.pixels.tobytes()


def encode_png(image: Image) -> bytes:
    def chunk(tag: bytes, payload: bytes) -> bytes:
        return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)

    rows = b"".join(b"\x00" + image.pixels[r].tobytes() for r in range(image.height))
    ihdr = struct.pack(">IIBBBBB", image.width, image.height, 8, 2, 0, 0, 0)
    text = b"".join(
        chunk(b"tEXt", b"legend\x00" + f"{cid} {name} #{r:02x}{g:02x}{b:02x}".encode("ascii"))
        for cid, name, (r, g, b) in image.legend
    )
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + text + chunk(b"IDAT", zlib.compress(rows, 9)) + chunk(b"IEND", b"")


def save_image(image: Image, path: str | Path) -> Path:
    """Write ``image`` as binary PPM, or PNG when the suffix is ``.png``."""
    path = Path(path)
    data = encode_png(image) if path.suffix.lower() == ".png" else encode_ppm(image)
    path.write_bytes(data)
    return path


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if not line.startswith(b"#"):
            tokens.extend(line.split())
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3)
