"""Scene data model: rooms, openings, furniture and dimensional labels.

All types are frozen dataclasses; coordinates are meters in the room frame
with the origin at the lower-left corner of the room bounds.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidGeometryError

Point = tuple[float, float]

# 1 cm slack for openings that sit exactly on a wall line.
BOUNDS_TOLERANCE = 0.01

FURNITURE_CATEGORIES: tuple[str, ...] = (
    "bed",
    "tatami_bed",
    "nightstand",
    "wardrobe",
    "desk",
    "chair",
    "toilet",
    "sink",
    "shower",
    "washer",
    "bathtub",
    "cabinet",
    "bookshelf",
    "sofa",
    "side_table",
)


class RoomType(enum.Enum):
    BEDROOM = "bedroom"
    BATHROOM = "bathroom"
    STUDY = "study"


class OpeningKind(enum.Enum):
    DOOR = "door"
    WINDOW = "window"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]``."""

    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def from_center(cls, center: Point, extent: Point) -> Rect:
        cx, cy = center
        hx, hy = extent[0] / 2.0, extent[1] / 2.0
        return cls(cx - hx, cy - hy, cx + hx, cy + hy)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def shorter_side(self) -> float:
        return min(self.width, self.height)

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return (self.x0 - tol <= x <= self.x1 + tol) and (self.y0 - tol <= y <= self.y1 + tol)

    def expanded(self, margin: float) -> Rect:
        return Rect(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)

    def intersection_area(self, other: Rect) -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        if w <= 0.0 or h <= 0.0:
            return 0.0
        return w * h

    def intersects(self, other: Rect) -> bool:
        return self.intersection_area(other) > 0.0


@dataclass(frozen=True)
class FurnitureItem:
    category_id: int
    position: Point
    size: tuple[float, float, float]  # length (x), width (y), height

    def __post_init__(self):
        if not isinstance(self.category_id, (int, np.integer)) or self.category_id < 0:
            raise InvalidGeometryError(f"invalid furniture category id {self.category_id!r}")
        if len(self.size) != 3 or not all(s > 0 and math.isfinite(s) for s in self.size):
            raise InvalidGeometryError(f"furniture size must be strictly positive, got {self.size}")
        if not all(math.isfinite(p) for p in self.position):
            raise InvalidGeometryError(f"non-finite furniture position {self.position}")


@dataclass(frozen=True)
class WallSegment:
    start: Point
    end: Point

    def __post_init__(self):
        if tuple(self.start) == tuple(self.end):
            raise InvalidGeometryError(f"degenerate wall segment at {self.start}")

    @property
    def center(self) -> Point:
        return ((self.start[0] + self.end[0]) / 2.0, (self.start[1] + self.end[1]) / 2.0)

    @property
    def length(self) -> float:
        return math.dist(self.start, self.end)

    def inflated(self, thickness: float) -> Rect:
        """Bounding box of the segment grown perpendicular to itself.

        Only axis-aligned walls are produced anywhere in the package; for
        a slanted segment this is the bounding box of the inflated band.
        """
        (xa, ya), (xb, yb) = self.start, self.end
        half = thickness / 2.0
        if ya == yb:
            return Rect(min(xa, xb), ya - half, max(xa, xb), ya + half)
        if xa == xb:
            return Rect(xa - half, min(ya, yb), xa + half, max(ya, yb))
        return Rect(min(xa, xb) - half, min(ya, yb) - half, max(xa, xb) + half, max(ya, yb) + half)


@dataclass(frozen=True)
class Opening:
    kind: OpeningKind
    position: Point
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidGeometryError(f"opening width must be positive, got {self.width}")


@dataclass(frozen=True)
class FloorPlan:
    walls: tuple[WallSegment, ...]
    openings: tuple[Opening, ...]
    bounds: Rect

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        object.__setattr__(self, "openings", tuple(self.openings))
        if self.bounds.width <= 0 or self.bounds.height <= 0:
            raise InvalidGeometryError(f"room bounds must have positive extent, got {self.bounds}")
        if len(self.walls) < 3:
            raise InvalidGeometryError(f"a room needs at least 3 walls, got {len(self.walls)}")
        for op in self.openings:
            if not self.bounds.contains(*op.position, tol=BOUNDS_TOLERANCE):
                raise InvalidGeometryError(f"{op.kind.value} at {op.position} lies outside {self.bounds}")

    @property
    def doors(self) -> list[Opening]:
        return [o for o in self.openings if o.kind is OpeningKind.DOOR]

    @property
    def windows(self) -> list[Opening]:
        return [o for o in self.openings if o.kind is OpeningKind.WINDOW]


def rectangular_plan(width: float, depth: float, openings: Sequence[Opening] = ()) -> FloorPlan:
    """Closed four-wall room spanning ``[0, width] x [0, depth]``.

    Walls run counter-clockwise starting with the bottom wall.
    """
    if width <= 0 or depth <= 0:
        raise InvalidGeometryError(f"non-positive room dimensions {width} x {depth}")
    corners = [(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)]
    walls = tuple(WallSegment(corners[i], corners[(i + 1) % 4]) for i in range(4))
    return FloorPlan(walls, tuple(openings), Rect(0.0, 0.0, width, depth))


@dataclass(frozen=True)
class RoomLabel:
    room_type: RoomType
    dim_category: int


@dataclass(frozen=True)
class LabelScheme:
    """Threshold tables mapping a governing room length to a dimensional category.

    ``thresholds[room_type]`` is an increasing tuple of cut points; a room
    whose governing length ``L`` satisfies ``t[k-1] <= L < t[k]`` gets
    category ``k``. ``governing_side`` picks the shorter or longer side of
    the room bounds.
    """

    thresholds: dict[RoomType, tuple[float, ...]] = field(
        default_factory=lambda: {
            RoomType.BEDROOM: (2.7, 3.4),
            RoomType.BATHROOM: (1.8, 2.1, 2.4, 2.7, 3.0),
            RoomType.STUDY: (2.4, 2.8, 3.2, 3.6),
        }
    )
    governing_side: str = "shorter"

    def __post_init__(self):
        if self.governing_side not in ("shorter", "longer"):
            raise ValueError(f"governing_side must be 'shorter' or 'longer', got {self.governing_side!r}")
        for rt, cuts in self.thresholds.items():
            if any(b <= a for a, b in zip(cuts, cuts[1:])) or any(c <= 0 for c in cuts):
                raise ValueError(f"thresholds for {rt.value} must be positive and increasing: {cuts}")

    @property
    def room_types(self) -> tuple[RoomType, ...]:
        return tuple(rt for rt in RoomType if rt in self.thresholds)

    def num_categories(self, room_type: RoomType) -> int:
        return len(self.thresholds[room_type]) + 1

    @property
    def total(self) -> int:
        return sum(self.num_categories(rt) for rt in self.room_types)

    def subcategories(self) -> list[RoomLabel]:
        return [RoomLabel(rt, k) for rt in self.room_types for k in range(self.num_categories(rt))]

    def is_valid(self, label: RoomLabel) -> bool:
        return label.room_type in self.thresholds and 0 <= label.dim_category < self.num_categories(label.room_type)

    def global_index(self, label: RoomLabel) -> int:
        if not self.is_valid(label):
            raise InvalidGeometryError(f"label {label} is not a configured subcategory")
        offset = 0
        for rt in self.room_types:
            if rt is label.room_type:
                return offset + label.dim_category
            offset += self.num_categories(rt)
        raise AssertionError("unreachable")

    def label_at(self, index: int) -> RoomLabel:
        return self.subcategories()[index]

    def band(self, label: RoomLabel) -> tuple[float, float]:
        """Half-open interval of governing lengths for ``label`` (may be infinite)."""
        cuts = self.thresholds[label.room_type]
        lo = cuts[label.dim_category - 1] if label.dim_category > 0 else 0.0
        hi = cuts[label.dim_category] if label.dim_category < len(cuts) else math.inf
        return lo, hi

    def governing_length(self, bounds: Rect) -> float:
        if self.governing_side == "shorter":
            return min(bounds.width, bounds.height)
        return max(bounds.width, bounds.height)


DEFAULT_SCHEME = LabelScheme()


def label_from_dimensions(bounds: Rect, room_type: RoomType, scheme: LabelScheme = DEFAULT_SCHEME) -> RoomLabel:
    if not (bounds.width > 0 and bounds.height > 0):
        raise InvalidGeometryError(f"room bounds must have positive width and height, got {bounds}")
    length = scheme.governing_length(bounds)
    # bisect_right makes each threshold belong to the band above it.
    return RoomLabel(room_type, bisect.bisect_right(scheme.thresholds[room_type], length))


def one_hot_label(label: RoomLabel, scheme: LabelScheme = DEFAULT_SCHEME) -> np.ndarray:
    vec = np.zeros(scheme.total, dtype=np.float64)
    vec[scheme.global_index(label)] = 1.0
    return vec


def furniture_footprint(item: FurnitureItem) -> Rect:
    return Rect.from_center(item.position, (item.size[0], item.size[1]))


@dataclass(frozen=True)
class Scene:
    floor_plan: FloorPlan
    layout: tuple[FurnitureItem, ...]
    label: RoomLabel
    scene_id: int

    def __post_init__(self):
        object.__setattr__(self, "layout", tuple(self.layout))
        if not 0 <= self.scene_id < 2**64:
            raise InvalidGeometryError(f"scene_id must fit in 64 bits, got {self.scene_id}")
        bounds = self.floor_plan.bounds
        for item in self.layout:
            if not furniture_footprint(item).intersects(bounds):
                raise InvalidGeometryError(f"furniture {item} lies entirely outside room bounds {bounds}")

    def is_label_consistent(self, scheme: LabelScheme = DEFAULT_SCHEME) -> bool:
        return label_from_dimensions(self.floor_plan.bounds, self.label.room_type, scheme) == self.label
