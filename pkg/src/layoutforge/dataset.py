"""Procedural scene synthesis, JSON serialization and the train/test split.

The synthesizer is rule-based: each (room type, dimensional category)
has a fixed furniture program placed against the walls with small
random jitter. Rooms are rectangles ``[0, W] x [0, D]`` with ``W >= D``,
one door on the south wall and a window on the north wall (plus one on
the east wall for long rooms).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    BOUNDS_TOLERANCE,
    DEFAULT_SCHEME,
    FURNITURE_CATEGORIES,
    FloorPlan,
    FurnitureItem,
    LabelScheme,
    Opening,
    OpeningKind,
    Rect,
    RoomLabel,
    RoomType,
    Scene,
    WallSegment,
    furniture_footprint,
    label_from_dimensions,
    rectangular_plan,
)
from .errors import ConfigError, DatasetError, InvalidGeometryError
from .seeding import rng_for

SCHEMA_VERSION = 1
MAX_ROOM_SIDE = 6.0

# Shorter-side sampling ranges per (room type, dimensional category).
DEFAULT_SIDE_RANGES: dict[RoomType, tuple[tuple[float, float], ...]] = {
    RoomType.BEDROOM: ((2.2, 2.7), (2.7, 3.4), (3.4, 4.4)),
    RoomType.BATHROOM: ((1.5, 1.8), (1.8, 2.1), (2.1, 2.4), (2.4, 2.7), (2.7, 3.0), (3.0, 3.4)),
    RoomType.STUDY: ((2.0, 2.4), (2.4, 2.8), (2.8, 3.2), (3.2, 3.6), (3.6, 4.2)),
}

# Longer side = shorter side x ratio.
ASPECT_RANGES = {
    RoomType.BEDROOM: (1.2, 1.5),
    RoomType.BATHROOM: (1.2, 1.6),
    RoomType.STUDY: (1.2, 1.45),
}

HEIGHTS = {
    "bed": 0.5,
    "tatami_bed": 0.35,
    "nightstand": 0.55,
    "wardrobe": 2.1,
    "desk": 0.75,
    "chair": 0.9,
    "toilet": 0.75,
    "sink": 0.85,
    "shower": 2.0,
    "washer": 0.85,
    "bathtub": 0.55,
    "cabinet": 1.8,
    "bookshelf": 1.9,
    "sofa": 0.8,
    "side_table": 0.5,
}


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    count: int = 300
    categories: tuple[str, ...] = FURNITURE_CATEGORIES
    scheme: LabelScheme = DEFAULT_SCHEME
    side_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SIDE_RANGES))
    counts: dict | None = None  # optional explicit {RoomLabel: n}; overrides ``count``

    def __post_init__(self):
        if self.count < 0:
            raise ConfigError(f"scene count must be non-negative, got {self.count}")
        if self.counts is not None and any(n < 0 for n in self.counts.values()):
            raise ConfigError("per-subcategory counts must be non-negative")
        if self.scheme.governing_side != "shorter":
            raise ConfigError("the synthesizer samples the shorter room side; use a shorter-side label scheme")
        missing = [c for c in self.categories if c not in HEIGHTS]
        if missing:
            raise ConfigError(f"no synthesis rules for furniture categories {missing}")
        for label in self.scheme.subcategories():
            ranges = self.side_ranges.get(label.room_type, ())
            if label.dim_category >= len(ranges):
                raise ConfigError(f"no sampling range for {label}")
            lo, hi = ranges[label.dim_category]
            band_lo, band_hi = self.scheme.band(label)
            if not (band_lo <= lo < hi <= band_hi) or hi > MAX_ROOM_SIDE:
                raise ConfigError(f"sampling range {lo}-{hi} for {label} disagrees with band {band_lo}-{band_hi}")

    def labels(self) -> list[RoomLabel]:
        """The label of every scene in generation order."""
        if self.counts is not None:
            return [lab for lab in self.scheme.subcategories() for _ in range(self.counts.get(lab, 0))]
        types = self.scheme.room_types
        out = []
        for i in range(self.count):
            rt = types[i % len(types)]
            out.append(RoomLabel(rt, (i // len(types)) % self.scheme.num_categories(rt)))
        return out


@dataclass(frozen=True)
class SplitIndex:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]


@dataclass
class Dataset:
    scenes: list[Scene]
    categories: tuple[str, ...] = FURNITURE_CATEGORIES
    degenerate: dict[int, bool] = field(default_factory=dict)

    def __len__(self):
        return len(self.scenes)

    def by_id(self) -> dict[int, Scene]:
        return {s.scene_id: s for s in self.scenes}

    def subset(self, ids: Iterable[int]) -> Dataset:
        lookup = self.by_id()
        return Dataset([lookup[i] for i in ids], self.categories)


def _mm(x: float) -> float:
    return round(float(x), 3)


class _Placer:
    """Collects furniture for one room, rounding to millimetres."""

    def __init__(self, rng: np.random.Generator, categories: Sequence[str]):
        self.rng = rng
        self.index = {name: i for i, name in enumerate(categories)}
        self.items: list[FurnitureItem] = []

    def jitter(self, scale: float) -> float:
        return float(self.rng.uniform(-scale, scale))

    def add(self, name: str, x0: float, y0: float, length: float, width: float) -> Rect:
        length, width = _mm(length), _mm(width)
        height = _mm(HEIGHTS[name] + self.jitter(0.05))
        cx, cy = _mm(x0 + length / 2.0), _mm(y0 + width / 2.0)
        self.items.append(FurnitureItem(self.index[name], (cx, cy), (length, width, height)))
        return furniture_footprint(self.items[-1])


def _bedroom(p: _Placer, cat: int, W: float, D: float) -> None:
    if cat == 0:
        bed_len = p.rng.uniform(1.8, 2.0)
        p.add("tatami_bed", 0.0, 0.0, bed_len, D)
        ward = min(p.rng.uniform(1.0, 1.4), W - bed_len - 0.05)
        p.add("wardrobe", W - ward, D - 0.6, ward, 0.6)
        return
    bed_w, bed_l = p.rng.uniform(1.5, 1.8), p.rng.uniform(2.0, 2.1)
    cx = (W / 2.0 if cat == 1 else (W - 0.8) / 2.0) + p.jitter(0.1)
    bed = p.add("bed", cx - bed_w / 2.0, D - bed_l, bed_w, bed_l)
    p.add("nightstand", bed.x0 - 0.45, D - 0.4, 0.45, 0.4)
    p.add("nightstand", bed.x1, D - 0.4, 0.45, 0.4)
    ward = min(p.rng.uniform(1.2, 1.8), W - 1.3)
    p.add("wardrobe", 0.0, 0.0, ward, 0.6)
    if cat >= 2:
        desk_len = p.rng.uniform(1.1, 1.3)
        dy = D * 0.4 + p.jitter(0.1)
        p.add("desk", W - 0.6, dy - desk_len / 2.0, 0.6, desk_len)
        p.add("chair", W - 1.15, dy - 0.25, 0.5, 0.5)


def _bathroom(p: _Placer, cat: int, W: float, D: float) -> None:
    tub = cat >= 3
    if tub:
        p.add("bathtub", 0.0, D - 1.6, 0.75, 1.6)
    tx = (0.85 if tub else 0.15) + p.jitter(0.05) + 0.05
    p.add("toilet", tx, D - 0.7, 0.4, 0.7)
    p.add("sink", 0.05, 0.0, 0.6, 0.45)
    if cat >= 1:
        p.add("shower", W - 0.9, D - 0.9, 0.9, 0.9)
    if cat >= 2:
        p.add("washer", 0.75, 0.0, 0.6, 0.6)
    if cat >= 4:
        p.add("cabinet", W - 0.4, D / 2.0 - 0.7 + p.jitter(0.05), 0.4, 0.8)
    if cat >= 5:
        p.add("sink", 1.45, 0.0, 0.6, 0.45)


def _study(p: _Placer, cat: int, W: float, D: float) -> None:
    desk_len = p.rng.uniform(1.2, 1.4)
    cx = W / 2.0 + p.jitter(0.15)
    p.add("desk", cx - desk_len / 2.0, D - 0.6, desk_len, 0.6)
    p.add("chair", cx - 0.25, D - 1.15, 0.5, 0.5)
    if cat >= 1:
        p.add("bookshelf", 0.0, D / 2.0 - 0.7, 0.35, 1.0)
    if cat >= 2:
        sofa_len = p.rng.uniform(1.6, 1.8)
        p.add("sofa", 0.45, 0.0, sofa_len, 0.85)
    if cat >= 3:
        p.add("bookshelf", W - 0.35, D / 2.0 - 0.5, 0.35, 1.0)
    if cat >= 4:
        p.add("side_table", 2.35, 0.0, 0.5, 0.5)


_PROGRAMS = {RoomType.BEDROOM: _bedroom, RoomType.BATHROOM: _bathroom, RoomType.STUDY: _study}


def _sample_side(rng: np.random.Generator, lo: float, hi: float) -> float:
    side = round(float(rng.uniform(lo, hi)), 2)
    if side >= hi:
        side = round(hi - 0.01, 2)
    return max(side, lo)


def synthesize_scene(
    rng: np.random.Generator,
    room_type: RoomType,
    dim_category: int,
    config: DatasetConfig = DatasetConfig(),
) -> Scene:
    label = RoomLabel(room_type, dim_category)
    if not config.scheme.is_valid(label):
        raise InvalidGeometryError(f"{label} is not a configured subcategory")
    lo, hi = config.side_ranges[room_type][dim_category]
    depth = _sample_side(rng, lo, hi)
    a_lo, a_hi = ASPECT_RANGES[room_type]
    width = min(round(depth * float(rng.uniform(a_lo, a_hi)), 2), MAX_ROOM_SIDE)

    door_w = 0.7 if room_type is RoomType.BATHROOM else 0.8
    door_x = width - 0.15 - door_w / 2.0 - float(rng.uniform(0.0, 0.1))
    win_w = 0.6 if room_type is RoomType.BATHROOM else min(1.2, 0.4 * width)
    win_x = width / 2.0 + float(rng.uniform(-0.2, 0.2))
    openings = [
        Opening(OpeningKind.DOOR, (_mm(door_x), 0.0), door_w),
        Opening(OpeningKind.WINDOW, (_mm(win_x), depth), _mm(win_w)),
    ]
    if width > 4.5:
        openings.append(Opening(OpeningKind.WINDOW, (width, _mm(depth / 2.0)), 1.0))
    plan = rectangular_plan(width, depth, openings)

    placer = _Placer(rng, config.categories)
    _PROGRAMS[room_type](placer, dim_category, width, depth)
    scene_id = int(rng.integers(0, 2**63 - 1, dtype=np.int64)) * 2 + int(rng.integers(0, 2))
    return Scene(plan, tuple(placer.items), label, scene_id)


def synthesize_dataset(config: DatasetConfig) -> Dataset:
    scenes = []
    seen: set[int] = set()
    for i, label in enumerate(config.labels()):
        scene = synthesize_scene(rng_for(config.seed, "scene", i), label.room_type, label.dim_category, config)
        if scene.scene_id in seen:
            raise DatasetError(f"scene id collision at index {i}")
        seen.add(scene.scene_id)
        scenes.append(scene)
    return Dataset(scenes, config.categories)


def validate_scene(
    scene: Scene,
    scheme: LabelScheme = DEFAULT_SCHEME,
    categories: Sequence[str] = FURNITURE_CATEGORIES,
    max_items: int | None = None,
    check_label: bool = True,
) -> None:
    """Raise ``DatasetError`` unless ``scene`` meets every dataset invariant."""
    if not scheme.is_valid(scene.label):
        raise DatasetError(f"scene {scene.scene_id}: label {scene.label} is not configured")
    if check_label and label_from_dimensions(scene.floor_plan.bounds, scene.label.room_type, scheme) != scene.label:
        raise DatasetError(f"scene {scene.scene_id}: dimensional category disagrees with room bounds")
    room = scene.floor_plan.bounds.expanded(BOUNDS_TOLERANCE)
    for item in scene.layout:
        if item.category_id >= len(categories):
            raise DatasetError(f"scene {scene.scene_id}: unknown furniture category id {item.category_id}")
        fp = furniture_footprint(item)
        if not (room.contains(fp.x0, fp.y0) and room.contains(fp.x1, fp.y1)):
            raise DatasetError(f"scene {scene.scene_id}: {categories[item.category_id]} extends outside the room")
    if max_items is not None and len(scene.layout) > max_items:
        raise DatasetError(f"scene {scene.scene_id}: {len(scene.layout)} furniture items exceed {max_items} slots")


# serialization


def _num(x: float):
    return float(f"{float(x):.9g}")


def scene_to_dict(scene: Scene, degenerate: bool | None = None) -> dict:
    b = scene.floor_plan.bounds
    out = {
        "scene_id": scene.scene_id,
        "room_type": scene.label.room_type.value,
        "dim_category": scene.label.dim_category,
        "bounds": [_num(b.x0), _num(b.y0), _num(b.x1), _num(b.y1)],
        "walls": [[_num(w.start[0]), _num(w.start[1]), _num(w.end[0]), _num(w.end[1])] for w in scene.floor_plan.walls],
        "openings": [
            {"kind": o.kind.value, "x": _num(o.position[0]), "y": _num(o.position[1]), "width": _num(o.width)}
            for o in scene.floor_plan.openings
        ],
        "furniture": [
            {
                "category_id": int(f.category_id),
                "x": _num(f.position[0]),
                "y": _num(f.position[1]),
                "length": _num(f.size[0]),
                "width": _num(f.size[1]),
                "height": _num(f.size[2]),
            }
            for f in scene.layout
        ],
    }
    if degenerate is not None:
        out["degenerate"] = bool(degenerate)
    return out


def dataset_to_json(dataset: Dataset) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "category_table": list(dataset.categories),
        "scenes": [scene_to_dict(s, dataset.degenerate.get(s.scene_id)) for s in dataset.scenes],
    }
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def save_scenes(path: str | Path, dataset: Dataset) -> Path:
    path = Path(path)
    path.write_text(dataset_to_json(dataset), encoding="utf-8")
    return path


def _expect(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise DatasetError(f"{where}: {msg}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def scene_from_dict(d: dict, categories: Sequence[str], scheme: LabelScheme = DEFAULT_SCHEME, where: str = "scene") -> tuple[Scene, bool | None]:
    _expect(isinstance(d, dict), where, "scene must be an object")
    for key in ("scene_id", "room_type", "dim_category", "bounds", "walls", "openings", "furniture"):
        _expect(key in d, where, f"missing field {key!r}")
    try:
        room_type = RoomType(d["room_type"])
    except ValueError:
        raise DatasetError(f"{where}: unknown room_type {d['room_type']!r}") from None
    _expect(isinstance(d["scene_id"], int) and not isinstance(d["scene_id"], bool), where, "scene_id must be an integer")
    _expect(isinstance(d["dim_category"], int), where, "dim_category must be an integer")
    _expect(isinstance(d["bounds"], list) and len(d["bounds"]) == 4 and all(map(_is_num, d["bounds"])), where, "bounds must be 4 numbers")
    try:
        walls = []
        for w in d["walls"]:
            _expect(isinstance(w, list) and len(w) == 4 and all(map(_is_num, w)), where, f"bad wall {w!r}")
            walls.append(WallSegment((w[0], w[1]), (w[2], w[3])))
        openings = []
        for o in d["openings"]:
            _expect(isinstance(o, dict) and all(_is_num(o.get(k)) for k in ("x", "y", "width")), where, f"bad opening {o!r}")
            try:
                kind = OpeningKind(o.get("kind"))
            except ValueError:
                raise DatasetError(f"{where}: unknown opening kind {o.get('kind')!r}") from None
            openings.append(Opening(kind, (o["x"], o["y"]), o["width"]))
        items = []
        for f in d["furniture"]:
            _expect(isinstance(f, dict), where, "furniture entries must be objects")
            cid = f.get("category_id")
            _expect(isinstance(cid, int) and not isinstance(cid, bool), where, f"bad category_id {cid!r}")
            if not 0 <= cid < len(categories):
                raise DatasetError(f"{where}: unknown furniture category id {cid}")
            keys = ("x", "y", "length", "width", "height")
            _expect(all(_is_num(f.get(k)) for k in keys), where, f"bad furniture entry {f!r}")
            items.append(FurnitureItem(cid, (f["x"], f["y"]), (f["length"], f["width"], f["height"])))
        plan = FloorPlan(tuple(walls), tuple(openings), Rect(*d["bounds"]))
        label = RoomLabel(room_type, d["dim_category"])
        _expect(scheme.is_valid(label), where, f"label {room_type.value}/{d['dim_category']} is not configured")
        scene = Scene(plan, tuple(items), label, d["scene_id"])
    except InvalidGeometryError as exc:
        raise DatasetError(f"{where}: {exc}") from exc
    degenerate = d.get("degenerate")
    _expect(degenerate is None or isinstance(degenerate, bool), where, "degenerate must be a boolean")
    return scene, degenerate


def dataset_from_json(text: str, source: str = "<string>", scheme: LabelScheme = DEFAULT_SCHEME) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{source}: parse error at line {exc.lineno}, column {exc.colno} (offset {exc.pos}): {exc.msg}") from exc
    _expect(isinstance(doc, dict), source, "top level must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError(f"{source}: schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    table = doc.get("category_table")
    _expect(isinstance(table, list) and all(isinstance(c, str) for c in table), source, "category_table must be a list of names")
    scenes_raw = doc.get("scenes")
    _expect(isinstance(scenes_raw, list), source, "scenes must be a list")
    scenes, degenerate, seen = [], {}, set()
    for i, raw in enumerate(scenes_raw):
        scene, flag = scene_from_dict(raw, table, scheme, where=f"{source}: scenes[{i}]")
        _expect(scene.scene_id not in seen, source, f"duplicate scene_id {scene.scene_id}")
        seen.add(scene.scene_id)
        scenes.append(scene)
        if flag is not None:
            degenerate[scene.scene_id] = flag
    return Dataset(scenes, tuple(table), degenerate)


def load_scenes(path: str | Path, scheme: LabelScheme = DEFAULT_SCHEME) -> Dataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetError(f"{path}: not UTF-8 text at offset {exc.start}") from exc
    return dataset_from_json(text, str(path), scheme)


def split(scene_ids: Sequence[int] | Dataset, seed: int, train_fraction: float = 0.9) -> SplitIndex:
    """Seeded shuffle followed by a prefix split."""
    if isinstance(scene_ids, Dataset):
        scene_ids = [s.scene_id for s in scene_ids.scenes]
    ids = list(scene_ids)
    if len(ids) < 10:
        raise DatasetError(f"need at least 10 scenes for a train/test split, got {len(ids)}")
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = rng_for(seed, "split").permutation(len(ids))
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    shuffled = [ids[i] for i in order]
    return SplitIndex(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]))
