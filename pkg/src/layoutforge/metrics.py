"""Layout evaluation: mode accuracy, box IoU, and per-room-type aggregation."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .domain import FurnitureItem, Rect, furniture_footprint
from .errors import InvalidGeometryError, UndefinedMetricError

logger = logging.getLogger(__name__)


def mode_accuracy(generated: Sequence[Sequence[FurnitureItem]], ground_truth: Sequence[Sequence[FurnitureItem]], num_categories: int | None = None) -> float:
    """Fraction of ground-truth furniture, counted per category, that the generated layouts reproduce.

    For each scene and category the matched count is
    ``min(#generated, #ground truth)``; totals are summed over scenes and
    categories before dividing.
    """
    if len(generated) != len(ground_truth):
        raise ValueError(f"{len(generated)} generated layouts vs {len(ground_truth)} ground-truth layouts")
    matched = total = 0
    for gen, gt in zip(generated, ground_truth):
        gt_counts = Counter(f.category_id for f in gt)
        gen_counts = Counter(f.category_id for f in gen)
        for cat, n in gt_counts.items():
            if num_categories is not None and cat >= num_categories:
                raise ValueError(f"category id {cat} outside {num_categories} categories")
            total += n
            matched += min(n, gen_counts.get(cat, 0))
    if total == 0:
        raise UndefinedMetricError("mode accuracy is undefined for empty ground truth")
    return matched / total


def box_iou(a: Rect, b: Rect) -> float:
    if a.area <= 0 or b.area <= 0:
        raise InvalidGeometryError(f"IoU needs positive-area boxes, got {a} and {b}")
    inter = a.intersection_area(b)
    return inter / (a.area + b.area - inter)


def layout_iou(generated: Sequence[FurnitureItem], ground_truth: Sequence[FurnitureItem]) -> float:
    """Mean IoU over ground-truth items under best same-category one-to-one matching.

    Within each category the pairing maximizing total IoU is used, so the
    result does not depend on item order. Each generated item is used at
    most once; unmatched ground-truth items score 0.
    """
    if not ground_truth:
        raise UndefinedMetricError("layout IoU is undefined for an empty ground-truth layout")
    total = 0.0
    for cat in sorted({f.category_id for f in ground_truth}):
        gt_boxes = [furniture_footprint(f) for f in ground_truth if f.category_id == cat]
        gen_boxes = [furniture_footprint(f) for f in generated if f.category_id == cat]
        if not gen_boxes:
            continue
        iou = np.array([[box_iou(a, b) for b in gen_boxes] for a in gt_boxes])
        rows, cols = linear_sum_assignment(iou, maximize=True)
        total += float(iou[rows, cols].sum())
    return total / len(ground_truth)


@dataclass(frozen=True)
class GroupStats:
    mode_mean: float
    mode_std: float
    iou_mean: float
    iou_std: float
    count: int


@dataclass
class EvaluationReport:
    groups: dict[str, GroupStats]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "groups": {
                name: {
                    "mode_mean": round(s.mode_mean, 3),
                    "mode_std": round(s.mode_std, 3),
                    "iou_mean": round(s.iou_mean, 3),
                    "iou_std": round(s.iou_std, 3),
                    "count": s.count,
                }
                for name, s in self.groups.items()
            },
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        header = f"{'Room':<10} | {'Mode':^13} | {'IoU':^13} | {'n':>4}"
        lines = [header, "-" * len(header)]
        for name, s in self.groups.items():
            lines.append(
                f"{name.capitalize():<10} | {s.mode_mean:.3f}±{s.mode_std:.3f}   | {s.iou_mean:.3f}±{s.iou_std:.3f}   | {s.count:>4}"
            )
        return "\n".join(lines) + "\n"


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["groups", "warnings"],
    "additionalProperties": False,
    "properties": {
        "groups": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mode_mean", "mode_std", "iou_mean", "iou_std", "count"],
                "additionalProperties": False,
                "properties": {
                    "mode_mean": {"type": "number", "minimum": 0, "maximum": 1},
                    "mode_std": {"type": "number", "minimum": 0},
                    "iou_mean": {"type": "number", "minimum": 0, "maximum": 1},
                    "iou_std": {"type": "number", "minimum": 0},
                    "count": {"type": "integer", "minimum": 1},
                },
            },
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


def aggregate(mode_values: Mapping[str, Sequence[float]], iou_values: Mapping[str, Sequence[float]]) -> EvaluationReport:
    """Population mean and standard deviation per group; empty groups are dropped with a warning."""
    groups, warnings = {}, []
    for name in dict.fromkeys([*mode_values, *iou_values]):
        modes, ious = list(mode_values.get(name, [])), list(iou_values.get(name, []))
        if not modes or not ious:
            msg = f"group {name!r} has no values and is omitted"
            logger.warning(msg)
            warnings.append(msg)
            continue
        mm, ms = _mean_std(modes)
        im, is_ = _mean_std(ious)
        groups[name] = GroupStats(mm, ms, im, is_, max(len(modes), len(ious)))
    return EvaluationReport(groups, warnings)


def format_pm(mean: float, std: float) -> str:
    if not (math.isfinite(mean) and math.isfinite(std)):
        return "nan"
    return f"{mean:.3f} ± {std:.3f}"
