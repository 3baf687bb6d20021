"""Structural graph of a floor plan and distance-weighted message passing."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, leaky_relu
from .domain import FloorPlan, Opening, OpeningKind, Rect
from .errors import InvalidGeometryError, ShapeError

WALL_THICKNESS = 0.1
OPENING_DEPTH = 0.1


class NodeKind(enum.Enum):
    WALL = 0
    DOOR = 1
    WINDOW = 2


NUM_NODE_KINDS = len(NodeKind)
NODE_FEATURE_DIM = NUM_NODE_KINDS + 2


@dataclass(frozen=True)
class StructuralNode:
    kind: NodeKind
    center: tuple[float, float]
    box: Rect

    def __post_init__(self):
        if self.box.area <= 0 or not self.box.contains(*self.center):
            raise InvalidGeometryError(f"node box {self.box} must have area and contain {self.center}")


@dataclass(frozen=True, eq=False)
class StructuralGraph:
    nodes: tuple[StructuralNode, ...]
    adjacency: np.ndarray
    node_features: np.ndarray
    bounds: Rect

    def __len__(self):
        return len(self.nodes)

    @property
    def kinds(self) -> np.ndarray:
        return np.array([n.kind.value for n in self.nodes], dtype=np.int64)

    @property
    def tau(self) -> float:
        """Kernel length scale: half the room diagonal."""
        return math.hypot(self.bounds.width, self.bounds.height) / 2.0


def _opening_is_vertical(op: Opening, bounds: Rect) -> bool:
    x, y = op.position
    to_vertical = min(abs(x - bounds.x0), abs(bounds.x1 - x))
    to_horizontal = min(abs(y - bounds.y0), abs(bounds.y1 - y))
    return to_vertical < to_horizontal


def opening_box(op: Opening, bounds: Rect, depth: float = OPENING_DEPTH) -> Rect:
    """Opening footprint: ``width`` along its host wall, ``depth`` across it.

    The host wall is the nearest side of ``bounds``; ties go to the
    horizontal sides.
    """
    if _opening_is_vertical(op, bounds):
        return Rect.from_center(op.position, (depth, op.width))
    return Rect.from_center(op.position, (op.width, depth))


def encode_graph(plan: FloorPlan, wall_thickness: float = WALL_THICKNESS) -> StructuralGraph:
    if not plan.walls and not plan.openings:
        raise InvalidGeometryError("cannot encode an empty floor plan")
    nodes = [StructuralNode(NodeKind.WALL, w.center, w.inflated(wall_thickness)) for w in plan.walls]
    for kind, ops in ((NodeKind.DOOR, plan.doors), (NodeKind.WINDOW, plan.windows)):
        nodes.extend(StructuralNode(kind, op.position, opening_box(op, plan.bounds)) for op in ops)

    centers = np.array([n.center for n in nodes], dtype=np.float64)
    diff = centers[:, None, :] - centers[None, :, :]
    adjacency = np.sqrt((diff**2).sum(axis=-1))

    b = plan.bounds
    features = np.zeros((len(nodes), NODE_FEATURE_DIM))
    features[np.arange(len(nodes)), [n.kind.value for n in nodes]] = 1.0
    features[:, NUM_NODE_KINDS] = (centers[:, 0] - b.x0) / b.width
    features[:, NUM_NODE_KINDS + 1] = (centers[:, 1] - b.y0) / b.height
    return StructuralGraph(tuple(nodes), adjacency, features, b)


def normalize_box(box: Rect, bounds: Rect) -> np.ndarray:
    cx, cy = box.center
    return np.array(
        [
            (cx - bounds.x0) / bounds.width,
            (cy - bounds.y0) / bounds.height,
            box.width / bounds.width,
            box.height / bounds.height,
        ]
    )


def denormalize_box(row, bounds: Rect) -> Rect:
    cx, cy, ex, ey = (float(v) for v in row)
    return Rect.from_center(
        (bounds.x0 + cx * bounds.width, bounds.y0 + cy * bounds.height),
        (ex * bounds.width, ey * bounds.height),
    )


def structural_ground_truth(plan: FloorPlan | StructuralGraph) -> np.ndarray:
    """Per-node ``(center_x, center_y, extent_x, extent_y)`` scaled by the room bounds.

    Wall boxes are only grown perpendicular to the wall and openings sit
    on the room boundary, so every entry lies in [0, 1].
    """
    graph = plan if isinstance(plan, StructuralGraph) else encode_graph(plan)
    rows = np.stack([normalize_box(n.box, graph.bounds) for n in graph.nodes])
    return np.clip(rows, 0.0, 1.0)


def distance_kernel(adjacency, tau) -> Tensor:
    """``exp(-d**2 / tau**2)`` elementwise; ``tau`` may be a scalar or a per-pair array."""
    a = as_tensor(adjacency)
    tau2 = np.asarray(tau, dtype=np.float64) ** 2
    return (-(a.square() / tau2)).exp()


def message_passing_layer(
    node_states: Tensor,
    adjacency,
    w_self: Tensor,
    w_neigh: Tensor,
    tau,
    mask: np.ndarray | None = None,
    alpha: float = 0.2,
) -> Tensor:
    """One round of ``leaky_relu(h_i W_self + m_i W_neigh)``.

    ``m_i`` is the kernel-weighted mean of ``h_j`` over ``j != i``, using
    weights ``k(d_ij)``. Normalizing by the weight sum keeps activations
    bounded across rounds. ``mask`` (N x N, 0/1) further removes pairs,
    which is how a batch of graphs is packed block-diagonally.
    """
    node_states = as_tensor(node_states)
    adjacency = as_tensor(adjacency)
    n = node_states.shape[0]
    if adjacency.shape != (n, n):
        raise ShapeError(f"adjacency {adjacency.shape} does not match {n} node states")
    if w_self.shape[0] != node_states.shape[1] or w_neigh.shape[0] != node_states.shape[1]:
        raise ShapeError(f"weights {w_self.shape}/{w_neigh.shape} do not match node width {node_states.shape[1]}")
    keep = 1.0 - np.eye(n)
    if mask is not None:
        keep = keep * mask
    weights = distance_kernel(adjacency, tau) * keep
    totals = weights.sum(axis=1, keepdims=True)
    weights = weights / (totals + 1e-12)
    neighbours = weights @ node_states
    return leaky_relu(node_states @ w_self + neighbours @ w_neigh, alpha)
