"""Three conditional generator/discriminator pairs and their joint training.

* g1: (z, label) -> plan raster; d1 scores plan rasters.
* g2: (z, structural graph, label) -> per-node boxes; d2 scores box sets.
* g3: (plan raster, pooled boxes, label) -> K furniture slots; d3 scores slots.

Each slot row is ``[presence, category probabilities (C), cx, cy, length, width]``
with geometry normalized by the room bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Adam, Parameter, Tensor, concat, leaky_relu, linear, no_grad, sigmoid, softmax
from .config import RunConfig
from .dataset import HEIGHTS, Dataset
from .domain import (
    FURNITURE_CATEGORIES,
    FloorPlan,
    FurnitureItem,
    Opening,
    OpeningKind,
    Rect,
    RoomLabel,
    Scene,
    furniture_footprint,
    one_hot_label,
    rectangular_plan,
)
from .errors import DatasetError, DivergenceError, DomainError, ShapeError
from .graph import NODE_FEATURE_DIM, NUM_NODE_KINDS, StructuralGraph, encode_graph, message_passing_layer, structural_ground_truth
from .raster import PLAN_CHANNELS, Raster, RasterFrame, rasterize_floorplan, wall_half_width
from .seeding import derive_seed, rng_for, scene_latent

LOSS_COLUMNS = ("loss_g1", "loss_d1", "loss_g2", "loss_d2", "loss_g3", "loss_d3")
MIN_INTERIOR_CELLS = 4
MIN_SIZE = 0.01


# networks


class Module:
    def __init__(self, name: str):
        self.name = name
        self._params: list[Parameter] = []

    def param(self, local: str, value: np.ndarray) -> Parameter:
        p = Parameter(value, f"{self.name}.{local}")
        self._params.append(p)
        return p

    def parameters(self) -> list[Parameter]:
        return list(self._params)

    def constrain_spectral_norm(self, bound: float) -> None:
        """Scale every weight matrix down so its largest singular value is at most ``bound``."""
        for p in self._params:
            if p.data.ndim == 2:
                sigma = float(np.linalg.norm(p.data, 2))
                if sigma > bound:
                    p.data *= bound / sigma

    def dense(self, local: str, n_in: int, n_out: int, rng: np.random.Generator) -> tuple[Parameter, Parameter]:
        w = self.param(f"{local}.weight", rng.standard_normal((n_in, n_out)) * math.sqrt(2.0 / n_in))
        b = self.param(f"{local}.bias", np.zeros(n_out))
        return w, b


class MLP(Module):
    """Linear layers with leaky-relu between them; no activation on the output."""

    def __init__(self, name: str, sizes: Sequence[int], rng: np.random.Generator):
        super().__init__(name)
        self.layers = [self.dense(f"layer{i}", a, b, rng) for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]

    def __call__(self, x: Tensor) -> Tensor:
        for i, (w, b) in enumerate(self.layers):
            x = linear(x, w, b)
            if i < len(self.layers) - 1:
                x = leaky_relu(x)
        return x


@dataclass
class GraphBatch:
    """Disjoint union of structural graphs; cross-graph kernel weights are masked out."""

    features: np.ndarray  # (N, NODE_FEATURE_DIM)
    adjacency: np.ndarray  # (N, N)
    tau: np.ndarray  # (N, N) per-pair kernel scale
    mask: np.ndarray  # (N, N) 1 within a graph
    scene_index: np.ndarray  # (N,) graph id of each node
    kind_pool: np.ndarray  # (B * 3, N) per-kind mean pooling
    mean_pool: np.ndarray  # (B, N)
    sizes: tuple[int, ...]
    extents: np.ndarray  # (B, 2) room width and depth in meters

    @classmethod
    def from_graphs(cls, graphs: Sequence[StructuralGraph]) -> GraphBatch:
        if not graphs or any(len(g) == 0 for g in graphs):
            raise ShapeError("graph batch needs at least one nonempty graph")
        sizes = tuple(len(g) for g in graphs)
        n, b = sum(sizes), len(graphs)
        adjacency = np.zeros((n, n))
        tau = np.ones((n, n))
        mask = np.zeros((n, n))
        scene_index = np.repeat(np.arange(b), sizes)
        kind_pool = np.zeros((b * NUM_NODE_KINDS, n))
        mean_pool = np.zeros((b, n))
        start = 0
        for i, g in enumerate(graphs):
            sl = slice(start, start + len(g))
            adjacency[sl, sl] = g.adjacency
            tau[sl, sl] = g.tau
            mask[sl, sl] = 1.0
            mean_pool[i, sl] = 1.0 / len(g)
            kinds = g.kinds
            for k in range(NUM_NODE_KINDS):
                hits = np.flatnonzero(kinds == k)
                if hits.size:
                    kind_pool[i * NUM_NODE_KINDS + k, start + hits] = 1.0 / hits.size
            start += len(g)
        features = np.concatenate([g.node_features for g in graphs])
        extents = np.array([[g.bounds.width, g.bounds.height] for g in graphs])
        return cls(features, adjacency, tau, mask, scene_index, kind_pool, mean_pool, sizes, extents)

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)


ANCHOR_CLIP = 1e-3


def anchor_logits(features: np.ndarray) -> np.ndarray:
    """Box-head offsets: each node's own normalized center in logit space, zero for extents.

    The head then predicts residuals around the node position, which keeps
    boundary nodes (centers at exactly 0 or 1) reachable by a sigmoid.
    """
    centers = np.clip(features[:, NUM_NODE_KINDS : NUM_NODE_KINDS + 2], ANCHOR_CLIP, 1.0 - ANCHOR_CLIP)
    out = np.zeros((features.shape[0], 4))
    out[:, :2] = np.log(centers / (1.0 - centers))
    return out


class GraphGenerator(Module):
    def __init__(self, name, latent_dim, label_dim, hidden, rounds, rng):
        super().__init__(name)
        self.embed = self.dense("embed", latent_dim + NODE_FEATURE_DIM + label_dim, hidden, rng)
        self.rounds = [
            (self.param(f"mp{r}.w_self", rng.standard_normal((hidden, hidden)) * math.sqrt(1.0 / hidden)),
             self.param(f"mp{r}.w_neigh", rng.standard_normal((hidden, hidden)) * math.sqrt(1.0 / hidden)))
            for r in range(rounds)
        ]
        self.head = self.dense("head", hidden, 4, rng)

    def __call__(self, z: Tensor, graphs: GraphBatch, label: Tensor) -> Tensor:
        idx = graphs.scene_index
        x = concat([z[idx], Tensor(graphs.features), label[idx]], axis=1)
        h = leaky_relu(linear(x, *self.embed))
        for w_self, w_neigh in self.rounds:
            h = message_passing_layer(h, graphs.adjacency, w_self, w_neigh, graphs.tau, graphs.mask)
        return sigmoid(linear(h, *self.head) + anchor_logits(graphs.features))


class GraphDiscriminator(Module):
    def __init__(self, name, label_dim, hidden, rng):
        super().__init__(name)
        self.embed = self.dense("embed", 4 + NODE_FEATURE_DIM + label_dim, hidden, rng)
        self.w_self = self.param("mp.w_self", rng.standard_normal((hidden, hidden)) * math.sqrt(1.0 / hidden))
        self.w_neigh = self.param("mp.w_neigh", rng.standard_normal((hidden, hidden)) * math.sqrt(1.0 / hidden))
        self.head = self.dense("head", hidden, 1, rng)

    def __call__(self, boxes: Tensor, graphs: GraphBatch, label: Tensor) -> Tensor:
        x = concat([boxes, Tensor(graphs.features), label[graphs.scene_index]], axis=1)
        h = leaky_relu(linear(x, *self.embed))
        h = message_passing_layer(h, graphs.adjacency, self.w_self, self.w_neigh, graphs.tau, graphs.mask)
        pooled = Tensor(graphs.mean_pool) @ h
        return sigmoid(linear(pooled, *self.head))


class Pipeline:
    """The six networks plus the shapes they agree on."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.scheme = config.scheme
        self.frame = config.frame
        self.categories = FURNITURE_CATEGORIES
        self.num_categories = len(self.categories)
        self.label_dim = self.scheme.total
        self.plan_dim = len(PLAN_CHANNELS) * config.resolution**2
        self.slot_width = 1 + self.num_categories + 4
        self.pool_dim = NUM_NODE_KINDS * 4 + 2
        Z, S, c = config.latent_dim, self.label_dim, config
        d_label = S if c.condition_discriminators else 0

        def rng(name):
            return rng_for(c.seed, "init", name)

        self.g1 = MLP("g1", (Z + S, *c.g1_hidden, self.plan_dim), rng("g1"))
        self.d1 = MLP("d1", (self.plan_dim + d_label, *c.d1_hidden, 1), rng("d1"))
        self.g2 = GraphGenerator("g2", Z, S, c.graph_hidden, c.graph_rounds, rng("g2"))
        self.d2 = GraphDiscriminator("d2", d_label, c.graph_hidden, rng("d2"))
        self.g3 = MLP("g3", (self.plan_dim + self.pool_dim + S, *c.g3_hidden, c.slots * self.slot_width), rng("g3"))
        self.d3 = MLP("d3", (c.slots * self.slot_width + d_label, *c.d3_hidden, 1), rng("d3"))

    @property
    def networks(self) -> dict[str, Module]:
        return {"g1": self.g1, "d1": self.d1, "g2": self.g2, "d2": self.d2, "g3": self.g3, "d3": self.d3}

    def _disc_input(self, x: Tensor, label: Tensor) -> Tensor:
        return concat([x, label], axis=1) if self.config.condition_discriminators else x

    # forward passes

    def g1_forward(self, z: Tensor, label: Tensor) -> Tensor:
        """(B, Z), (B, S) -> (B, 4 * R * R) plan raster in (0, 1)."""
        return sigmoid(self.g1(concat([z, label], axis=1)))

    def d1_forward(self, plan: Tensor, label: Tensor) -> Tensor:
        return sigmoid(self.d1(self._disc_input(plan, label)))

    def g2_forward(self, z: Tensor, graphs: GraphBatch, label: Tensor) -> Tensor:
        """-> (N_nodes, 4) boxes in (0, 1)."""
        return self.g2(z, graphs, label)

    def d2_forward(self, boxes: Tensor, graphs: GraphBatch, label: Tensor) -> Tensor:
        if boxes.shape != (sum(graphs.sizes), 4):
            raise ShapeError(f"box tensor {boxes.shape} does not match {sum(graphs.sizes)} graph nodes")
        if not self.config.condition_discriminators:
            label = Tensor(np.zeros((label.shape[0], 0)))
        return self.d2(boxes, graphs, label)

    def pool_boxes(self, boxes: Tensor, graphs: GraphBatch) -> Tensor:
        """Per-kind mean box of every graph plus its room extents, (B, 14).

        Boxes are normalized by the room bounds, so the metric room size
        (scaled by the raster frame) is appended to keep absolute scale.
        """
        pooled = (Tensor(graphs.kind_pool) @ boxes).reshape(graphs.num_graphs, NUM_NODE_KINDS * 4)
        return concat([pooled, Tensor(graphs.extents / self.frame.extent)], axis=1)

    def g3_forward(self, plan: Tensor, pooled_boxes: Tensor, label: Tensor) -> Tensor:
        """-> (B, K * slot_width) slots with presence/category/geometry activations applied."""
        if plan.shape[1] != self.plan_dim or pooled_boxes.shape[1] != self.pool_dim:
            raise ShapeError(f"g3 conditioning shapes {plan.shape}, {pooled_boxes.shape} do not match config")
        raw = self.g3(concat([plan, pooled_boxes, label], axis=1))
        b, k, c = plan.shape[0], self.config.slots, self.num_categories
        rows = raw.reshape(b * k, self.slot_width)
        slots = concat([sigmoid(rows[:, 0:1]), softmax(rows[:, 1 : 1 + c]), sigmoid(rows[:, 1 + c :])], axis=1)
        return slots.reshape(b, k * self.slot_width)

    def d3_forward(self, slots: Tensor, label: Tensor) -> Tensor:
        return sigmoid(self.d3(self._disc_input(slots, label)))

    # checkpoint entries

    def parameters(self) -> list[Parameter]:
        return [p for net in self.networks.values() for p in net.parameters()]

    def state_entries(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}


# losses


def loss_G(generated: Tensor, target, score_fake: Tensor | None, lam: float, metric: str) -> tuple[Tensor, Tensor]:
    """Reconstruction + lambda * adversarial; returns (total, reconstruction)."""
    target = ad.as_tensor(target)
    if generated.shape != target.shape:
        raise ShapeError(f"generated {generated.shape} vs ground truth {target.shape}")
    recon = ad.reconstruction_distance(generated, target, metric)
    if lam == 0.0 or score_fake is None:
        return recon, recon
    return recon + lam * ad.adversarial_generator_loss(score_fake), recon


def loss_G1(generated, target, score_fake, lam, metric="l1"):
    return loss_G(generated, target, score_fake, lam, metric)[0]


def loss_G2(generated, target, score_fake, lam, metric="l1"):
    if generated.shape[0] != np.shape(ad.as_tensor(target).data)[0]:
        raise ShapeError(f"{generated.shape[0]} generated boxes vs {np.shape(target)[0]} ground-truth nodes")
    return loss_G(generated, target, score_fake, lam, metric)[0]


def loss_G3(generated, target, score_fake, lam, metric="l1"):
    return loss_G(generated, target, score_fake, lam, metric)[0]


loss_D1 = loss_D2 = loss_D3 = ad.bce_discriminator_loss


# slot encoding


def encode_layout(layout: Sequence[FurnitureItem], bounds: Rect, slots: int, num_categories: int) -> np.ndarray:
    """Ground-truth slot tensor (K, 1 + C + 4); furniture sorted by (category, x, y)."""
    if len(layout) > slots:
        raise DatasetError(f"layout has {len(layout)} items but only {slots} slots")
    out = np.zeros((slots, 1 + num_categories + 4))
    ordered = sorted(layout, key=lambda f: (f.category_id, f.position[0], f.position[1]))
    for k, item in enumerate(ordered):
        if item.category_id >= num_categories:
            raise DatasetError(f"furniture category id {item.category_id} outside table of {num_categories}")
        out[k, 0] = 1.0
        out[k, 1 + item.category_id] = 1.0
        out[k, 1 + num_categories :] = [
            (item.position[0] - bounds.x0) / bounds.width,
            (item.position[1] - bounds.y0) / bounds.height,
            item.size[0] / bounds.width,
            item.size[1] / bounds.height,
        ]
    np.clip(out, 0.0, 1.0, out=out)
    return out


def decode_slots(slots: np.ndarray, bounds: Rect, num_categories: int, categories: Sequence[str] = FURNITURE_CATEGORIES) -> list[FurnitureItem]:
    """Slots with presence >= 0.5 become furniture, in slot order."""
    rows = np.asarray(slots).reshape(-1, 1 + num_categories + 4)
    items = []
    for row in rows:
        if row[0] < 0.5:
            continue
        cid = int(np.argmax(row[1 : 1 + num_categories]))
        cx, cy, ex, ey = row[1 + num_categories :]
        length = max(float(ex) * bounds.width, MIN_SIZE)
        width = max(float(ey) * bounds.height, MIN_SIZE)
        height = HEIGHTS.get(categories[cid], 1.0) if cid < len(categories) else 1.0
        items.append(
            FurnitureItem(cid, (bounds.x0 + float(cx) * bounds.width, bounds.y0 + float(cy) * bounds.height), (length, width, height))
        )
    return items


# per-scene training tensors


@dataclass
class SceneTensors:
    scene: Scene
    latent: np.ndarray
    label: np.ndarray
    plan: np.ndarray  # flattened ground-truth raster
    graph: StructuralGraph
    boxes: np.ndarray
    slots: np.ndarray  # flattened


def prepare_scene(scene: Scene, config: RunConfig, pipeline: Pipeline) -> SceneTensors:
    graph = encode_graph(scene.floor_plan)
    plan = rasterize_floorplan(scene.floor_plan, config.resolution, config.frame).values.reshape(-1)
    slots = encode_layout(scene.layout, scene.floor_plan.bounds, config.slots, pipeline.num_categories).reshape(-1)
    return SceneTensors(
        scene,
        scene_latent(scene.scene_id, config.latent_dim, config.latent_salt),
        one_hot_label(scene.label, pipeline.scheme),
        plan,
        graph,
        structural_ground_truth(graph),
        slots,
    )


@dataclass
class Batch:
    z: Tensor
    label: Tensor
    plan: np.ndarray
    graphs: GraphBatch
    boxes: np.ndarray
    slots: np.ndarray

    @classmethod
    def collate(cls, items: Sequence[SceneTensors]) -> Batch:
        return cls(
            Tensor(np.stack([i.latent for i in items])),
            Tensor(np.stack([i.label for i in items])),
            np.stack([i.plan for i in items]),
            GraphBatch.from_graphs([i.graph for i in items]),
            np.concatenate([i.boxes for i in items]),
            np.stack([i.slots for i in items]),
        )


@dataclass
class Forward:
    plan: Tensor
    boxes: Tensor
    slots: Tensor


def run_generators(pipe: Pipeline, batch: Batch, detach_stages: bool = False) -> Forward:
    plan = pipe.g1_forward(batch.z, batch.label)
    boxes = pipe.g2_forward(batch.z, batch.graphs, batch.label)
    plan_in, boxes_in = (plan.detach(), boxes.detach()) if detach_stages else (plan, boxes)
    slots = pipe.g3_forward(plan_in, pipe.pool_boxes(boxes_in, batch.graphs), batch.label)
    return Forward(plan, boxes, slots)


# training


@dataclass
class TrainingState:
    config: RunConfig
    pipeline: Pipeline
    optimizers: dict[str, Adam]
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def initialize(cls, config: RunConfig) -> TrainingState:
        pipe = Pipeline(config)
        opts = {name: Adam(net.parameters(), config.learning_rate) for name, net in pipe.networks.items()}
        return cls(config, pipe, opts)

    def checkpoint_entries(self) -> dict[str, np.ndarray]:
        c = self.config
        entries = {
            "meta.resolution": np.array([c.resolution]),
            "meta.latent_dim": np.array([c.latent_dim]),
            "meta.slots": np.array([c.slots]),
            "meta.num_categories": np.array([self.pipeline.num_categories]),
            "meta.label_dim": np.array([self.pipeline.label_dim]),
            "meta.step": np.array([self.step]),
            "meta.epoch": np.array([self.epoch]),
        }
        entries.update(self.pipeline.state_entries())
        for name, opt in self.optimizers.items():
            for key, value in opt.state_dict().items():
                entries[f"opt.{name}.{key}"] = value
        return entries

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.checkpoint_entries())

    @classmethod
    def load(cls, path, config: RunConfig) -> TrainingState:
        from .errors import ConfigError

        entries = ad.load_checkpoint(path)
        state = cls.initialize(config)
        expected = state.checkpoint_entries()
        for key in [k for k in expected if k.startswith("meta.") and k not in ("meta.step", "meta.epoch")]:
            if key not in entries or not np.array_equal(entries[key], expected[key]):
                raise ConfigError(f"checkpoint {path} was trained with a different {key[5:]}")
        for p in state.pipeline.parameters():
            if p.name not in entries or entries[p.name].shape != p.shape:
                raise ConfigError(f"checkpoint {path} has no compatible entry for {p.name}")
            p.data[...] = entries[p.name]
        for name, opt in state.optimizers.items():
            prefix = f"opt.{name}."
            opt.load_state_dict({k[len(prefix):]: v for k, v in entries.items() if k.startswith(prefix)})
        state.step = int(entries["meta.step"][0])
        state.epoch = int(entries["meta.epoch"][0])
        return state


def _check_finite(step: int, losses: dict) -> None:
    if not all(math.isfinite(v) for v in losses.values()):
        raise DivergenceError(step, losses)


class _InstanceNoise:
    """Gaussian noise added to every discriminator input, real or fake.

    Soft generator outputs and exact one-hot/binary targets are otherwise
    trivially separable. Drawn from a per-step seeded stream.
    """

    def __init__(self, config: RunConfig, step: int):
        self.sigma = config.instance_noise
        self.rng = rng_for(config.seed, "instance-noise", step) if self.sigma > 0 else None

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if self.rng is None:
            return x
        return x + Tensor(self.rng.standard_normal(x.shape) * self.sigma)


def discriminator_step(state: TrainingState, batch: Batch, noise: _InstanceNoise) -> dict:
    """Update d1-d3 on detached generator outputs; generator parameters are untouched."""
    pipe, opt = state.pipeline, state.optimizers
    with no_grad():
        fake = run_generators(pipe, batch)
    d_losses = [
        ad.bce_discriminator_loss(pipe.d1_forward(noise(fake.plan), batch.label), pipe.d1_forward(noise(batch.plan), batch.label)),
        ad.bce_discriminator_loss(
            pipe.d2_forward(noise(fake.boxes), batch.graphs, batch.label),
            pipe.d2_forward(noise(batch.boxes), batch.graphs, batch.label),
        ),
        ad.bce_discriminator_loss(pipe.d3_forward(noise(fake.slots), batch.label), pipe.d3_forward(noise(batch.slots), batch.label)),
    ]
    record = {"loss_d1": d_losses[0].item(), "loss_d2": d_losses[1].item(), "loss_d3": d_losses[2].item()}
    _check_finite(state.step, record)
    (d_losses[0] + d_losses[1] + d_losses[2]).backward()
    for name in ("d1", "d2", "d3"):
        opt[name].step()
        if state.config.disc_spectral_bound:
            pipe.networks[name].constrain_spectral_norm(state.config.disc_spectral_bound)
    return record


def generator_step(state: TrainingState, batch: Batch, noise: _InstanceNoise) -> dict:
    """One joint update of g1-g3 on L_G1 + L_G2 + L_G3; discriminator parameters are untouched.

    Gradients of the layout loss reach g1 and g2 unless ``detach_stages`` is set.
    """
    pipe, c, opt = state.pipeline, state.config, state.optimizers
    out = run_generators(pipe, batch, c.detach_stages)
    lams = (c.lambda_adv1, c.lambda_adv2, c.lambda_adv3)
    s1 = pipe.d1_forward(noise(out.plan), batch.label) if lams[0] else None
    s2 = pipe.d2_forward(noise(out.boxes), batch.graphs, batch.label) if lams[1] else None
    s3 = pipe.d3_forward(noise(out.slots), batch.label) if lams[2] else None
    G1, r1 = loss_G(out.plan, batch.plan, s1, lams[0], c.metric)
    G2, r2 = loss_G(out.boxes, batch.boxes, s2, lams[1], c.metric)
    G3, r3 = loss_G(out.slots, batch.slots, s3, lams[2], c.metric)
    record = {
        "loss_g1": r1.item(), "loss_g2": r2.item(), "loss_g3": r3.item(),
        "loss_G1": G1.item(), "loss_G2": G2.item(), "loss_G3": G3.item(),
    }
    _check_finite(state.step, record)
    (G1 + G2 + G3).backward()
    for name in ("g1", "g2", "g3"):
        opt[name].step()
    # the adversarial terms also left gradients on d1-d3
    for name in ("d1", "d2", "d3"):
        opt[name].zero_grad()
    return record


def train_step(state: TrainingState, batch: Batch) -> dict:
    """One discriminator update for d1-d3, then one joint generator update."""
    state.step += 1
    noise = _InstanceNoise(state.config, state.step)
    record = {"step": state.step}
    try:
        record.update(discriminator_step(state, batch, noise))
        record.update(generator_step(state, batch, noise))
    except DomainError as exc:
        # NaN scores are caught by the loss input checks before any loss exists
        raise DivergenceError(state.step, {"error": str(exc)}) from exc
    state.history.append(record)
    return record


def train_epoch(state: TrainingState, data: Sequence[SceneTensors]) -> dict:
    """Visit ``data`` in order in batches of ``config.batch_size``; returns epoch-mean losses."""
    if not data:
        raise DatasetError("cannot train on an empty dataset")
    bs = state.config.batch_size
    records = [train_step(state, Batch.collate(data[i : i + bs])) for i in range(0, len(data), bs)]
    state.epoch += 1
    keys = [k for k in records[0] if k != "step"]
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


def prepare_dataset(dataset: Dataset | Sequence[Scene], state_or_config) -> list[SceneTensors]:
    config = state_or_config.config if isinstance(state_or_config, TrainingState) else state_or_config
    pipe = state_or_config.pipeline if isinstance(state_or_config, TrainingState) else Pipeline(config)
    scenes = dataset.scenes if isinstance(dataset, Dataset) else list(dataset)
    return [prepare_scene(s, config, pipe) for s in scenes]


def history_csv(history: Sequence[dict]) -> str:
    lines = ["step," + ",".join(LOSS_COLUMNS)]
    for r in history:
        lines.append(",".join([str(r["step"])] + [repr(float(r[k])) for k in LOSS_COLUMNS]))
    return "\n".join(lines) + "\n"


# generation


@dataclass
class GeneratedScene:
    scene: Scene
    degenerate: bool
    plan_raster: Raster
    boxes: np.ndarray


def _components(mask: np.ndarray) -> list[np.ndarray]:
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    return [np.argwhere(labels == i + 1) for i in range(n)]


def _wall_lines(profile: np.ndarray, lo: int, hi: int, centers: np.ndarray, frame: RasterFrame) -> tuple[float, float]:
    """Center lines of the two walls bounding a room along one axis.

    ``profile`` counts wall cells per column (or row). A wall running across
    the axis fills at least half the room's span; the mean center of those
    columns at each end is the wall line, within a quarter cell. Falls back
    to padding the outermost covered centers when no such columns exist.
    """
    full = profile >= 0.5 * (hi - lo + 1)
    # the outermost covered center lies on average half a cell inside the
    # outer band edge, i.e. this far outside the wall center line
    pad = wall_half_width(frame) - frame.cell / 2.0
    ends = []
    for start, step in ((lo, 1), (hi, -1)):
        run = []
        i = start
        while lo <= i <= hi and full[i]:
            run.append(i)
            i += step
        ends.append(float(centers[run].mean()) if run else float(centers[start]) + step * pad)
    return ends[0], ends[1]


def plan_from_raster(values: np.ndarray, frame: RasterFrame, threshold: float = 0.5) -> tuple[FloorPlan | None, int]:
    """Recover a rectangular room and its openings from plan raster channels.

    Returns ``(plan, interior_cell_count)``; ``plan`` is None when no room
    outline can be recovered.
    """
    interior, wall, door, window = (values[i] >= threshold for i in range(4))
    comps = _components(interior | wall)
    if not comps:
        return None, 0
    room = max(comps, key=len)
    room_mask = np.zeros_like(interior)
    room_mask[tuple(room.T)] = True
    n_interior = int((interior & room_mask).sum())
    if n_interior < MIN_INTERIOR_CELLS:
        return None, n_interior

    xs, ys = frame.cell_centers()
    rows, cols = room[:, 0], room[:, 1]
    walls = wall & room_mask
    x0, x1 = _wall_lines(walls.sum(axis=0), cols.min(), cols.max(), xs, frame)
    y0, y1 = _wall_lines(walls.sum(axis=1), rows.min(), rows.max(), ys, frame)
    x0, y0 = round(float(x0), 2), round(float(y0), 2)
    x1, y1 = round(float(x1), 2), round(float(y1), 2)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None, n_interior
    bounds = Rect(x0, y0, x1, y1)

    openings = []
    for kind, mask in ((OpeningKind.DOOR, door), (OpeningKind.WINDOW, window)):
        for comp in _components(mask):
            cx, cy = xs[comp[:, 1]], ys[comp[:, 0]]
            mx, my = float(cx.mean()), float(cy.mean())
            span_x = float(cx.max() - cx.min()) + frame.cell
            span_y = float(cy.max() - cy.min()) + frame.cell
            side = min(
                (abs(mx - x0), "w"), (abs(x1 - mx), "e"), (abs(my - y0), "s"), (abs(y1 - my), "n")
            )[1]
            if side in ("w", "e"):
                pos = (x0 if side == "w" else x1, min(max(my, y0), y1))
                width = span_y
            else:
                pos = (min(max(mx, x0), x1), y0 if side == "s" else y1)
                width = span_x
            openings.append(Opening(kind, (round(pos[0] - x0, 3), round(pos[1] - y0, 3)), round(width, 3)))
    # re-anchor the room at the origin like dataset scenes
    return rectangular_plan(round(x1 - x0, 2), round(y1 - y0, 2), openings), n_interior


def _fallback_plan(label: RoomLabel, scheme) -> FloorPlan:
    lo, hi = scheme.band(label)
    side = (lo + hi) / 2.0 if math.isfinite(hi) else lo + 0.5
    side = max(side, 1.0)
    return rectangular_plan(round(1.3 * side, 2), round(side, 2))


def generate(state: TrainingState, label: RoomLabel, seed: int | None = None, z: np.ndarray | None = None, index: int = 0) -> GeneratedScene:
    """Full pipeline g1 -> plan proxy -> g2 -> g3 -> decoded layout.

    The latent is ``z`` if given, otherwise drawn from the seed stream
    ``(seed, "generate", index)``.
    """
    pipe, c = state.pipeline, state.config
    if z is None:
        z = rng_for(seed or 0, "generate", index).standard_normal(c.latent_dim)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    label_vec = Tensor(one_hot_label(label, pipe.scheme)[None, :])
    with no_grad():
        plan_t = pipe.g1_forward(Tensor(z), label_vec)
        values = plan_t.data.reshape(len(PLAN_CHANNELS), c.resolution, c.resolution)
        plan, _ = plan_from_raster(values, c.frame)
        degenerate = plan is None
        if degenerate:
            plan = _fallback_plan(label, pipe.scheme)
        graphs = GraphBatch.from_graphs([encode_graph(plan)])
        boxes = pipe.g2_forward(Tensor(z), graphs, label_vec)
        slots = pipe.g3_forward(plan_t, pipe.pool_boxes(boxes, graphs), label_vec)
    items = [it for it in decode_slots(slots.data, plan.bounds, pipe.num_categories) if furniture_footprint(it).intersects(plan.bounds)]
    scene_id = derive_seed(seed, "generated-scene", index) if seed is not None else derive_seed(0, "latent", z.tobytes().hex())
    scene = Scene(plan, tuple(items), label, scene_id)
    return GeneratedScene(scene, degenerate, Raster(values.copy(), PLAN_CHANNELS, c.frame), boxes.data.copy())


def predict_layout(state: TrainingState, item: SceneTensors) -> list[FurnitureItem]:
    """Layout for a dataset scene from its owned latent and ground-truth graph."""
    pipe = state.pipeline
    batch = Batch.collate([item])
    with no_grad():
        out = run_generators(pipe, batch)
    bounds = item.scene.floor_plan.bounds
    return decode_slots(out.slots.data, bounds, pipe.num_categories)
