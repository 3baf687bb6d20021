"""Acceptance checks, one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even when
output is captured) or directly with ``python tests/test_acceptance.py``.
The generalization check trains for several minutes.
"""

from __future__ import annotations

import functools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import exhaustive_layout_iou, pixel_iou  # noqa: E402

from layoutforge import autodiff as ad  # noqa: E402
from layoutforge.autodiff import Parameter, Tensor, grad_check, no_grad  # noqa: E402
from layoutforge.cli import main as cli_main  # noqa: E402
from layoutforge.config import RunConfig  # noqa: E402
from layoutforge.dataset import DatasetConfig, dataset_to_json, dataset_from_json, split, synthesize_dataset  # noqa: E402
from layoutforge.domain import FURNITURE_CATEGORIES, FurnitureItem, Rect, RoomLabel, RoomType, label_from_dimensions  # noqa: E402
from layoutforge.gan import (  # noqa: E402
    Batch,
    GraphBatch,
    TrainingState,
    generate,
    loss_G1,
    loss_G2,
    loss_G3,
    predict_layout,
    prepare_dataset,
    run_generators,
    train_epoch,
)
from layoutforge.graph import denormalize_box, distance_kernel, encode_graph, message_passing_layer  # noqa: E402
from layoutforge.metrics import box_iou, layout_iou, mode_accuracy  # noqa: E402

RESULTS: list[str] = []


def report(name: str, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    return line


def emit(capsys, line: str) -> None:
    with capsys.disabled():
        print("\n" + line)


# gradient correctness

INSTANCES = 20
GRAD_TOL = 1e-4
SMALL_NETS = dict(
    g1_hidden=(6,), d1_hidden=(5,), g3_hidden=(6,), d3_hidden=(5,), graph_hidden=4, graph_rounds=2,
    resolution=4, latent_dim=3, slots=2,
)


def _p(rng, *shape, scale=1.0):
    return Parameter(rng.standard_normal(shape) * scale, "x")


def _layer_cases():
    """name -> factory(rng) returning (closure, parameters); closures reduce to a scalar."""

    def linear_case(rng):
        x, w, b = _p(rng, 3, 4), _p(rng, 4, 5), _p(rng, 5)
        wts = rng.standard_normal((3, 5))
        return (lambda: (ad.linear(x, w, b) * wts).sum()), [x, w, b]

    def unary(fn):
        def case(rng):
            x = _p(rng, 4, 5)
            wts = rng.standard_normal((4, 5))
            return (lambda: (fn(x) * wts).sum()), [x]

        return case

    def concat_case(rng):
        a, b = _p(rng, 2, 3), _p(rng, 2, 4)
        wts = rng.standard_normal((2, 7))
        return (lambda: (ad.concat([a, b], axis=1).reshape(7, 2).T.reshape(2, 7) * wts).sum()), [a, b]

    def index_case(rng):
        x = _p(rng, 5, 3)
        idx = rng.integers(0, 5, size=7)
        wts = rng.standard_normal((7, 3))
        return (lambda: (x[idx] * wts).sum()), [x]

    def kernel_case(rng):
        d = Parameter(rng.random((4, 4)) * 3.0, "d")
        wts = rng.standard_normal((4, 4))
        return (lambda: (distance_kernel(d, 1.7) * wts).sum()), [d]

    def mp_case(rng):
        n, h = 5, 4
        pts = rng.random((n, 2)) * 4.0
        adj = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        x, ws, wn = _p(rng, n, h), _p(rng, h, h, scale=0.5), _p(rng, h, h, scale=0.5)
        wts = rng.standard_normal((n, h))
        return (lambda: (message_passing_layer(x, adj, ws, wn, 2.0) * wts).sum()), [x, ws, wn]

    return {
        "linear": linear_case,
        "relu": unary(ad.relu),
        "leaky_relu": unary(ad.leaky_relu),
        "sigmoid": unary(ad.sigmoid),
        "tanh": unary(ad.tanh),
        "softmax": unary(lambda x: ad.softmax(x, axis=1)),
        "concat+reshape": concat_case,
        "row gather": index_case,
        "distance kernel": kernel_case,
        "message passing": mp_case,
    }


def _loss_cases():
    def recon(metric):
        def case(rng):
            a, b = _p(rng, 3, 4), rng.standard_normal((3, 4))
            return (lambda: ad.reconstruction_distance(a, b, metric)), [a]

        return case

    def scores(rng, n=3):
        return Parameter(rng.uniform(0.05, 0.95, size=(n, 1)), "s")

    def bce(rng):
        f, r = scores(rng), scores(rng)
        return (lambda: ad.bce_discriminator_loss(f, r)), [f, r]

    def adv(rng):
        f = scores(rng)
        return (lambda: ad.adversarial_generator_loss(f)), [f]

    def composite(fn, shape):
        def case(rng):
            g, t, s = Parameter(rng.random(shape), "g"), rng.random(shape), scores(rng, shape[0])
            return (lambda: fn(g, t, s, 0.3, "l2")), [g, s]

        return case

    return {
        "reconstruction l1": recon("l1"),
        "reconstruction l2": recon("l2"),
        "discriminator bce": bce,
        "generator adversarial": adv,
        "plan loss": composite(loss_G1, (2, 6)),
        "box loss": composite(loss_G2, (4, 4)),
        "slot loss": composite(loss_G3, (2, 8)),
    }


@functools.lru_cache(maxsize=1)
def _tiny_batch():
    scenes = synthesize_dataset(DatasetConfig(count=3, seed=11)).scenes
    state = TrainingState.initialize(RunConfig(**SMALL_NETS))
    return Batch.collate(prepare_dataset(scenes[:2], state))


def _network_cases():
    """Each network's forward pass with respect to all its parameters and its inputs."""

    def case(name):
        def build(rng):
            state = TrainingState.initialize(RunConfig(**SMALL_NETS, seed=int(rng.integers(1 << 30))))
            pipe, batch = state.pipeline, _tiny_batch()
            z = Parameter(rng.standard_normal(batch.z.shape), "z")
            with no_grad():
                out = run_generators(pipe, batch)
            plan = Parameter(out.plan.data.copy(), "plan")
            boxes = Parameter(out.boxes.data.copy(), "boxes")
            slots = Parameter(out.slots.data.copy(), "slots")
            forward, inputs = {
                "g1": (lambda: pipe.g1_forward(z, batch.label), [z]),
                "d1": (lambda: pipe.d1_forward(plan, batch.label), [plan]),
                "g2": (lambda: pipe.g2_forward(z, batch.graphs, batch.label), [z]),
                "d2": (lambda: pipe.d2_forward(boxes, batch.graphs, batch.label), [boxes]),
                "g3": (lambda: pipe.g3_forward(plan, pipe.pool_boxes(boxes, batch.graphs), batch.label), [plan, boxes]),
                "d3": (lambda: pipe.d3_forward(slots, batch.label), [slots]),
            }[name]
            with no_grad():
                wts = rng.standard_normal(forward().shape)
            return (lambda: (forward() * wts).sum()), pipe.networks[name].parameters() + inputs

        return build

    return {f"network {n}": case(n) for n in ("g1", "d1", "g2", "d2", "g3", "d3")}


def check_gradients():
    start = time.perf_counter()
    worst: dict[str, float] = {}
    cases = {**_layer_cases(), **_loss_cases(), **_network_cases()}
    for name, factory in cases.items():
        for i in range(INSTANCES):
            rng = np.random.default_rng([7, i, len(name)] + [ord(c) for c in name])
            closure, params = factory(rng)
            res = grad_check(closure, params, eps=1e-5, tolerance=GRAD_TOL)
            worst[name] = max(worst.get(name, 0.0), res["max_error"])
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if v >= GRAD_TOL}
    passed = not bad and elapsed < 30.0
    detail = (
        f"{len(cases)} layers/losses/networks x {INSTANCES} instances, worst relative error "
        f"{max(worst.values()):.1e} (< {GRAD_TOL:g}), {elapsed:.1f}s (< 30s)"
    )
    if bad:
        detail += f"; failing: {bad}"
    return passed, detail


def test_gradient_correctness(capsys):
    passed, detail = check_gradients()
    emit(capsys, report("gradient correctness", passed, detail))
    assert passed, detail


# overfit sanity


def _node_ious(pred: np.ndarray, truth: np.ndarray, bounds: Rect) -> list[float]:
    out = []
    for p, t in zip(pred, truth):
        try:
            out.append(box_iou(denormalize_box(p, bounds), denormalize_box(t, bounds)))
        except ValueError:  # predicted box collapsed to zero area
            out.append(0.0)
    return out


def check_overfit():
    start = time.perf_counter()
    scene = synthesize_dataset(DatasetConfig(count=1, seed=0)).scenes[0]
    config = RunConfig(lambda_adv1=0.0, lambda_adv2=0.0, lambda_adv3=0.0, epochs=500)
    state = TrainingState.initialize(config)
    data = prepare_dataset([scene], state)
    first = train_epoch(state, data)
    for _ in range(config.epochs - 1):
        last = train_epoch(state, data)
    batch = Batch.collate(data)
    with no_grad():
        out = run_generators(state.pipeline, batch)
    l1 = float(np.abs(out.plan.data - batch.plan).mean())
    node_iou = float(np.mean(_node_ious(out.boxes.data, batch.boxes, scene.floor_plan.bounds)))
    layout = predict_layout(state, data[0])
    mode = mode_accuracy([layout], [scene.layout])
    iou = layout_iou(layout, scene.layout)
    ratios = {k: last[k] / first[k] for k in ("loss_g1", "loss_g2", "loss_g3")}
    elapsed = time.perf_counter() - start
    passed = l1 < 0.05 and node_iou > 0.8 and mode == 1.0 and iou > 0.7 and all(r < 0.1 for r in ratios.values()) and elapsed < 300
    detail = (
        f"plan L1 {l1:.4f} (< 0.05), node IoU {node_iou:.3f} (> 0.8), Mode {mode:.3f} (= 1), "
        f"layout IoU {iou:.3f} (> 0.7), final/initial losses "
        + ", ".join(f"{k[-2:]} {v:.4f}" for k, v in ratios.items())
        + f" (< 0.1), {elapsed:.0f}s (< 300s)"
    )
    return passed, detail


def test_overfit_sanity(capsys):
    passed, detail = check_overfit()
    emit(capsys, report("overfit sanity", passed, detail))
    assert passed, detail


# desk-scale generalization


def _score(state, items) -> tuple[float, float]:
    layouts = [predict_layout(state, it) for it in items]
    truth = [it.scene.layout for it in items]
    mode = mode_accuracy(layouts, truth)
    iou = float(np.mean([layout_iou(g, t) for g, t in zip(layouts, truth)]))
    return mode, iou


@functools.lru_cache(maxsize=1)
def _generalization_run():
    start = time.perf_counter()
    config = RunConfig()
    dataset = synthesize_dataset(DatasetConfig(count=300, seed=config.seed))
    idx = split(dataset, config.split_seed, config.train_fraction)
    train, test = dataset.subset(idx.train_ids), dataset.subset(idx.test_ids)
    state = TrainingState.initialize(config)
    train_items, test_items = prepare_dataset(train, state), prepare_dataset(test, state)
    baseline = _score(state, test_items)
    for _ in range(config.epochs):
        train_epoch(state, train_items)
    trained = _score(state, test_items)
    return state, baseline, trained, len(train), len(test), time.perf_counter() - start


def check_generalization():
    _, (b_mode, b_iou), (mode, iou), n_train, n_test, elapsed = _generalization_run()
    passed = mode >= 0.60 and iou >= 0.30 and mode > b_mode and iou > b_iou and elapsed < 1800
    detail = (
        f"{n_train}/{n_test} split, 200 epochs, lambda 0.01: held-out Mode {mode:.3f} (>= 0.60, untrained {b_mode:.3f}), "
        f"layout IoU {iou:.3f} (>= 0.30, untrained {b_iou:.3f}), {elapsed:.0f}s (< 1800s)"
    )
    return passed, detail


def test_generalization(capsys):
    passed, detail = check_generalization()
    emit(capsys, report("desk-scale generalization", passed, detail))
    assert passed, detail


def check_tatami_sampling():
    state = _generalization_run()[0]
    tatami = RoomLabel(RoomType.BEDROOM, 0)
    sides = [generate(state, tatami, seed=2024, index=i).scene.floor_plan.bounds.shorter_side for i in range(50)]
    share = float(np.mean([s < 2.7 for s in sides]))
    return share >= 0.8, f"tatami samples with shorter side < 2.7 m: {share:.0%} of 50 (>= 80%)"


def test_tatami_sampling(capsys):
    passed, detail = check_tatami_sampling()
    emit(capsys, report("tatami sampling after training", passed, detail))
    assert passed, detail


# metric oracles


def _random_rect(rng) -> Rect:
    x0, y0 = rng.uniform(0, 4, size=2)
    w, h = rng.uniform(0.1, 3, size=2)
    return Rect(x0, y0, x0 + w, y0 + h)


def _random_layout(rng, max_per_cat=4, cats=3):
    items = []
    for cat in range(cats):
        for _ in range(rng.integers(0, max_per_cat + 1)):
            items.append(FurnitureItem(cat, tuple(rng.uniform(0.5, 3.5, size=2)), (*rng.uniform(0.3, 2.0, size=2), 1.0)))
    return items


def check_metric_oracles():
    rng = np.random.default_rng(99)
    box_err = 0.0
    for _ in range(200):
        a, b = _random_rect(rng), _random_rect(rng)
        if rng.random() < 0.5:  # force overlap for half the pairs
            b = Rect(a.x0 + 0.3 * a.width, a.y0 + 0.2 * a.height, a.x0 + 0.3 * a.width + b.width, a.y0 + 0.2 * a.height + b.height)
        box_err = max(box_err, abs(box_iou(a, b) - pixel_iou(a, b, 256)))
    match_err, n = 0.0, 0
    while n < 500:
        gt, gen = _random_layout(rng), _random_layout(rng)
        if not gt:
            continue
        match_err = max(match_err, abs(layout_iou(gen, gt) - exhaustive_layout_iou(gen, gt)))
        n += 1
    passed = box_err <= 0.02 and match_err < 1e-9
    return passed, f"box IoU vs 256x256 pixel count max error {box_err:.4f} (<= 0.02) on 200 pairs; matching vs exhaustive max error {match_err:.1e} on {n} layouts"


def test_metric_oracles(capsys):
    passed, detail = check_metric_oracles()
    emit(capsys, report("metric oracles", passed, detail))
    assert passed, detail


# label rule


def _piecewise_bedroom(length: float) -> int:
    if length < 2.7:
        return 0
    if length < 3.4:
        return 1
    return 2


def check_label_rule():
    bed = RoomType.BEDROOM

    def cat(short, long_side=5.0):
        return label_from_dimensions(Rect(0, 0, long_side, short), bed).dim_category

    examples = [cat(2.5), cat(3.0), cat(4.0)] == [0, 1, 2]
    boundaries = [cat(2.7), cat(3.4), cat(np.nextafter(2.7, 0)), cat(np.nextafter(3.4, 0))] == [1, 2, 0, 1]
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(10_000):
        a, b = rng.uniform(0.5, 6.0, size=2)
        if label_from_dimensions(Rect(0, 0, a, b), bed).dim_category != _piecewise_bedroom(min(a, b)):
            mismatches += 1
    passed = examples and boundaries and mismatches == 0
    return passed, f"2.5/3.0/4.0 m -> 0/1/2: {examples}; 2.7 and 3.4 fall in the upper band: {boundaries}; {mismatches} mismatches in 10,000 random rooms"


def test_label_rule(capsys):
    passed, detail = check_label_rule()
    emit(capsys, report("label rule", passed, detail))
    assert passed, detail


# determinism


def check_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        if cli_main(["synth-data", "--out-dir", str(root), "--count", "20", "--seed", "4"]) != 0:
            return False, "synth-data failed"
        for run in ("a", "b"):
            code = cli_main(["train", "--out-dir", str(root / run), "--dataset", str(root / "dataset.json"), "--epochs", "3", "--seed", "4"])
            if code != 0:
                return False, f"train run {run} exited {code}"
        same = {f: (root / "a" / f).read_bytes() == (root / "b" / f).read_bytes() for f in ("checkpoint.lfck", "losses.csv")}
    return all(same.values()), f"two CLI train runs (20 scenes, 3 epochs, seed 4) byte-identical: {same}"


def test_determinism(capsys):
    passed, detail = check_determinism()
    emit(capsys, report("determinism", passed, detail))
    assert passed, detail


# serialization


def check_serialization():
    ds = synthesize_dataset(DatasetConfig(count=1000, seed=8))
    first = dataset_to_json(ds)
    second = dataset_to_json(dataset_from_json(first))
    return first == second and len(ds) == 1000, f"1,000-scene save -> load -> save byte-identical: {first == second} ({len(first):,} bytes)"


def test_serialization(capsys):
    passed, detail = check_serialization()
    emit(capsys, report("serialization", passed, detail))
    assert passed, detail


# mode accuracy unit values


def check_mode_units():
    bed, wardrobe = FURNITURE_CATEGORIES.index("bed"), FURNITURE_CATEGORIES.index("wardrobe")
    gt = [FurnitureItem(bed, (1.0, 1.0), (2.0, 1.6, 0.5)), FurnitureItem(wardrobe, (3.0, 0.5), (1.2, 0.6, 2.0))]
    values = (mode_accuracy([gt], [gt]), mode_accuracy([gt[:1]], [gt]), mode_accuracy([[]], [gt]))
    return values == (1.0, 0.5, 0.0), f"identical / bed only / empty -> {values} (expected (1.0, 0.5, 0.0))"


def test_mode_accuracy_units(capsys):
    passed, detail = check_mode_units()
    emit(capsys, report("mode accuracy unit values", passed, detail))
    assert passed, detail


CHECKS = [
    ("gradient correctness", check_gradients),
    ("overfit sanity", check_overfit),
    ("desk-scale generalization", check_generalization),
    ("tatami sampling after training", check_tatami_sampling),
    ("metric oracles", check_metric_oracles),
    ("label rule", check_label_rule),
    ("determinism", check_determinism),
    ("serialization", check_serialization),
    ("mode accuracy unit values", check_mode_units),
]


if __name__ == "__main__":
    failures = 0
    for name, check in CHECKS:
        try:
            passed, detail = check()
        except Exception as exc:  # a crash is a failure of that criterion only
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        print(report(name, passed, detail), flush=True)
        failures += not passed
    sys.exit(1 if failures else 0)
