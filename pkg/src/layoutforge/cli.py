"""Command-line entry point: ``layoutforge {synth-data,train,generate,evaluate,render}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .config import RunConfig, dump_config, load_config
from .dataset import Dataset, DatasetConfig, load_scenes, save_scenes, split, synthesize_dataset
from .domain import FURNITURE_CATEGORIES, RoomLabel, RoomType, furniture_footprint
from .errors import CheckpointError, ConfigError, DatasetError, DivergenceError, LayoutForgeError
from .gan import TrainingState, generate, history_csv, predict_layout, prepare_dataset, train_epoch
from .metrics import EvaluationReport, aggregate, layout_iou, mode_accuracy
from .raster import rasterize_floorplan, render_image, save_image

logger = logging.getLogger("layoutforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
SEED_ENV = "LAYOUTFORGE_SEED"
FINAL_CHECKPOINT = "checkpoint.lfck"
LOSS_CSV = "losses.csv"
MIN_SPLIT = 10


# config plumbing


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values, then flags; the seed falls back to the environment when neither sets it."""
    overrides = {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "dataset": getattr(args, "dataset", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "learning_rate", None),
        "metric": getattr(args, "metric", None),
        "checkpoint_every": getattr(args, "checkpoint_every", None),
        "split_seed": getattr(args, "split_seed", None),
        "resolution": getattr(args, "resolution", None),
    }
    if getattr(args, "detach_stages", False):
        overrides["detach_stages"] = True
    for i, lam in enumerate(getattr(args, "lambda_adv", None) or (), start=1):
        overrides[f"lambda_adv{i}"] = lam
    for item in getattr(args, "set", None) or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = _parse_value(value.strip())
    config = load_config(args.config, overrides)
    seed_given = args.seed is not None or (args.config is not None and _file_sets_seed(args.config))
    if not seed_given:
        env = _env_seed()
        if env is not None:
            config = config.replace(seed=env)
    return config


def _file_sets_seed(path) -> bool:
    import tomli

    return "seed" in tomli.loads(Path(path).read_text(encoding="utf-8"))


def _parse_value(text: str):
    import tomli

    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def in_out_dir(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else Path(config.out_dir) / path


def _parse_label(text: str, config: RunConfig) -> RoomLabel:
    room, sep, cat = text.partition(":")
    try:
        label = RoomLabel(RoomType(room.strip().lower()), int(cat) if sep else -1)
    except ValueError:
        raise ConfigError(f"label must look like ROOM:INDEX (e.g. bedroom:1), got {text!r}") from None
    if not config.scheme.is_valid(label):
        raise ConfigError(f"label {text!r} is outside the configured subcategories")
    return label


def _load_dataset(config: RunConfig, path=None) -> Dataset:
    return load_scenes(in_out_dir(config, path or config.dataset), config.scheme)


def _split_dataset(dataset: Dataset, config: RunConfig) -> tuple[Dataset, Dataset]:
    if len(dataset) < MIN_SPLIT:
        # too small to hold out anything: train and evaluate on everything
        return dataset, dataset
    idx = split(dataset, config.split_seed, config.train_fraction)
    return dataset.subset(idx.train_ids), dataset.subset(idx.test_ids)


# subcommands


def cmd_synth_data(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.count == 0:
        logger.warning("count is 0; writing an empty dataset")
    ds = synthesize_dataset(DatasetConfig(seed=config.seed, count=args.count, scheme=config.scheme))
    path = in_out_dir(config, args.output or config.dataset)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        save_scenes(path, ds)
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc
    counts = Counter(s.label for s in ds.scenes)
    print(f"wrote {len(ds)} scenes to {path}")
    for label in config.scheme.subcategories():
        print(f"  {label.room_type.value}:{label.dim_category}  {counts.get(label, 0)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, _ = _split_dataset(_load_dataset(config), config)
    if len(train_set) == 0:
        raise DatasetError("training split is empty")
    state = TrainingState.initialize(config)
    data = prepare_dataset(train_set, state)
    (out / "config.toml").write_text(dump_config(config), encoding="utf-8")
    csv_path = out / LOSS_CSV
    try:
        for epoch in range(1, config.epochs + 1):
            means = train_epoch(state, data)
            logger.info("epoch %d %s", epoch, " ".join(f"{k}={v:.4f}" for k, v in means.items()))
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                state.save(out / f"checkpoint_epoch{epoch:04d}.lfck")
    except DivergenceError as exc:
        # parameters were not updated by the failing step
        state.save(out / "checkpoint_partial.lfck")
        csv_path.write_text(history_csv(state.history), encoding="utf-8")
        raise exc
    state.save(out / FINAL_CHECKPOINT)
    csv_path.write_text(history_csv(state.history), encoding="utf-8")
    print(f"trained {config.epochs} epochs ({state.step} steps) on {len(data)} scenes; checkpoint {out / FINAL_CHECKPOINT}")
    return EXIT_OK


def _load_state(config: RunConfig, checkpoint) -> TrainingState:
    path = in_out_dir(config, checkpoint or FINAL_CHECKPOINT)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    return TrainingState.load(path, config)


def _layout_boxes(scene):
    return [(f.category_id, furniture_footprint(f)) for f in scene.layout]


def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    label = _parse_label(args.label, config)
    if args.count < 0:
        raise ConfigError("count must be non-negative")
    state = _load_state(config, args.checkpoint)
    out = in_out_dir(config, args.output)
    out.mkdir(parents=True, exist_ok=True)
    for index in range(args.count):
        gen = generate(state, label, seed=config.seed, index=index)
        sid = gen.scene.scene_id
        save_scenes(out / f"{sid}.json", Dataset([gen.scene], FURNITURE_CATEGORIES, {sid: gen.degenerate}))
        save_image(render_image(gen.plan_raster), out / f"{sid}_plan.ppm")
        plan_raster = rasterize_floorplan(gen.scene.floor_plan, config.resolution, config.frame)
        save_image(render_image(plan_raster, _layout_boxes(gen.scene)), out / f"{sid}_layout.ppm")
        print(f"{sid} items={len(gen.scene.layout)}" + (" degenerate" if gen.degenerate else ""))
    return EXIT_OK


def evaluate_layouts(generated, test: Dataset) -> EvaluationReport:
    modes: dict[str, list[float]] = {t.value: [] for t in RoomType}
    ious: dict[str, list[float]] = {t.value: [] for t in RoomType}
    for layout, scene in zip(generated, test.scenes):
        if not scene.layout:
            continue
        key = scene.label.room_type.value
        modes[key].append(mode_accuracy([layout], [scene.layout]))
        ious[key].append(layout_iou(layout, scene.layout))
    return aggregate(modes, ious)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.workers < 1:
        raise ConfigError("workers must be >= 1")
    _, test = _split_dataset(_load_dataset(config), config)
    if len(test) == 0:
        raise DatasetError("test split is empty")
    if args.ground_truth:
        generated = [list(s.layout) for s in test.scenes]
    else:
        state = _load_state(config, args.checkpoint)
        items = prepare_dataset(test, state)
        if args.workers > 1:
            # map keeps input order, so the report does not depend on scheduling
            with ThreadPoolExecutor(args.workers) as pool:
                generated = list(pool.map(lambda item: predict_layout(state, item), items))
        else:
            generated = [predict_layout(state, item) for item in items]
    report = evaluate_layouts(generated, test)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.name}.json").write_text(report.to_json(), encoding="utf-8")
    table = report.to_table()
    (out / f"{args.name}.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    ds = _load_dataset(config, args.input)
    wanted = set(args.scene_id or [])
    out = in_out_dir(config, args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for scene in ds.scenes:
        if wanted and scene.scene_id not in wanted:
            continue
        plan = rasterize_floorplan(scene.floor_plan, config.resolution, config.frame)
        save_image(render_image(plan, _layout_boxes(scene), scale=args.scale), out / f"{scene.scene_id}_layout.{args.format}")
        written += 1
    missing = wanted - {s.scene_id for s in ds.scenes}
    if missing:
        raise DatasetError(f"scene ids not in dataset: {sorted(missing)}")
    print(f"rendered {written} scenes to {out}")
    return EXIT_OK


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat TOML config file; flags override its values")
    common.add_argument("--seed", type=int, help=f"root seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--out-dir", help="directory all relative paths resolve against")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="layoutforge", description="Room plan and furniture layout generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="write a synthetic labelled dataset")
    p.add_argument("--count", type=int, default=300)
    p.add_argument("--output", help="dataset file (default: config 'dataset')")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[common], help="train the three stages jointly")
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--metric", choices=("l1", "l2"))
    p.add_argument("--lambda-adv", type=float, nargs=3, metavar=("L1", "L2", "L3"))
    p.add_argument("--checkpoint-every", type=int, help="also checkpoint every N epochs")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--detach-stages", action="store_true", help="stop gradients between stages")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample scenes for a room label")
    p.add_argument("--checkpoint", help=f"default: {FINAL_CHECKPOINT}")
    p.add_argument("--label", required=True, help="ROOM:INDEX, e.g. bedroom:1")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--output", default="generated")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="score held-out scenes")
    p.add_argument("--checkpoint", help=f"default: {FINAL_CHECKPOINT}")
    p.add_argument("--dataset")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--ground-truth", action="store_true", help="score ground truth against itself")
    p.add_argument("--name", default="report", help="basename of the report files")
    p.add_argument("--workers", type=int, default=1, help="scenes scored concurrently")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=[common], help="draw dataset scenes as images")
    p.add_argument("--input", help="scene file (default: config 'dataset')")
    p.add_argument("--scene-id", type=int, action="append")
    p.add_argument("--output", default="renders")
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")
    p.add_argument("--scale", type=int, default=8)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LayoutForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
