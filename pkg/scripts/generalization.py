"""Train on a synthetic 90/10 split and track held-out Mode and layout IoU.

    python scripts/generalization.py --epochs 200 --every 20
    python scripts/generalization.py --set lambda_adv1=0 --set lambda_adv2=0 --set lambda_adv3=0
    python scripts/generalization.py --set disc_spectral_bound=0 --csv curve.csv

``--set`` takes any RunConfig key. The untrained baseline is scored first.
"""

import argparse
import csv
import sys
import time

import numpy as np
import tomli

from layoutforge.config import RunConfig
from layoutforge.dataset import DatasetConfig, split, synthesize_dataset
from layoutforge.gan import TrainingState, predict_layout, prepare_dataset, train_epoch
from layoutforge.metrics import layout_iou, mode_accuracy


def score(state, items):
    layouts = [predict_layout(state, it) for it in items]
    truth = [it.scene.layout for it in items]
    return mode_accuracy(layouts, truth), float(np.mean([layout_iou(g, t) for g, t in zip(layouts, truth)]))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenes", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--every", type=int, default=20, help="evaluate every N epochs")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--csv", help="write the learning curve here")
    args = ap.parse_args()

    overrides = {}
    for item in args.set:
        key, _, value = item.partition("=")
        overrides[key] = tomli.loads(f"v = {value}")["v"]
    config = RunConfig().replace(**overrides)
    dataset = synthesize_dataset(DatasetConfig(count=args.scenes, seed=config.seed))
    idx = split(dataset, config.split_seed, config.train_fraction)
    state = TrainingState.initialize(config)
    train = prepare_dataset(dataset.subset(idx.train_ids), state)
    test = prepare_dataset(dataset.subset(idx.test_ids), state)

    rows = []
    mode, iou = score(state, test)
    rows.append((0, mode, iou, *score(state, train[:30]), 0.0))
    print(f"{len(train)} train / {len(test)} test scenes; overrides {overrides or 'none'}")
    print("epoch  test_mode  test_iou  train_mode  train_iou  seconds")
    print(f"{0:5d}  {mode:9.3f}  {iou:8.3f}  {rows[0][3]:10.3f}  {rows[0][4]:9.3f}  {0:7.0f}")
    start = time.perf_counter()
    for epoch in range(1, args.epochs + 1):
        train_epoch(state, train)
        if epoch % args.every == 0 or epoch == args.epochs:
            row = (epoch, *score(state, test), *score(state, train[:30]), time.perf_counter() - start)
            rows.append(row)
            print(f"{row[0]:5d}  {row[1]:9.3f}  {row[2]:8.3f}  {row[3]:10.3f}  {row[4]:9.3f}  {row[5]:7.0f}", flush=True)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "test_mode", "test_iou", "train_mode", "train_iou", "seconds"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
