"""Memorize a single synthetic scene with the adversarial terms switched off.

    python scripts/overfit.py --epochs 500 --scene-seed 0

Prints the three reconstruction losses every 50 epochs, then the plan L1
error, mean per-node box IoU, and the decoded layout's Mode and IoU.
"""

import argparse
import time

import numpy as np

from layoutforge.autodiff import no_grad
from layoutforge.config import RunConfig
from layoutforge.dataset import DatasetConfig, synthesize_dataset
from layoutforge.gan import Batch, TrainingState, predict_layout, prepare_dataset, run_generators, train_epoch
from layoutforge.graph import denormalize_box
from layoutforge.metrics import box_iou, layout_iou, mode_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--scene-seed", type=int, default=0, help="synthesizer seed; the first scene is used")
    ap.add_argument("--metric", choices=("l1", "l2"), default="l2")
    ap.add_argument("--lambda-adv", type=float, default=0.0)
    args = ap.parse_args()

    scene = synthesize_dataset(DatasetConfig(count=1, seed=args.scene_seed)).scenes[0]
    lam = args.lambda_adv
    config = RunConfig(metric=args.metric, lambda_adv1=lam, lambda_adv2=lam, lambda_adv3=lam)
    state = TrainingState.initialize(config)
    data = prepare_dataset([scene], state)
    print(f"scene {scene.scene_id}: {scene.label.room_type.value}:{scene.label.dim_category}, {len(scene.layout)} items")

    start = time.perf_counter()
    for epoch in range(1, args.epochs + 1):
        losses = train_epoch(state, data)
        if epoch == 1 or epoch % 50 == 0:
            print(f"epoch {epoch:4d}  g1 {losses['loss_g1']:.5f}  g2 {losses['loss_g2']:.5f}  g3 {losses['loss_g3']:.5f}")

    batch = Batch.collate(data)
    with no_grad():
        out = run_generators(state.pipeline, batch)
    bounds = scene.floor_plan.bounds
    node_iou = np.mean([box_iou(denormalize_box(p, bounds), denormalize_box(t, bounds)) for p, t in zip(out.boxes.data, batch.boxes)])
    layout = predict_layout(state, data[0])
    print(f"plan L1        {np.abs(out.plan.data - batch.plan).mean():.4f}")
    print(f"node box IoU   {node_iou:.3f}")
    print(f"layout Mode    {mode_accuracy([layout], [scene.layout]):.3f}")
    print(f"layout IoU     {layout_iou(layout, scene.layout):.3f}")
    print(f"elapsed        {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
