"""Pretrain on a small synthetic suite with expert views, then evaluate.

Run:  python demos/train_and_evaluate.py [epochs]

A few epochs on 64 scenarios take well under a minute on one core. The numbers
are desk-scale and only meant to show the moving parts.
"""

import sys

import numpy as np

import scenaug.train as T
from scenaug.ingest import build_labeled_dataset
from scenaug.metrics import linear_eval, stability_sweep, stratified_split, zero_shot
from scenaug.synth import generate_suite

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5

suite = generate_suite(64, seed=1)
labels = np.asarray(build_labeled_dataset(suite).class_ids)
print(f"{len(suite)} scenarios, classes {np.bincount(labels).tolist()}")

cfg = T.TrainConfig(epochs=epochs, batch_size=32, seed=0)
for variant in ("baseagt", "exagt"):
    res = T.train(suite, train_cfg=cfg, variant=variant)
    trace = ", ".join(f"{v:.1f}" for v in res.loss_trace)
    print(f"\n{variant}: loss per epoch [{trace}]")

    h = T.embed_dataset(res.model, suite)
    print(f"  zero-shot ACC {zero_shot(h, labels).acc:.3f}")
    tr, te = stratified_split(labels, 0.25, seed=0)
    print(f"  linear probe  {linear_eval(h, labels, tr, te):.3f}")
    for rep in stability_sweep(h, suite, (1, 5, 10)):
        print(f"  k={rep.k:<2} delta speed {rep.delta_velocity:.2f} m/s, "
              f"step {rep.delta_traj_xy:.2f} m, map {rep.delta_map_image:.3f}")
