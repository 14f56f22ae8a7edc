#!/usr/bin/env python3
"""Train the shipped boundary models for the 7-joint arm.

One-time job; results land in src/cbfarm/models/.  Rerun with the same
seeds to reproduce the shipped files bit-for-bit.
"""

import pathlib
import sys
import time

import numpy as np

from cbfarm import boundary_learn as bl
from cbfarm import mlp, robots

OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "cbfarm" / "models"

SCA_SEED = 7
JSDF_SEED = 11
WORKSPACE_BOX = ([-1.0, -1.0, -0.1], [1.0, 1.0, 1.2])


def train_sca(model, n_samples=180_000, epochs=500):
    ds = bl.sample_sca_dataset(model, n_samples, boundary_fraction=0.3, seed=SCA_SEED)
    cfg = mlp.TrainConfig(
        loss="softmax_ce", epochs=epochs, batch_size=1024, lr=5e-3,
        momentum=0.9, lr_decay=0.6, decay_every=80,
    )
    t0 = time.time()
    net = bl.train_classifier(ds, hyper=cfg, seed=SCA_SEED, model=model, min_accuracy=0.0)
    print(f"sca trained in {time.time()-t0:.0f}s meta={net.meta}", flush=True)
    return net


def train_jsdf(model, n_samples=240_000, epochs=800):
    ds = bl.sample_jsdf_dataset(model, n_samples, WORKSPACE_BOX, seed=JSDF_SEED, near_fraction=0.65)
    cfg = mlp.TrainConfig(
        loss="mse", epochs=epochs, batch_size=1024, lr=0.15,
        momentum=0.9, lr_decay=0.6, decay_every=110,
    )
    t0 = time.time()
    net = bl.train_jsdf(
        ds, layer_sizes=[10, 160, 160, 96, 7], hyper=cfg, seed=JSDF_SEED, model=model,
        max_rmse=np.inf, output_weight=[1.0, 1.0, 1.0, 1.5, 1.5, 2.0, 2.5],
    )
    print(f"jsdf trained in {time.time()-t0:.0f}s meta={net.meta}", flush=True)
    return net


def main():
    model = robots.seven_dof_arm()
    OUT.mkdir(parents=True, exist_ok=True)
    which = sys.argv[1] if len(sys.argv) > 1 else "both"
    if which in ("sca", "both"):
        net = train_sca(model)
        mlp.save_mlp(net, OUT / "sca_seven_dof.txt")
        print("saved", OUT / "sca_seven_dof.txt", flush=True)
    if which in ("jsdf", "both"):
        net = train_jsdf(model)
        mlp.save_mlp(net, OUT / "jsdf_seven_dof.txt")
        print("saved", OUT / "jsdf_seven_dof.txt", flush=True)


if __name__ == "__main__":
    main()
