"""Pilot run for planted-structure recovery: train on the default synthetic
dataset and report validation NSE, the argmax of the mean feature
attention, and the inside/outside spatial attention ratio.

Used to calibrate the training settings frozen into the acceptance suite.

    python scripts/pilot_planted.py --seeds 0 1 2 --max-epochs 40
"""

import argparse
import time

import numpy as np

from hydrotrace.grid_pipeline import PipelineConfig, prepare
from hydrotrace.metrics import nse
from hydrotrace.model import HyperParams, extract_attention, init_params
from hydrotrace.synthetic import PlantConfig, generate
from hydrotrace.training import TrainConfig, predict, train


def run_seed(seed, args):
    plant = PlantConfig(seed=args.data_seed)
    gs, oracle = generate(plant)
    ds, plan, _ = prepare(gs, PipelineConfig(seed=seed))
    cfg = TrainConfig(base_lr=args.lr, max_epochs=args.max_epochs,
                      es_patience=args.es_patience, lr_patience=args.lr_patience,
                      seed=seed)
    hyper = HyperParams(channels=ds.inputs.shape[4], kernel_size=args.k,
                        attn_kernel_size=args.ka, base_lr=args.lr)
    p0 = init_params(hyper.channels, hyper, seed=seed)
    t0 = time.perf_counter()
    p_star, hist = train(ds, plan, cfg, p0)
    wall = time.perf_counter() - t0

    val_idx = np.asarray(plan.val_idx)
    y_hat = predict(p_star, ds.inputs, val_idx)
    v_nse = nse((np.asarray(ds.targets)[val_idx], y_hat))

    records = extract_attention(p_star, ds)
    beta_mean = np.mean([r.beta for r in records], axis=0)
    alpha_mean = np.mean([r.alpha.mean(axis=0) for r in records], axis=0)
    r0, c0, rh, rw = plant.planted[0].region
    mask = np.zeros(alpha_mean.shape, dtype=bool)
    mask[r0:r0 + rh, c0:c0 + rw] = True
    ratio = alpha_mean[mask].mean() / alpha_mean[~mask].mean()
    print(f"seed {seed}: epochs={len(hist.records)} wall={wall:.0f}s "
          f"val_nse={v_nse:.3f} beta_argmax={int(np.argmax(beta_mean))} "
          f"beta={np.array2string(beta_mean, precision=3)} ratio={ratio:.3f}")
    return v_nse, int(np.argmax(beta_mean)), ratio


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--ka", type=int, default=3)
    ap.add_argument("--max-epochs", type=int, default=40)
    ap.add_argument("--es-patience", type=int, default=8)
    ap.add_argument("--lr-patience", type=int, default=4)
    args = ap.parse_args()
    for seed in args.seeds:
        run_seed(seed, args)


if __name__ == "__main__":
    main()
