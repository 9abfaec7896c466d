"""Train matrix FFNs of increasing depth on synthetic digits and print final losses.

Usage: python3 scripts/depth_sweep.py [--epochs N] [--depths 2 10 30] [--skip none|highway|resnet]
"""

import argparse

from matnet.config import parse_config
from matnet.experiments import run_experiment

TEMPLATE = """
[experiment]
kind = ffn-classify
name = depth{depth}
seed = {seed}

[model]
hidden = 20x20
depth = {depth}
skip = {skip}

[data]
n_train = {n_train}
n_val = 200
n_test = 200

[stopping]
epochs = {epochs}
"""


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depths", type=int, nargs="+", default=[2, 10, 30])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--skip", default="none")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for depth in args.depths:
        cfg = parse_config(TEMPLATE.format(depth=depth, seed=args.seed, skip=args.skip,
                                           n_train=args.n_train, epochs=args.epochs))
        s = run_experiment(cfg).summary
        print(f"depth {depth:>3}: {s['epochs']} epochs, best val loss {s['best_val_loss']:.4f}, "
              f"test accuracy {s['test_metric']:.3f}")


if __name__ == "__main__":
    main()
