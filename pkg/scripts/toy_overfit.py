"""Overfit the toy model on five fixed synthetic 16x16 -> 32x32 pairs and log the loss curve.

    python3 scripts/toy_overfit.py [--steps 2000] [--lr 1e-3] [--seed 0] [--csv loss.csv]
"""

import argparse
import time

from rgt.config import TOY
from rgt.data import synthetic_pairs
from rgt.model import init_weights
from rgt.train import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--target", type=float, default=1e-2)
    ap.add_argument("--csv")
    args = ap.parse_args()

    pairs = synthetic_pairs(5, lr_size=16, scale=TOY.scale, seed=args.seed)
    t0 = time.perf_counter()

    def log(step, loss):
        if step % 50 == 0:
            print(f"step {step:5d}  loss {loss:.5f}  {time.perf_counter() - t0:6.1f}s", flush=True)

    losses, _ = overfit(TOY, init_weights(TOY, args.seed), pairs, args.steps, args.lr, args.target, log)
    hit = losses[-1] < args.target
    print(f"{'reached' if hit else 'did not reach'} loss < {args.target} "
          f"({losses[-1]:.5f} after {len(losses)} steps, {time.perf_counter() - t0:.1f}s)")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("step,loss\n")
            fh.writelines(f"{i},{v:.8f}\n" for i, v in enumerate(losses))


if __name__ == "__main__":
    main()
