"""Parameter and FLOP cost of the RG-SA / HAI ablation variants at x2, 128x128 input.

Variants are pure config changes on RGT-S; only the cost model is evaluated,
no weights are built.

    python3 scripts/ablation_costs.py [--height 128] [--csv out.csv]
"""

import argparse

from rgt.analysis import count_flops
from rgt.config import RGT_S

VARIANTS = {
    "RGT-S": {},
    "w/o Recur": {"recursion_enabled": False},
    "w/o Scale (c_r=1)": {"c_r": 1.0},
    "w/o HAI": {"skip_mode": "none"},
    "w/ Skip": {"skip_mode": "vanilla"},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=128)
    ap.add_argument("--scale", type=int, default=2)
    ap.add_argument("--csv")
    args = ap.parse_args()

    rows = []
    for name, change in VARIANTS.items():
        cfg = RGT_S.variant(scale=args.scale, **change)
        rep = count_flops(cfg, args.height, args.height)
        rows.append((name, rep.total_params / 1e6, rep.total_flops / 1e9))

    width = max(len(r[0]) for r in rows)
    print(f"{'variant':<{width}}  params(M)  flops(G)")
    for name, p, f in rows:
        print(f"{name:<{width}}  {p:9.2f}  {f:8.2f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("variant,params_m,flops_g\n")
            fh.writelines(f"{n},{p:.4f},{f:.4f}\n" for n, p, f in rows)


if __name__ == "__main__":
    main()
