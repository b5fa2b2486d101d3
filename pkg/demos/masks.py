"""Draw the noise masks used for pretraining and print their statistics.

    python demos/masks.py --w 100000 --seed 1
"""

import argparse

import numpy as np

from tstkit.masking import VARIANTS, MaskSpec, generate, make_rng, run_lengths


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--w", type=int, default=100_000)
    ap.add_argument("--m", type=int, default=2)
    ap.add_argument("--r", type=float, default=0.15)
    ap.add_argument("--lm", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'variant':<16} {'masked':>8} {'mean run':>9}")
    for variant in VARIANTS:
        spec = MaskSpec(variant=variant, r=args.r, lm=args.lm)
        bits = generate(args.w, args.m, spec, make_rng(args.seed)).bits
        runs = np.concatenate([run_lengths(bits[:, j], False) for j in range(args.m)])
        print(f"{variant:<16} {(~bits).mean():8.4f} {runs.mean():9.3f}")

    # a small picture: '#' marks a hidden value, one row per variable
    small = generate(60, 3, MaskSpec(r=args.r, lm=args.lm), make_rng(args.seed)).bits
    print()
    for j in range(small.shape[1]):
        print("".join("." if b else "#" for b in small[:, j]))


if __name__ == "__main__":
    main()
