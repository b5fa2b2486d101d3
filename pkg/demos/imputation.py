"""Pretrain on synthetic sinusoids, then fill in hidden values of unseen series.

    python demos/imputation.py --epochs 400
"""

import argparse
import time

import numpy as np

from tstkit.masking import MaskSpec
from tstkit.model import ModelConfig
from tstkit.synthetic import sinusoid_family
from tstkit.train import TrainConfig, impute, pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    w, m = 32, 8
    train = sinusoid_family(256, w=w, m=m, seed=args.seed)
    held_out = sinusoid_family(64, w=w, m=m, seed=args.seed + 1)
    cfg = ModelConfig(m=m, w=w, d_model=64, n_heads=4, n_blocks=2, d_ff=128, dtype="float32")

    def progress(rec):
        if rec["epoch"] % 50 == 0:
            print(f"epoch {rec['epoch']:4d}  masked MSE {rec['value']:.4f}")

    t0 = time.time()
    res = pretrain(train, cfg, TrainConfig(epochs=args.epochs, batch_size=32, seed=args.seed), on_record=progress)
    print(f"pretrained in {time.time() - t0:.0f} s")

    model = res.model("last")
    for spec in (MaskSpec(seed=123), MaskSpec(variant="forecast", fraction=0.25)):
        out = impute(model, held_out, res.last.norm, spec)
        print(f"{spec.variant:<14} masked RMSE {out.masked_rmse:.4f} over {out.n_masked} hidden values")

    rec = out.records[0]
    hidden = ~np.asarray(rec["keep"], dtype=bool)[:, 0]
    print("\nlast steps of variable 0, sample 0 (truth, prediction):")
    for t in np.flatnonzero(hidden):
        print(f"  t={t:2d}  {rec['truth'][t][0]: .3f}  {rec['prediction'][t][0]: .3f}")


if __name__ == "__main__":
    main()
