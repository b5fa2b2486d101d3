"""Does pretraining on all series help when only a fifth of them carry labels?

Regresses the frequency of noisy multivariate sinusoids.  The supervised
model sees only the 400 labelled series; the pretrained one first learns to
fill in masked values on all 2000, then fine-tunes on the same 400.

    python demos/label_scarcity.py --seeds 0 1 2 3 4
"""

import argparse
import time

from tstkit.data import normalize_dataset, subset_labels
from tstkit.model import ModelConfig
from tstkit.synthetic import sinusoid_family
from tstkit.train import TrainConfig, evaluate, pretrain, train_supervised


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--label-fraction", type=float, default=0.2)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--pretrain-epochs", type=int, default=60)
    args = ap.parse_args()

    w, m = 24, 4

    def config(head, n_out=0):
        return ModelConfig(m=m, w=w, n_blocks=2, n_heads=4, d_model=32, d_ff=64, head=head, n_out=n_out,
                           dtype="float32")

    for seed in args.seeds:
        t0 = time.time()
        full = sinusoid_family(args.n, w=w, m=m, seed=seed, noise=0.1)
        val = sinusoid_family(500, w=w, m=m, seed=1000 + seed, noise=0.1)
        labeled = subset_labels(full, args.label_fraction, seed=seed)
        cfg = TrainConfig(epochs=args.epochs, batch_size=32, seed=seed)

        def rmse(res):
            return evaluate(res.model("best"), normalize_dataset(val, res.best.norm), "regression").metrics["rmse"]

        sup = train_supervised(labeled, config("regression", 1), cfg, val=val)
        pre = pretrain(full, config("reconstruction"), TrainConfig(epochs=args.pretrain_epochs, batch_size=32, seed=seed))
        ft = train_supervised(labeled, config("regression", 1), cfg, init=pre.last, val=val)
        print(f"seed {seed}: val RMSE supervised {rmse(sup):.5f}, pretrained {rmse(ft):.5f}  "
              f"[{time.time() - t0:.0f} s]")


if __name__ == "__main__":
    main()
