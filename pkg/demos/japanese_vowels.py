"""JapaneseVowels: supervised training vs. pretraining followed by fine-tuning.

Each seed trains on 80% of the training set, keeps the checkpoint with the
best accuracy on the other 20%, and reports test accuracy.  Pretraining sees
all training series without labels.

    python demos/japanese_vowels.py --seeds 0 1 2
"""

import argparse
import time
from pathlib import Path

from tstkit.cli import SUPERVISED, UNSUPERVISED
from tstkit.data import normalize_dataset, parse_archive, split_train_val
from tstkit.model import ModelConfig
from tstkit.train import TrainConfig, evaluate, pretrain, train_supervised

DATA = Path(__file__).resolve().parents[1] / "data" / "JapaneseVowels"


def config(table, head, n_out, w):
    n_blocks, n_heads, d_model, d_ff = table["JapaneseVowels"]
    return ModelConfig(m=12, w=w, n_blocks=n_blocks, n_heads=n_heads, d_model=d_model, d_ff=d_ff,
                       head=head, n_out=n_out, dtype="float32")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--batch-size", type=int, default=32)
    args = ap.parse_args()

    train = parse_archive(DATA / "JapaneseVowels_TRAIN.ts")
    test = parse_archive(DATA / "JapaneseVowels_TEST.ts")
    print(train.manifest_text())
    w = max(train.max_length, test.max_length)
    fit, val = split_train_val(train, 0.8, seed=0)

    def accuracy(res):
        return evaluate(res.model("best"), normalize_dataset(test, res.best.norm), "classification").metrics["accuracy"]

    for seed in args.seeds:
        t0 = time.time()
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=seed)
        sup = train_supervised(fit, config(SUPERVISED, "classification", 9, w), cfg, val=val)
        pre = pretrain(train, config(UNSUPERVISED, "reconstruction", 0, w), cfg)
        ft = train_supervised(fit, config(UNSUPERVISED, "classification", 9, w), cfg, init=pre.last, val=val)
        print(f"seed {seed}: supervised {accuracy(sup):.4f} (epoch {sup.best.epoch}), "
              f"pretrained {accuracy(ft):.4f} (epoch {ft.best.epoch})  [{time.time() - t0:.0f} s]")


if __name__ == "__main__":
    main()
