"""End-to-end acceptance checks.

Each test carries a ``criterion`` marker; the verdicts are printed as one
PASS/FAIL line per criterion at the end of the run.  The training
reproductions (5, 6, 7) are marked ``slow`` and take most of the wall time.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from threadpoolctl import threadpool_limits

from tstkit import tensor as T
from tstkit.checkpoint import load_checkpoint, save_checkpoint
from tstkit.cli import SUPERVISED, UNSUPERVISED
from tstkit.data import (
    Dataset,
    Sample,
    compute_norm_stats,
    normalize_dataset,
    parse_archive,
    split_train_val,
    subset_labels,
)
from tstkit.masking import MaskSpec, generate, make_rng, run_lengths
from tstkit.metrics import ResultsMatrix, avg_rank, avg_rel_diff_from_mean
from tstkit.model import ModelConfig, TSTModel, encode
from tstkit.synthetic import sinusoid_family
from tstkit.train import (
    TrainConfig,
    evaluate,
    impute,
    masked_mse_loss,
    model_for_task,
    pretrain,
    supervised_loss,
    train_supervised,
)

from discrete_ks import discrete_ks
from gradcheck import check_grads

DATA = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture(autouse=True)
def single_thread():
    with threadpool_limits(limits=1):
        yield


# -- 1 ----------------------------------------------------------------------------------------------
GRAD_CASES = [
    # (norm, head, n_out, projection)
    ("batch", "reconstruction", 0, "linear"),
    ("layer", "reconstruction", 0, "linear"),
    ("batch", "classification", 3, "linear"),
    ("layer", "regression", 2, "linear"),
    ("batch", "regression", 1, "conv"),
]


@pytest.mark.criterion(1, "gradient correctness of every parameterized layer")
def test_gradients_every_layer():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for k, (norm, head, n_out, projection) in enumerate(GRAD_CASES):
        B, w, m = int(rng.integers(2, 4)), int(rng.integers(3, 7)), int(rng.integers(1, 5))
        d_model, n_heads = [(4, 2), (8, 2), (8, 4), (6, 3)][int(rng.integers(4))]
        extra = dict(conv_kernel=2) if projection == "conv" else {}
        cfg = ModelConfig(m=m, w=w, d_model=d_model, n_heads=n_heads, n_blocks=int(rng.integers(1, 3)),
                          d_ff=int(rng.integers(4, 9)), dropout=0.0, norm=norm, head=head, n_out=n_out,
                          projection=projection, **extra)
        model = TSTModel(cfg, seed=k)
        x = rng.normal(size=(B, w, m))
        lengths = sorted(rng.integers(1, w + 1, size=B).tolist(), reverse=True)
        lengths[0] = w
        if head == "reconstruction":
            keep = rng.random((B, w, m)) > 0.3
            keep[:, 0, 0] = False
            loss = lambda: masked_mse_loss(model(np.where(keep, x, 0.0), lengths, training=True), x, keep, lengths)
        elif head == "classification":
            y = rng.integers(0, n_out, size=B)
            loss = lambda: supervised_loss(model(x, lengths, training=True), y, head)
        else:
            y = rng.normal(size=(B, n_out))
            loss = lambda: supervised_loss(model(x, lengths, training=True), y, head)
        errs = check_grads(loss, model.params)
        for name, err in errs.items():
            layer = f"{norm}/{name}"
            worst[layer] = max(worst.get(layer, 0.0), err)
    covered = {name.split(".")[0] for name in (n.split("/", 1)[1] for n in worst)}
    assert {"project", "pos", "blocks", "head"} <= covered
    assert any(".attn." in n for n in worst) and any(".ff1." in n for n in worst)
    assert any(n.startswith("batch/") and ".norm1." in n for n in worst)
    assert any(n.startswith("layer/") and ".norm1." in n for n in worst)
    bad = {n: e for n, e in worst.items() if e >= 1e-4}
    assert not bad, bad
    assert time.perf_counter() - t0 < 60


# -- 2 ----------------------------------------------------------------------------------------------
@pytest.mark.criterion(2, "mask statistics and geometric run lengths")
def test_mask_statistics():
    t0 = time.perf_counter()
    w = 100_000
    spec = MaskSpec(r=0.15, lm=3.0)
    bits = generate(w, 4, spec, make_rng(11)).bits
    hidden = [run_lengths(bits[:, j], False) for j in range(bits.shape[1])]
    assert abs((~bits[:, 0]).mean() - 0.15) < 0.01
    assert abs(hidden[0].mean() - 3.0) < 0.15
    _, p = discrete_ks(np.concatenate(hidden), stats.geom(1 / 3))
    assert p > 0.01
    for variant in ("sep_stateful", "sep_bernoulli", "sync_stateful", "sync_bernoulli"):
        frac = (~generate(w, 2, MaskSpec(variant=variant), make_rng(12)).bits).mean()
        assert abs(frac - 0.15) < 0.01, (variant, frac)
    assert time.perf_counter() - t0 < 30


# -- 3 ----------------------------------------------------------------------------------------------
@pytest.mark.criterion(3, "padding invariance in eval mode")
def test_padding_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    w, extra, m = 6, 4, 3
    for norm in ("batch", "layer"):
        long_cfg = ModelConfig(m=m, w=w + extra, d_model=8, n_heads=2, n_blocks=2, d_ff=12, norm=norm)
        model = TSTModel(long_cfg, seed=1)
        for st in model.norm_stats.values():
            st.mean = rng.normal(size=st.mean.shape)
            st.var = rng.uniform(0.5, 2.0, size=st.var.shape)
        short = TSTModel(ModelConfig(**{**long_cfg.__dict__, "w": w}), seed=1)
        short.load_state_dict({k: (v[:w] if k == "pos.weight" else v) for k, v in model.state_dict().items()})

        lengths = [w, 4, 2]
        real = np.broadcast_to(np.arange(w)[None, :, None] < np.array(lengths)[:, None, None], (3, w, m))
        x = np.where(real, rng.normal(size=(3, w, m)), 0.0)
        ref_z = encode(x, lengths, short)[0].data
        ref_out = short(x, lengths).data
        for fill in (0.0, 99.0, None):
            padded = np.zeros((3, w + extra, m))
            padded[:, :w] = x
            pad = ~np.pad(real, ((0, 0), (0, extra), (0, 0)))
            padded[pad] = rng.normal(size=pad.sum()) * 1e3 if fill is None else fill
            z = encode(padded, lengths, model)[0].data[:, :w]
            out = model(padded, lengths).data[:, :w]
            valid = real[..., 0]
            assert np.max(np.abs(z - ref_z)[valid]) < 1e-6
            assert np.max(np.abs(out - ref_out)[valid]) < 1e-6

        cls = TSTModel(ModelConfig(**{**long_cfg.__dict__, "w": w, "head": "classification", "n_out": 4}), seed=2)
        base = cls(x, lengths).data
        for fill in (7.0, -1e4):
            assert np.max(np.abs(cls(np.where(real, x, fill), lengths).data - base)) < 1e-6
    assert time.perf_counter() - t0 < 10


# -- 4 ----------------------------------------------------------------------------------------------
@pytest.mark.criterion(4, "masked-loss locality")
def test_masked_loss_locality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    for _ in range(50):
        B, w, m = int(rng.integers(1, 5)), int(rng.integers(2, 12)), int(rng.integers(1, 5))
        lengths = np.sort(rng.integers(1, w + 1, size=B))[::-1].tolist()
        x, x_hat = rng.normal(size=(2, B, w, m))
        keep = rng.random((B, w, m)) > 0.3
        keep[:, 0, 0] = False
        base = masked_mse_loss(T.Tensor(x_hat), x, keep, lengths).item()
        valid = np.arange(w)[None, :, None] < np.array(lengths)[:, None, None]
        for outside in (keep & valid, ~valid, keep | ~valid):
            noisy = np.where(outside, rng.normal(size=x_hat.shape) * 1e6, x_hat)
            assert masked_mse_loss(T.Tensor(noisy), x, keep, lengths).item() == base
    assert time.perf_counter() - t0 < 5


# -- 8 ----------------------------------------------------------------------------------------------
@pytest.mark.criterion(8, "metrics oracle on the regression RMSE table")
def test_results_table_oracle():
    R = ResultsMatrix.from_csv(DATA / "regression_rmse_table.csv")
    rel = avg_rel_diff_from_mean(R)
    assert abs(rel[R.models.index("TST-pretrained")] - (-0.303)) <= 0.005
    merged = R.merge_models(["TST-supervised", "TST-pretrained"], "TST")
    assert avg_rank(merged)[merged.models.index("XGBoost")] == 3.5


# -- 9 ----------------------------------------------------------------------------------------------
@pytest.mark.criterion(9, "determinism, checkpoint round-trip and resume")
def test_determinism_and_persistence(tmp_path):
    ds = sinusoid_family(12, w=16, m=3, seed=9, min_length=10)
    mc = ModelConfig(m=3, w=16, d_model=8, n_heads=2, n_blocks=2, d_ff=16)
    cfg = TrainConfig(epochs=4, batch_size=5, seed=7)
    a, b = pretrain(ds, mc, cfg), pretrain(ds, mc, cfg)
    assert a.losses() == b.losses()

    save_checkpoint(a.last, tmp_path / "a.tstk")
    back = load_checkpoint(tmp_path / "a.tstk")
    x = np.random.default_rng(0).normal(size=(3, 16, 3))
    assert np.array_equal(a.last.build_model()(x, [16, 12, 5]).data, back.build_model()(x, [16, 12, 5]).data)

    half = pretrain(ds, mc, TrainConfig(epochs=2, batch_size=5, seed=7))
    save_checkpoint(half.last, tmp_path / "half.tstk")
    resumed = pretrain(ds, mc, cfg, resume=load_checkpoint(tmp_path / "half.tstk"))
    assert resumed.losses() == a.losses()
    assert all(np.array_equal(resumed.last.params[k], a.last.params[k]) for k in a.last.params)

    reg = model_for_task(mc, "regression", 1)
    s1 = train_supervised(ds, reg, cfg, init=a.last)
    s2 = train_supervised(ds, reg, cfg, init=back)
    assert s1.losses() == s2.losses()


# -- 10 ---------------------------------------------------------------------------------------------
@pytest.mark.criterion(10, "normalization centring and recorded mode")
def test_normalization(tmp_path):
    rng = np.random.default_rng(10)
    samples = [Sample(rng.normal(loc=[1e3, -5.0, 0.01], scale=[50.0, 2.0, 1e-3], size=(int(n), 3)), np.array([0.0]))
               for n in rng.integers(5, 30, size=40)]
    ds = Dataset(samples, "offsets", task="regression")
    for mode in ("variance", "stddev"):
        norm = compute_norm_stats(ds, mode)
        pooled = np.concatenate([s.series for s in normalize_dataset(ds, norm).samples])
        assert np.all(np.abs(pooled.mean(axis=0)) < 1e-10)
        if mode == "stddev":
            np.testing.assert_allclose(pooled.std(axis=0), 1.0, rtol=1e-9)
        res = pretrain(ds, ModelConfig(m=3, w=30, d_model=8, n_heads=2, n_blocks=1, d_ff=8),
                       TrainConfig(epochs=1, batch_size=20, norm_mode=mode))
        save_checkpoint(res.last, tmp_path / f"{mode}.tstk")
        assert load_checkpoint(tmp_path / f"{mode}.tstk").norm.mode == mode


# -- 5 ----------------------------------------------------------------------------------------------
def _jv_config(table, head, n_out=0, w=29):
    n_blocks, n_heads, d_model, d_ff = table["JapaneseVowels"]
    return ModelConfig(m=12, w=w, n_blocks=n_blocks, n_heads=n_heads, d_model=d_model, d_ff=d_ff,
                       head=head, n_out=n_out, dtype="float32")


@pytest.mark.slow
@pytest.mark.criterion(5, "JapaneseVowels supervised and pretrain-then-finetune")
def test_japanese_vowels_reproduction():
    t0 = time.process_time()
    train = parse_archive(DATA / "JapaneseVowels" / "JapaneseVowels_TRAIN.ts")
    test = parse_archive(DATA / "JapaneseVowels" / "JapaneseVowels_TEST.ts")
    assert (len(train), len(test), train.m, train.n_classes) == (270, 370, 12, 9)
    w = max(train.max_length, test.max_length)
    fit, val = split_train_val(train, 0.8, seed=0)

    def test_accuracy(res):
        report = evaluate(res.model("best"), normalize_dataset(test, res.best.norm), "classification")
        return report.metrics["accuracy"]

    sup, ft = [], []
    for seed in (0, 1, 2):
        cfg = TrainConfig(epochs=100, batch_size=32, seed=seed)
        s = train_supervised(fit, _jv_config(SUPERVISED, "classification", 9, w), cfg, val=val)
        p = pretrain(train, _jv_config(UNSUPERVISED, "reconstruction", w=w), cfg)
        assert all(np.isfinite(p.losses()))
        f = train_supervised(fit, _jv_config(UNSUPERVISED, "classification", 9, w), cfg, init=p.last, val=val)
        sup.append(test_accuracy(s))
        ft.append(test_accuracy(f))
        print(f"seed {seed}: supervised {sup[-1]:.4f}  pretrained {ft[-1]:.4f}")
    minutes = (time.process_time() - t0) / 60
    print(f"mean supervised {np.mean(sup):.4f}  mean pretrained {np.mean(ft):.4f}  ({minutes:.1f} CPU-min)")
    assert np.mean(sup) >= 0.95
    assert np.mean(ft) >= np.mean(sup) - 0.01
    assert minutes < 60


# -- 6 ----------------------------------------------------------------------------------------------
def _small_config(w, m, head, n_out=0, d_model=32):
    return ModelConfig(m=m, w=w, n_blocks=2, n_heads=4, d_model=d_model, d_ff=2 * d_model,
                       head=head, n_out=n_out, dtype="float32")


@pytest.mark.slow
@pytest.mark.criterion(6, "pretraining helps when labels are scarce")
def test_pretraining_with_scarce_labels():
    t0 = time.process_time()
    w, m = 24, 4
    sup, ft = [], []
    for seed in range(5):
        full = sinusoid_family(2000, w=w, m=m, seed=seed, noise=0.1)
        val = sinusoid_family(500, w=w, m=m, seed=1000 + seed, noise=0.1)
        labeled = subset_labels(full, 0.2, seed=seed)
        assert len(labeled.labeled()) == 400
        cfg = TrainConfig(epochs=200, batch_size=32, seed=seed)

        def val_rmse(res):
            return evaluate(res.model("best"), normalize_dataset(val, res.best.norm), "regression").metrics["rmse"]

        s = train_supervised(labeled, _small_config(w, m, "regression", 1), cfg, val=val)
        p = pretrain(full, _small_config(w, m, "reconstruction"), TrainConfig(epochs=60, batch_size=32, seed=seed))
        f = train_supervised(labeled, _small_config(w, m, "regression", 1), cfg, init=p.last, val=val)
        sup.append(val_rmse(s))
        ft.append(val_rmse(f))
        print(f"seed {seed}: supervised {sup[-1]:.5f}  pretrained {ft[-1]:.5f}")
    minutes = (time.process_time() - t0) / 60
    print(f"mean supervised {np.mean(sup):.5f}  mean pretrained {np.mean(ft):.5f}  ({minutes:.1f} CPU-min)")
    assert np.mean(ft) <= np.mean(sup)
    assert minutes < 30


# -- 7 ----------------------------------------------------------------------------------------------
@pytest.mark.slow
@pytest.mark.criterion(7, "imputation of masked values on held-out sinusoids")
def test_imputation_on_held_out_split():
    t0 = time.process_time()
    w, m = 32, 8
    train = sinusoid_family(256, w=w, m=m, seed=0)
    held_out = sinusoid_family(64, w=w, m=m, seed=1)
    res = pretrain(train, _small_config(w, m, "reconstruction", d_model=64),
                   TrainConfig(epochs=400, batch_size=32, seed=0))
    model = res.model("last")
    out = impute(model, held_out, res.last.norm)
    report = evaluate(model, normalize_dataset(held_out, res.last.norm), "reconstruction")
    minutes = (time.process_time() - t0) / 60
    print(f"held-out masked RMSE {out.masked_rmse:.4f} (data units, {out.n_masked} cells), "
          f"normalized masked MSE {report.metrics['masked_mse']:.4f}  ({minutes:.1f} CPU-min)")
    assert out.masked_rmse < 0.1
    assert minutes < 10
