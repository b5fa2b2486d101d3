import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tstkit.data import (
    DataError,
    Dataset,
    NormStats,
    Sample,
    compute_norm_stats,
    fill_missing,
    iter_batches,
    normalize,
    normalize_dataset,
    pad_and_batch,
    parse_archive,
    parse_csv_long,
    split_train_val,
    subset_labels,
    write_archive,
)
from tstkit.model import ModelConfig, TSTModel
from tstkit.synthetic import sinusoid_family
from tstkit.train import evaluate

DATA = Path(__file__).resolve().parents[1] / "data" / "JapaneseVowels"

TWO_SAMPLES = """# tiny fixture
@problemName Tiny
@timeStamps false
@dimensions 2
@classLabel true a b
@data
1.0,2.0,3.0:4.0,5.0,6.0:a
0.5,1.5:2.5,3.5:b
"""


def write(tmp_path, text, name="f.ts"):
    p = tmp_path / name
    p.write_text(text)
    return p


def toy_dataset(n=10, m=2, seed=0, classes=2, lengths=(3, 9)):
    rng = np.random.default_rng(seed)
    samples = [Sample(rng.normal(size=(rng.integers(*lengths), m)) * 3 + 1, i % classes, id=f"s{i}")
               for i in range(n)]
    return Dataset(samples, "toy", [str(c) for c in range(classes)], "classification")


# -- archive parsing ------------------------------------------------------------------------------
def test_parse_two_sample_fixture(tmp_path):
    ds = parse_archive(write(tmp_path, TWO_SAMPLES))
    assert (len(ds), ds.m, ds.task, ds.class_labels) == (2, 2, "classification", ["a", "b"])
    assert [s.length for s in ds] == [3, 2]
    np.testing.assert_array_equal(ds[0].series, [[1, 4], [2, 5], [3, 6]])
    assert [s.label for s in ds] == [0, 1]


def test_undeclared_label_rejected(tmp_path):
    text = TWO_SAMPLES.replace("0.5,1.5:2.5,3.5:b", "0.5,1.5:2.5,3.5:c")
    with pytest.raises(DataError, match="line 8"):
        parse_archive(write(tmp_path, text))


def test_dimension_mismatch_reports_line(tmp_path):
    text = TWO_SAMPLES.replace("0.5,1.5:2.5,3.5:b", "0.5,1.5:b")
    with pytest.raises(DataError, match="line 8"):
        parse_archive(write(tmp_path, text))


def test_bad_number_reports_token(tmp_path):
    text = TWO_SAMPLES.replace("2.0,3.0", "2.0,x3")
    with pytest.raises(DataError, match="line 7.*x3"):
        parse_archive(write(tmp_path, text))


def test_regression_targets_and_missing_values(tmp_path):
    text = "@problemName R\n@dimensions 1\n@targetLabel true\n@data\n1.0,?,3.0,NaN:2.5\n"
    ds = parse_archive(write(tmp_path, text))
    assert ds.task == "regression" and ds.n_targets == 1
    np.testing.assert_array_equal(ds[0].series[:, 0], [1.0, 2.0, 3.0, 3.0])
    np.testing.assert_array_equal(ds[0].missing[:, 0], [False, True, False, True])
    assert float(ds[0].label[0]) == 2.5


def test_fill_missing_edges():
    x = np.array([[np.nan, 1.0], [2.0, np.nan], [np.nan, np.nan], [4.0, 7.0]])
    np.testing.assert_array_equal(fill_missing(x), [[2, 1], [2, 3], [3, 5], [4, 7]])


def test_japanese_vowels_shapes():
    train = parse_archive(DATA / "JapaneseVowels_TRAIN.ts")
    test = parse_archive(DATA / "JapaneseVowels_TEST.ts")
    assert (len(train), train.m, train.n_classes) == (270, 12, 9)
    assert len(test) == 370 and test.m == 12
    assert max(train.max_length, test.max_length) == 29
    assert train.manifest()["n"] == 270


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["classification", "regression"]))
def test_archive_round_trip(seed, task):
    import tempfile

    rng = np.random.default_rng(seed)
    samples = []
    for i in range(4):
        label = i % 3 if task == "classification" else np.array([rng.normal()])
        samples.append(Sample(rng.normal(size=(rng.integers(1, 6), 3)) * 10.0 ** rng.integers(-5, 5), label, f"x{i}"))
    ds = Dataset(samples, "RT", ["p", "q", "r"] if task == "classification" else None, task)
    with tempfile.TemporaryDirectory() as d:
        write_archive(ds, Path(d) / "rt.ts")
        back = parse_archive(Path(d) / "rt.ts")
    for a, b in zip(ds, back):
        assert np.array_equal(a.series, b.series)
        assert np.array_equal(np.asarray(a.label), np.asarray(b.label))


def test_csv_long_fallback(tmp_path):
    p = tmp_path / "long.csv"
    p.write_text("id,t,a,b,y\nu,1,1,10,5\nu,0,0,,5\nv,0,2,20,7\n")
    ds = parse_csv_long(p, label_column="y")
    np.testing.assert_array_equal(ds[0].series, [[0, 10], [1, 10]])
    assert [float(s.label[0]) for s in ds] == [5.0, 7.0]


# -- normalization ---------------------------------------------------------------------------------
def test_norm_stats_examples():
    ds = Dataset([Sample(np.array([[5.0, -1.0], [5.0, 1.0]])), Sample(np.array([[5.0, 1.0], [5.0, -1.0]]))])
    st_ = compute_norm_stats(ds)
    np.testing.assert_array_equal(st_.mean, [5.0, 0.0])
    np.testing.assert_array_equal(st_.var, [1e-8, 1.0])


def test_normalized_training_mean_is_zero():
    ds = toy_dataset(50)
    for mode in ("variance", "stddev"):
        out = normalize_dataset(ds, compute_norm_stats(ds, mode))
        pooled = np.concatenate([s.series for s in out])
        assert np.abs(pooled.mean(axis=0)).max() < 1e-10


def test_normalize_modes():
    stats = NormStats(np.array([1.0]), np.array([4.0]), "stddev")
    s = Sample(np.array([[1.0], [5.0]]))
    assert normalize(s, stats, "variance").series[:, 0].tolist() == [0.0, 1.0]
    assert normalize(s, stats, "stddev").series[:, 0].tolist() == [0.0, 2.0]
    unit = NormStats(np.array([1.0]), np.array([1.0]))
    assert np.array_equal(normalize(s, unit, "variance").series, normalize(s, unit, "stddev").series)
    with pytest.raises(ValueError):
        NormStats(np.zeros(1), np.ones(1), "range")


def test_norm_stats_ignore_test_split():
    train = toy_dataset(20, seed=1)
    a = compute_norm_stats(train)
    _ = toy_dataset(30, seed=2)  # a different test split must not matter
    b = compute_norm_stats(train)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)
    assert NormStats.from_dict(a.to_dict()).mode == "stddev"


# -- batching ---------------------------------------------------------------------------------------
def test_pad_and_batch_examples(caplog):
    full = pad_and_batch([Sample(np.ones((4, 2))), Sample(np.ones((4, 2)))], 4)
    assert full.lengths.tolist() == [4, 4] and full.valid.all()
    short = pad_and_batch([Sample(np.full((1, 2), 7.0))], 4)
    np.testing.assert_array_equal(short.x[0, 1:], 0.0)
    with caplog.at_level(logging.WARNING):
        long = pad_and_batch([Sample(np.arange(12.0).reshape(6, 2), id="long")], 4)
    assert long.lengths.tolist() == [4] and "truncating" in caplog.text


def test_pad_fill_irrelevant_to_loss():
    ds = toy_dataset(6, m=3, seed=3)
    model = TSTModel(ModelConfig(m=3, w=10, d_model=8, n_heads=2, n_blocks=2, d_ff=16, head="classification",
                                 n_out=2))
    b0 = pad_and_batch(ds.samples, 10, pad_fill=0.0)
    b99 = pad_and_batch(ds.samples, 10, pad_fill=99.0)
    out0 = model(b0.x, b0.lengths).data
    out99 = model(b99.x, b99.lengths).data
    assert np.abs(out0 - out99).max() < 1e-6
    assert evaluate(model, ds, "classification").metrics["loss"] >= 0


def test_iter_batches_order_deterministic():
    from tstkit.masking import make_rng

    ds = toy_dataset(25)
    a = [b.ids for b in iter_batches(ds, 8, 9, make_rng(4, 1))]
    b = [b.ids for b in iter_batches(ds, 8, 9, make_rng(4, 1))]
    assert a == b and sum(len(x) for x in a) == 25


# -- splits --------------------------------------------------------------------------------------------
def test_split_balanced_example():
    ds = toy_dataset(10)
    tr, va = split_train_val(ds, 0.8, seed=0)
    assert (len(tr), len(va)) == (8, 2)
    assert {s.label for s in tr} == {0, 1} and {s.label for s in va} == {0, 1}
    assert {s.id for s in tr} | {s.id for s in va} == {s.id for s in ds}
    assert not {s.id for s in tr} & {s.id for s in va}
    assert [s.id for s in split_train_val(ds, 0.8, seed=0)[1]] == [s.id for s in va]
    with pytest.raises(ValueError):
        split_train_val(ds, 1.0)


def _big_regression(n):
    return Dataset([Sample(np.zeros((1, 1)), np.array([float(i)]), f"r{i}") for i in range(n)], task="regression")


def test_subset_labels_counts():
    big = _big_regression(12432)
    assert sum(s.label is not None for s in subset_labels(big, 0.1, seed=0)) == 1243
    assert sum(s.label is not None for s in subset_labels(big, 0.2, seed=0)) == 2486
    assert len(subset_labels(big, 0.1)) == 12432  # unlabeled samples kept for pretraining
    assert subset_labels(big, 1.0) is big


def test_subset_labels_stratified():
    ds = toy_dataset(40, classes=4)
    sub = subset_labels(ds, 0.5, seed=2)
    kept = [s.label for s in sub if s.label is not None]
    assert sorted(kept) == sorted([0, 1, 2, 3] * 5)


def test_sinusoid_family():
    a = sinusoid_family(5, w=20, m=3, seed=4)
    b = sinusoid_family(5, w=20, m=3, seed=4)
    assert len(a) == 5 and a.m == 3 and a.task == "regression"
    assert all(np.array_equal(x.series, y.series) for x, y in zip(a, b))
    f = a[0].label[0]
    assert 0.1 <= f <= 0.3
    # each variable is a pure sinusoid at frequency f: x[t+1] + x[t-1] = 2 cos(f) x[t]
    x = a[0].series
    np.testing.assert_allclose(x[2:] + x[:-2], 2 * np.cos(f) * x[1:-1], atol=1e-12)
    ragged = sinusoid_family(20, w=20, m=2, min_length=8)
    assert {s.length for s in ragged} <= set(range(8, 21)) and len({s.length for s in ragged}) > 1
