"""Dataset ingestion, normalization, padding and splitting.

Reads the ``.ts`` archive text format used by the UEA/UCR classification and
the Monash regression archives::

    # comment lines
    @problemName JapaneseVowels
    @dimensions 12
    @classLabel true 1 2 3
    @data
    1.0,2.0,3.0:0.5,0.1,0.2:2

Each data line holds one sample: dimensions separated by ``:``, values within
a dimension by ``,``; the trailing field is the label when the header declares
``@classLabel true ...`` or ``@targetLabel true``.  Missing values (``?`` or
``NaN``) are filled by linear interpolation within their dimension, holding the
nearest observed value at the edges.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .masking import make_rng

log = logging.getLogger(__name__)

NORM_MODES = ("variance", "stddev")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class Sample:
    series: np.ndarray  # (length, m)
    label: int | np.ndarray | None = None
    id: str = ""
    missing: np.ndarray | None = None  # (length, m) True where the raw value was absent

    @property
    def length(self) -> int:
        return self.series.shape[0]

    @property
    def m(self) -> int:
        return self.series.shape[1]


@dataclass
class Dataset:
    samples: list[Sample]
    name: str = "dataset"
    class_labels: list[str] | None = None
    task: str | None = None  # "classification", "regression" or None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def m(self) -> int:
        return self.samples[0].m

    @property
    def max_length(self) -> int:
        return max(s.length for s in self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels or ())

    @property
    def n_targets(self) -> int:
        if self.task == "classification":
            return self.n_classes
        for s in self.samples:
            if s.label is not None:
                return int(np.size(s.label))
        return 0

    def labeled(self) -> "Dataset":
        return self.subset([i for i, s in enumerate(self.samples) if s.label is not None])

    def without_labels(self) -> "Dataset":
        return replace(self, samples=[replace(s, label=None) for s in self.samples])

    def subset(self, indices) -> "Dataset":
        return replace(self, samples=[self.samples[i] for i in indices])

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "n": len(self),
            "m": self.m,
            "w": self.max_length,
            "min_length": min(s.length for s in self.samples),
            "task": self.task,
            "classes": self.class_labels,
        }

    def manifest_text(self) -> str:
        return json.dumps(self.manifest(), indent=2)


# -- archive format -------------------------------------------------------------
def _parse_bool(value: str, lineno: int) -> bool:
    v = value.strip().lower()
    if v not in ("true", "false"):
        raise DataError(f"line {lineno}: expected true/false, got {value!r}")
    return v == "true"


def _parse_values(text: str, lineno: int, dim: int) -> np.ndarray:
    out = []
    for pos, token in enumerate(text.split(",")):
        token = token.strip()
        if token in ("?", "") or token.lower() == "nan":
            out.append(math.nan)
            continue
        try:
            out.append(float(token))
        except ValueError:
            raise DataError(
                f"line {lineno}: dimension {dim}, value {pos}: cannot parse {token!r} as a number"
            ) from None
    return np.asarray(out, dtype=np.float64)


def fill_missing(series: np.ndarray) -> np.ndarray:
    """Linear interpolation of NaNs per column, edge values held constant."""
    series = np.array(series, dtype=np.float64)
    t = np.arange(series.shape[0])
    for j in range(series.shape[1]):
        col = series[:, j]
        bad = np.isnan(col)
        if not bad.any():
            continue
        if bad.all():
            raise DataError(f"dimension {j} has no observed values")
        col[bad] = np.interp(t[bad], t[~bad], col[~bad])
    return series


def parse_archive(path) -> Dataset:
    """Read a ``.ts`` archive file into a :class:`Dataset`."""
    path = Path(path)
    name = path.stem.rsplit("_", 1)[0]
    class_labels: list[str] | None = None
    has_target = False
    declared_dims: int | None = None
    samples: list[Sample] = []
    in_data = False
    m: int | None = None

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data:
                if not line.startswith("@"):
                    raise DataError(f"line {lineno}: expected a header directive before @data")
                key, _, rest = line[1:].partition(" ")
                key = key.lower()
                rest = rest.strip()
                if key == "problemname":
                    name = rest
                elif key == "timestamps":
                    if _parse_bool(rest, lineno):
                        raise DataError(f"line {lineno}: timestamped series are not supported")
                elif key == "dimensions":
                    declared_dims = int(rest)
                elif key == "classlabel":
                    flag, _, labels = rest.partition(" ")
                    if _parse_bool(flag, lineno):
                        class_labels = labels.split()
                        if not class_labels:
                            raise DataError(f"line {lineno}: @classLabel true without any labels")
                elif key == "targetlabel":
                    has_target = _parse_bool(rest, lineno)
                elif key == "data":
                    in_data = True
                # other directives (univariate, equallength, serieslength, missing) are informational
                continue

            fields = line.split(":")
            label = None
            if class_labels is not None or has_target:
                if len(fields) < 2:
                    raise DataError(f"line {lineno}: missing label field")
                token = fields.pop().strip()
                if class_labels is not None:
                    if token not in class_labels:
                        raise DataError(
                            f"line {lineno}: class label {token!r} not declared in header {class_labels}"
                        )
                    label = class_labels.index(token)
                else:
                    try:
                        label = np.array([float(token)])
                    except ValueError:
                        raise DataError(f"line {lineno}: cannot parse target value {token!r}") from None
            dims = [_parse_values(f, lineno, j) for j, f in enumerate(fields)]
            if m is None:
                m = len(dims)
                if declared_dims is not None and m != declared_dims:
                    raise DataError(f"line {lineno}: header declares {declared_dims} dimensions, found {m}")
            elif len(dims) != m:
                raise DataError(f"line {lineno}: expected {m} dimensions, found {len(dims)}")
            lengths = {len(d) for d in dims}
            if len(lengths) != 1:
                raise DataError(f"line {lineno}: dimensions have unequal lengths {sorted(lengths)}")
            series = np.stack(dims, axis=1)
            missing = None
            if np.isnan(series).any():
                missing = np.isnan(series)
                try:
                    series = fill_missing(series)
                except DataError as exc:
                    raise DataError(f"line {lineno}: {exc}") from None
            samples.append(Sample(series, label, id=f"{name}:{len(samples)}", missing=missing))

    if not samples:
        raise DataError(f"{path}: no samples found")
    task = "classification" if class_labels is not None else "regression" if has_target else None
    return Dataset(samples, name=name, class_labels=class_labels, task=task)


def write_archive(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the archive format; floats use shortest round-trip repr."""
    lines = [f"@problemName {dataset.name}", "@timeStamps false", f"@dimensions {dataset.m}",
             f"@univariate {'true' if dataset.m == 1 else 'false'}"]
    if dataset.task == "classification":
        lines.append("@classLabel true " + " ".join(dataset.class_labels))
    elif dataset.task == "regression":
        lines.append("@targetLabel true")
    else:
        lines.append("@classLabel false")
    lines.append("@data")
    for s in dataset.samples:
        body = ":".join(",".join(repr(float(v)) for v in s.series[:, j]) for j in range(s.m))
        if dataset.task == "classification":
            body += ":" + dataset.class_labels[int(s.label)]
        elif dataset.task == "regression":
            body += ":" + repr(float(np.ravel(s.label)[0]))
        lines.append(body)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_csv_long(path, label_column: str | None = None) -> Dataset:
    """Fallback reader for long-format CSV: columns ``id, t, <variables...>[, label]``.

    Rows are grouped by ``id`` and sorted by ``t``; a label column, if named,
    must be constant within each id and is treated as a regression target.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["id", "t"]:
            raise DataError(f"{path}: first two CSV columns must be 'id' and 't'")
        var_cols = [c for c in reader.fieldnames[2:] if c != label_column]
        rows: dict[str, list] = {}
        labels: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                values = [float(row[c]) if row[c] not in ("", "?") else math.nan for c in var_cols]
                rows.setdefault(row["id"], []).append((float(row["t"]), values))
                if label_column:
                    labels[row["id"]] = float(row[label_column])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    samples = []
    for sid, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        series = np.array([v for _, v in entries], dtype=np.float64)
        missing = np.isnan(series) if np.isnan(series).any() else None
        if missing is not None:
            series = fill_missing(series)
        label = np.array([labels[sid]]) if label_column else None
        samples.append(Sample(series, label, id=sid, missing=missing))
    return Dataset(samples, name=Path(path).stem, task="regression" if label_column else None)


# -- normalization ----------------------------------------------------------------
@dataclass
class NormStats:
    mean: np.ndarray
    var: np.ndarray
    mode: str = "stddev"

    def __post_init__(self):
        if self.mode not in NORM_MODES:
            raise ValueError(f"normalization mode must be one of {NORM_MODES}, got {self.mode!r}")

    @property
    def scale(self) -> np.ndarray:
        return self.var if self.mode == "variance" else np.sqrt(self.var)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["var"], dtype=np.float64), d["mode"])


def compute_norm_stats(train: Dataset, mode: str = "stddev", min_var: float = 1e-8) -> NormStats:
    """Per-dimension mean/variance pooled over every time step of every sample."""
    stacked = np.concatenate([s.series for s in train.samples], axis=0)
    mean = stacked.mean(axis=0)
    var = np.maximum(((stacked - mean) ** 2).mean(axis=0), min_var)
    return NormStats(mean, var, mode)


def normalize(sample: Sample, stats: NormStats, mode: str | None = None) -> Sample:
    """``(x - mean) / var`` in 'variance' mode, ``(x - mean) / sqrt(var)`` in 'stddev' mode."""
    mode = mode or stats.mode
    scale = stats.var if mode == "variance" else np.sqrt(stats.var)
    if mode not in NORM_MODES:
        raise ValueError(f"normalization mode must be one of {NORM_MODES}, got {mode!r}")
    return replace(sample, series=(sample.series - stats.mean) / scale)


def normalize_dataset(dataset: Dataset, stats: NormStats) -> Dataset:
    return replace(dataset, samples=[normalize(s, stats) for s in dataset.samples])


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * stats.scale + stats.mean


# -- batching -------------------------------------------------------------------------
@dataclass
class Batch:
    x: np.ndarray  # (B, w, m)
    lengths: np.ndarray  # (B,)
    labels: list = field(default_factory=list)
    ids: list[str] = field(default_factory=list)
    indices: np.ndarray | None = None  # positions in the source dataset

    @property
    def valid(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.lengths[:, None]


def pad_and_batch(samples, w: int, pad_fill: float = 0.0, dtype=np.float64, indices=None) -> Batch:
    """Stack samples into a (B, w, m) array, padding or truncating to ``w`` steps."""
    samples = list(samples)
    m = samples[0].m
    x = np.full((len(samples), w, m), pad_fill, dtype=dtype)
    lengths = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.m != m:
            raise DataError(f"sample {s.id!r} has {s.m} dimensions, expected {m}")
        n = s.length
        if n > w:
            log.warning("sample %s has length %d > w=%d; truncating", s.id, n, w)
            n = w
        x[i, :n] = s.series[:n]
        lengths[i] = n
    return Batch(x, lengths, [s.label for s in samples], [s.id for s in samples],
                 None if indices is None else np.asarray(indices))


def iter_batches(dataset: Dataset, batch_size: int, w: int, rng: np.random.Generator | None = None,
                 dtype=np.float64):
    """Yield batches in shuffled (``rng`` given) or original order."""
    order = np.arange(len(dataset)) if rng is None else rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield pad_and_batch([dataset.samples[i] for i in idx], w, dtype=dtype, indices=idx)


# -- splitting -------------------------------------------------------------------------
def _strata(dataset: Dataset) -> dict:
    if dataset.task == "classification" and all(s.label is not None for s in dataset.samples):
        groups: dict = {}
        for i, s in enumerate(dataset.samples):
            groups.setdefault(int(s.label), []).append(i)
        return groups
    return {None: list(range(len(dataset)))}


def split_train_val(train: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random (class-stratified when labelled) split into ``ratio`` / ``1 - ratio`` parts."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    rng = make_rng(seed, 0x5117)
    train_idx, val_idx = [], []
    for _, idx in sorted(_strata(train).items(), key=lambda kv: (kv[0] is None, kv[0])):
        idx = np.asarray(idx)[rng.permutation(len(idx))]
        n_val = int(round((1.0 - ratio) * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        val_idx.extend(idx[:n_val].tolist())
        train_idx.extend(idx[n_val:].tolist())
    return train.subset(sorted(train_idx)), train.subset(sorted(val_idx))


def _allocate(total: int, sizes: list[int]) -> list[int]:
    """Largest-remainder split of ``total`` proportional to ``sizes``."""
    n = sum(sizes)
    exact = [total * s / n for s in sizes]
    base = [math.floor(e) for e in exact]
    rest = total - sum(base)
    for i in sorted(range(len(sizes)), key=lambda i: base[i] - exact[i])[:rest]:
        base[i] += 1
    return base


def subset_labels(train: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Keep labels on a stratified random ``fraction`` of samples; strip the rest.

    All samples are retained, so the result can still feed unsupervised
    pretraining.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"label fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return train
    rng = make_rng(seed, 0x1abe1)
    strata = sorted(_strata(train).items(), key=lambda kv: (kv[0] is None, kv[0]))
    total = int(round(fraction * len(train)))
    keep: set[int] = set()
    for (_, idx), k in zip(strata, _allocate(total, [len(v) for _, v in strata])):
        chosen = np.asarray(idx)[rng.permutation(len(idx))[:k]]
        keep.update(int(i) for i in chosen)
    samples = [s if i in keep else replace(s, label=None) for i, s in enumerate(train.samples)]
    return replace(train, samples=samples)
