"""Evaluation metrics and cross-model comparison statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"prediction and truth sizes differ: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("rmse of an empty set")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def accuracy(pred_classes, truth_classes) -> float:
    pred = np.asarray(pred_classes).ravel()
    truth = np.asarray(truth_classes).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"prediction and truth sizes differ: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(pred == truth))


@dataclass
class ResultsMatrix:
    """Scores of M models (columns) on N datasets (rows)."""

    values: np.ndarray
    datasets: list[str]
    models: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n, m = self.values.shape
        if n < 1 or m < 1:
            raise ValueError("results matrix needs at least one dataset and one model")
        if len(self.datasets) != n or len(self.models) != m:
            raise ValueError("axis names do not match the matrix shape")
        if np.isnan(self.values).any():
            raise ValueError("results matrix has missing entries")

    def merge_models(self, names: list[str], merged_name: str, lower_is_better: bool = True) -> "ResultsMatrix":
        """Replace the columns ``names`` by their per-dataset best score under one name."""
        idx = [self.models.index(n) for n in names]
        pick = np.min if lower_is_better else np.max
        best = pick(self.values[:, idx], axis=1)
        keep = [j for j in range(len(self.models)) if j not in idx]
        values = np.column_stack([self.values[:, keep], best])
        return ResultsMatrix(values, list(self.datasets), [self.models[j] for j in keep] + [merged_name])

    @classmethod
    def from_csv(cls, path) -> "ResultsMatrix":
        """Wide CSV: header ``dataset,<model>,...``, one row per dataset."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        return cls(np.array([[float(v) for v in r[1:]] for r in body]), [r[0] for r in body], header[1:])

    @classmethod
    def from_records(cls, records, metric: str) -> "ResultsMatrix":
        """Build from line records with keys ``dataset``, ``model``, ``metric``, ``value``."""
        cells: dict[tuple[str, str], float] = {}
        datasets: list[str] = []
        models: list[str] = []
        for rec in records:
            if rec.get("metric") != metric:
                continue
            ds, mo = rec["dataset"], rec["model"]
            if ds not in datasets:
                datasets.append(ds)
            if mo not in models:
                models.append(mo)
            cells[ds, mo] = float(rec["value"])
        values = np.full((len(datasets), len(models)), np.nan)
        for (ds, mo), v in cells.items():
            values[datasets.index(ds), models.index(mo)] = v
        return cls(values, datasets, models)


def avg_rel_diff_from_mean(R: ResultsMatrix) -> np.ndarray:
    """Per-model mean over datasets of (score - dataset mean) / dataset mean."""
    row_mean = R.values.mean(axis=1, keepdims=True)
    return ((R.values - row_mean) / row_mean).mean(axis=0)


def avg_rank(R: ResultsMatrix, lower_is_better: bool = True) -> np.ndarray:
    """Per-model average rank across datasets; tied scores share their mean rank."""
    scores = R.values if lower_is_better else -R.values
    ranks = np.vstack([rankdata(row, method="average") for row in scores])
    return ranks.mean(axis=0)


def comparison_table(R: ResultsMatrix, lower_is_better: bool = True, delimiter: str = "\t") -> str:
    """Delimited text: one row per dataset, then the two summary rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["dataset", *R.models])
    for name, row in zip(R.datasets, R.values):
        writer.writerow([name, *(f"{v:.6g}" for v in row)])
    writer.writerow(["avg_rel_diff_from_mean", *(f"{v:.3f}" for v in avg_rel_diff_from_mean(R))])
    writer.writerow(["avg_rank", *(f"{v:.3f}" for v in avg_rank(R, lower_is_better))])
    return buf.getvalue()


def read_records(path) -> list[dict]:
    """Load line-delimited JSON metric records."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out
