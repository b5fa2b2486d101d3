"""Recompute the summary rows of the regression RMSE comparison table.

    python demos/results_table.py [path/to/table.csv]
"""

import sys
from pathlib import Path

from tstkit.metrics import ResultsMatrix, avg_rank, avg_rel_diff_from_mean, comparison_table

DEFAULT = Path(__file__).resolve().parents[1] / "data" / "regression_rmse_table.csv"


def main():
    R = ResultsMatrix.from_csv(sys.argv[1] if len(sys.argv) > 1 else DEFAULT)
    print(comparison_table(R))

    rel = avg_rel_diff_from_mean(R)
    merged = R.merge_models(["TST-supervised", "TST-pretrained"], "TST")
    ranks = dict(zip(merged.models, avg_rank(merged)))
    print(f"\n{'model':<16} {'rel. diff':>9} {'avg rank':>9}")
    for name, r in zip(R.models, rel):
        rank = ranks.get(name, ranks["TST"])  # both TST variants share the merged rank
        print(f"{name:<16} {r:9.3f} {rank:9.3f}")


if __name__ == "__main__":
    main()
