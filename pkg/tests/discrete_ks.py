"""One-sample KS test for integer-valued data against a discrete law."""

import numpy as np
from scipy import stats


def discrete_ks(samples, dist) -> tuple[float, float]:
    """(D, p) with D = max_k |ECDF(k) - F(k)| over the support points.

    ``scipy.stats.kstest`` also compares left limits, which for lattice data
    adds the full jump of F at every atom and always rejects.  Using only the
    atoms gives the usual discrete statistic; the Kolmogorov p-value is then
    conservative.
    """
    x = np.sort(np.asarray(samples))
    n = len(x)
    ks = np.arange(x.min(), x.max() + 1)
    ecdf = np.searchsorted(x, ks, side="right") / n
    d = float(np.max(np.abs(ecdf - dist.cdf(ks))))
    return d, float(stats.kstwo.sf(d, n))
