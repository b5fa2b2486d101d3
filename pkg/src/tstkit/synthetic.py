"""Synthetic multivariate sinusoid datasets for smoke tests and demos.

Each sample shares one frequency ``f``, phase and amplitude ``a`` across its
``m`` variables; variable ``i`` is shifted by a fixed phase offset
``i * pi / m``.  Hidden values can therefore be recovered both from the
variable's own neighbourhood and from the other variables at the same step.
The regression target is the frequency ``f``.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, Sample
from .masking import make_rng


def sinusoid_family(n: int, w: int = 32, m: int = 8, seed: int = 0, f_range=(0.1, 0.3), a_range=(0.5, 1.5),
                    noise: float = 0.0, min_length: int | None = None, target: str = "frequency") -> Dataset:
    """``n`` samples of length ``w`` (or uniform in ``[min_length, w]``)."""
    rng = make_rng(seed, 0x51_9e)
    offsets = np.linspace(0.0, np.pi, m, endpoint=False)
    samples = []
    for i in range(n):
        f = rng.uniform(*f_range)
        phase = rng.uniform(0.0, 2 * np.pi)
        a = rng.uniform(*a_range)
        length = w if min_length is None else int(rng.integers(min_length, w + 1))
        t = np.arange(length)[:, None]
        x = a * np.sin(f * t + phase + offsets)
        if noise:
            x = x + noise * rng.normal(size=x.shape)
        y = {"frequency": f, "amplitude": a, "product": f * a}[target]
        samples.append(Sample(x, np.array([y]), id=f"syn{seed}:{i}"))
    return Dataset(samples, name="sinusoids", task="regression")
