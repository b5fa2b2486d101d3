"""Noise masks for masked-value denoising and forecasting.

Mask convention: 1 keeps a value, 0 hides it (the value is replaced by 0 and
becomes a prediction target).

All randomness goes through :func:`make_rng`, which pins numpy's counter-based
``Philox`` bit generator.  Per-sample streams are derived from
``(seed, *keys)`` with :class:`numpy.random.SeedSequence`, so fixtures are
reproducible across runs and platforms and masks for different samples can be
generated independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VARIANTS = ("sep_stateful", "sep_bernoulli", "sync_stateful", "sync_bernoulli", "forecast")


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for the stream identified by ``seed`` and ``keys``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class MaskSpec:
    variant: str = "sep_stateful"
    r: float = 0.15
    lm: float = 3.0
    fraction: float = 0.2  # forecast only
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown mask variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "forecast":
            if not 0.0 < self.fraction < 1.0:
                raise ValueError(f"forecast fraction must be in (0, 1), got {self.fraction}")
        else:
            if not 0.0 < self.r < 1.0:
                raise ValueError(f"masking ratio r must be in (0, 1), got {self.r}")
            if self.lm < 1.0:
                raise ValueError(f"mean masked length must be >= 1, got {self.lm}")

    @property
    def lu(self) -> float:
        """Mean length of unmasked segments."""
        return (1.0 - self.r) / self.r * self.lm

    @property
    def p_m(self) -> float:
        """Transition probability masked -> unmasked."""
        return 1.0 / self.lm

    @property
    def p_u(self) -> float:
        """Transition probability unmasked -> masked."""
        return self.p_m * self.r / (1.0 - self.r)


@dataclass
class NoiseMask:
    bits: np.ndarray  # (w, m) bool, True = keep

    @property
    def masked_index_set(self) -> set[tuple[int, int]]:
        return {(int(t), int(i)) for t, i in zip(*np.nonzero(~self.bits))}

    @property
    def shape(self) -> tuple:
        return self.bits.shape

    def masked_fraction(self) -> float:
        return float(1.0 - self.bits.mean())


def _stateful_column(w: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """One column of the two-state Markov chain, built from alternating runs.

    Run lengths of a two-state chain are geometric with the exit
    probability of each state, so sampling runs is equivalent to stepping the
    chain one time step at a time.
    """
    col = np.ones(w, dtype=bool)
    masked = rng.random() < spec.r
    t = 0
    while t < w:
        run = int(rng.geometric(spec.p_m if masked else spec.p_u))
        if masked:
            col[t:t + run] = False
        t += run
        masked = not masked
    return col


def _bernoulli_column(w: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.random(w) >= spec.r


def gen_sep_stateful(w: int, m: int, spec: MaskSpec, rng: np.random.Generator) -> NoiseMask:
    return NoiseMask(np.stack([_stateful_column(w, spec, rng) for _ in range(m)], axis=1))


def gen_sep_bernoulli(w: int, m: int, spec: MaskSpec, rng: np.random.Generator) -> NoiseMask:
    return NoiseMask(rng.random((w, m)) >= spec.r)


def gen_sync_stateful(w: int, m: int, spec: MaskSpec, rng: np.random.Generator) -> NoiseMask:
    col = _stateful_column(w, spec, rng)
    return NoiseMask(np.repeat(col[:, None], m, axis=1))


def gen_sync_bernoulli(w: int, m: int, spec: MaskSpec, rng: np.random.Generator) -> NoiseMask:
    col = _bernoulli_column(w, spec, rng)
    return NoiseMask(np.repeat(col[:, None], m, axis=1))


def gen_forecast(w: int, m: int, fraction: float) -> NoiseMask:
    """Hide the last ``ceil(fraction * w)`` steps of every variable."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"forecast fraction must be in (0, 1), got {fraction}")
    n_hidden = min(w, math.ceil(fraction * w))
    bits = np.ones((w, m), dtype=bool)
    bits[w - n_hidden:] = False
    return NoiseMask(bits)


_GENERATORS = {
    "sep_stateful": gen_sep_stateful,
    "sep_bernoulli": gen_sep_bernoulli,
    "sync_stateful": gen_sync_stateful,
    "sync_bernoulli": gen_sync_bernoulli,
}


def generate(w: int, m: int, spec: MaskSpec, rng: np.random.Generator | None = None) -> NoiseMask:
    """Dispatch on ``spec.variant``."""
    if spec.variant == "forecast":
        return gen_forecast(w, m, spec.fraction)
    if rng is None:
        rng = make_rng(spec.seed)
    return _GENERATORS[spec.variant](w, m, spec, rng)


def sample_mask(w: int, m: int, spec: MaskSpec, epoch: int, sample_index: int) -> NoiseMask:
    """Mask for one sample in one epoch, drawn from its own derived stream."""
    return generate(w, m, spec, make_rng(spec.seed, epoch, sample_index))


def apply_mask(x: np.ndarray, mask: NoiseMask | np.ndarray) -> np.ndarray:
    bits = mask.bits if isinstance(mask, NoiseMask) else mask
    if bits.shape != x.shape:
        raise ValueError(f"mask shape {bits.shape} does not match input shape {x.shape}")
    return np.where(bits, x, 0).astype(x.dtype, copy=False)


def run_lengths(col: np.ndarray, value: bool = False) -> np.ndarray:
    """Lengths of maximal runs equal to ``value`` in a 1-D boolean array."""
    col = np.asarray(col, dtype=bool)
    hit = np.concatenate([[False], col == value, [False]])
    edges = np.flatnonzero(np.diff(hit.astype(np.int8)))
    return edges[1::2] - edges[::2]


def sliding_windows(length: int, w: int, stride: int) -> list[tuple[int, int]]:
    """(start, stop) of every full window of size ``w`` over a series."""
    if w > length:
        return []
    return [(s, s + w) for s in range(0, length - w + 1, stride)]


def save_mask_text(mask: NoiseMask, path) -> None:
    """Write a mask as whitespace-separated 0/1 rows (one row per time step)."""
    np.savetxt(path, mask.bits.astype(np.int8), fmt="%d")


def load_mask_text(path) -> NoiseMask:
    bits = np.loadtxt(Path(path), dtype=np.int8, ndmin=2)
    if not np.isin(bits, (0, 1)).all():
        raise ValueError(f"{path}: mask fixture must contain only 0 and 1")
    return NoiseMask(bits.astype(bool))
