"""Seeded synthetic time-tag streams for testing the analysis chain."""
from dataclasses import dataclass

import numpy as np

from .analysis import PS
from .model import CrosstalkMatrix
from .tags import DET1, DET2, SYNC, TimeTags

__all__ = ["EmissionModel", "iter_synthetic_tags", "generate_synthetic_tags"]

_CHUNK_CYCLES = 8192  # fixed so the stream depends only on the seed


@dataclass(frozen=True)
class EmissionModel:
    """Per-attempt photon sources.

    While ion ``a`` is addressed, ion ``j`` emits with probability
    ``emission_prob[a] * crosstalk[a, j]`` (weak-excitation limit, so the
    emission probability scales with local intensity). Detected photons are
    split between the detectors by ``split``. Dark counts are a homogeneous
    Poisson process of ``dark_rate`` per detector.
    """

    emission_prob: np.ndarray
    crosstalk: CrosstalkMatrix = None
    detection_efficiency: float = 1.0
    dark_rate: float = 0.0  # 1/s per detector
    emission_delay: float = 0.0  # s, exponential time constant
    split: float = 0.5

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.emission_prob, dtype=float))
        object.__setattr__(self, "emission_prob", p)
        if self.crosstalk is None:
            object.__setattr__(self, "crosstalk", CrosstalkMatrix.identity(len(p)))
        elif not isinstance(self.crosstalk, CrosstalkMatrix):
            object.__setattr__(self, "crosstalk", CrosstalkMatrix(self.crosstalk))
        if self.crosstalk.n_ions != len(p):
            raise ValueError("crosstalk matrix size does not match emission_prob")
        probs = p[:, None] * self.crosstalk.matrix
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("emission probabilities must lie in [0, 1]")
        for name in ("detection_efficiency", "split"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.dark_rate < 0 or self.emission_delay < 0:
            raise ValueError("dark_rate and emission_delay must be non-negative")

    @classmethod
    def uniform(cls, n_ions, prob, neighbor_ratios=(), **kw):
        return cls(np.full(n_ions, prob), CrosstalkMatrix.from_neighbor_ratios(n_ions, neighbor_ratios),
                   **kw)

    @property
    def source_probabilities(self):
        return self.emission_prob[:, None] * self.crosstalk.matrix


def _chunk(model, schedule, first_cycle, n_cycles, rng):
    period_ps = int(round(schedule.sync_period * PS))
    offsets_ps = np.rint(schedule.attempt_offsets * PS).astype(np.int64)
    modes = schedule.attempt_modes
    if model.emission_prob.size < schedule.n_modes:
        raise ValueError("emission model has fewer ions than the schedule has modes")
    starts = (first_cycle + np.arange(n_cycles, dtype=np.int64)) * period_ps
    probs = model.source_probabilities

    times = [starts]
    chans = [np.full(n_cycles, SYNC, np.int8)]
    for off, mode in zip(offsets_ps, modes):
        row = probs[mode]
        for ion in np.flatnonzero(row > 0):
            emitted = rng.random(n_cycles) < row[ion] * model.detection_efficiency
            n = int(emitted.sum())
            if n == 0:
                continue
            t = starts[emitted] + off
            if model.emission_delay > 0:
                t = t + np.rint(rng.exponential(model.emission_delay * PS, n)).astype(np.int64)
            ch = np.where(rng.random(n) < model.split, DET1, DET2).astype(np.int8)
            times.append(t)
            chans.append(ch)
    if model.dark_rate > 0:
        span = n_cycles * period_ps
        for det in (DET1, DET2):
            n = rng.poisson(model.dark_rate * span / PS)
            t = starts[0] + rng.integers(0, span, n, dtype=np.int64)
            times.append(t)
            chans.append(np.full(n, det, np.int8))
    t = np.concatenate(times)
    ch = np.concatenate(chans)
    order = np.lexsort((ch, t))
    return TimeTags(ch[order], t[order])


def iter_synthetic_tags(model, schedule, n_cycles, seed=0):
    """Yield the synthetic stream in time-ordered chunks.

    Photons delayed past a chunk boundary are held back so the concatenated
    stream stays ordered.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    pending = TimeTags.empty()
    period_ps = int(round(schedule.sync_period * PS))
    for first in range(0, n_cycles, _CHUNK_CYCLES):
        n = min(_CHUNK_CYCLES, n_cycles - first)
        part = _chunk(model, schedule, first, n, rng)
        merged = TimeTags.concatenate([pending, part])
        order = np.lexsort((merged.channel, merged.time_ps))
        merged = TimeTags(merged.channel[order], merged.time_ps[order])
        if first + n < n_cycles:
            cut = np.searchsorted(merged.time_ps, (first + n) * period_ps, side="left")
        else:
            cut = len(merged)
        yield TimeTags(merged.channel[:cut], merged.time_ps[:cut])
        pending = TimeTags(merged.channel[cut:], merged.time_ps[cut:])


def generate_synthetic_tags(model, schedule, n_cycles, seed=0):
    return TimeTags.concatenate(iter_synthetic_tags(model, schedule, n_cycles, seed))
