"""Temporal-mode assignment, emission profiles and mode-resolved g2.

Every detector tag is placed relative to the most recent sync marker. A
cycle holds ``attempts_per_sync`` addressing windows; attempt ``j`` of cycle
``c`` gets the global index ``c * attempts_per_sync + j``. Coincidences at
mode delay ``k`` pair a detector-1 tag in attempt ``i`` with a detector-2
tag in attempt ``i + k``, counted across cycle boundaries so every delay
sees the same number of opportunities.

Both analyses are streaming folds: feed chunks in time order, read the
result at the end. Results from independent files merge by addition.
"""
from dataclasses import dataclass
import io
import os

import numpy as np

from ..errors import InputError, NumericError
from .tags import DET1, DET2, SYNC, TimeTags, iter_time_tag_chunks

__all__ = [
    "TrialSchedule",
    "TemporalProfile",
    "CorrelationHistogram",
    "ProfileAccumulator",
    "CorrelationAccumulator",
    "bin_temporal_profile",
    "correlation_histogram",
    "PS",
]

PS = 1e12  # picoseconds per second


def _to_ps(seconds):
    return np.rint(np.asarray(seconds, dtype=float) * PS).astype(np.int64)


@dataclass(frozen=True)
class TrialSchedule:
    mode_offsets: np.ndarray  # s, window start of each mode relative to a pass start
    window_length: float  # s
    step_period: float  # s
    pass_offsets: np.ndarray = (0.0,)  # s, pass starts relative to the sync
    sync_period: float = None  # s

    def __post_init__(self):
        offsets = np.atleast_1d(np.asarray(self.mode_offsets, dtype=float))
        passes = np.atleast_1d(np.asarray(self.pass_offsets, dtype=float))
        object.__setattr__(self, "mode_offsets", offsets)
        object.__setattr__(self, "pass_offsets", passes)
        if np.any(np.diff(offsets) <= 0) or np.any(np.diff(passes) <= 0):
            raise ValueError("offsets must be strictly increasing")
        if not 0 < self.window_length <= self.step_period:
            raise ValueError("need 0 < window_length <= step_period")
        attempts = self.attempt_offsets
        if np.any(np.diff(attempts) < self.window_length):
            raise ValueError("addressing windows overlap")
        if self.sync_period is None:
            object.__setattr__(self, "sync_period", float(attempts[-1] + self.step_period))
        if attempts[-1] + self.window_length > self.sync_period:
            raise ValueError("last window extends past the sync period")

    @classmethod
    def from_schedule(cls, schedule, window_length=None):
        """Windows at each dwell of a :class:`~ionmux.waveform.StepSchedule`."""
        starts = schedule.dwell_starts
        step = float(np.min(np.diff(starts))) if len(starts) > 1 else schedule.forward_duration
        window = schedule.dwell_times[0] if window_length is None else window_length
        passes = [schedule.cooling_duration + p * schedule.pass_duration + schedule.pump_duration
                  for p in range(schedule.repeats_per_cooling)]
        return cls(starts, window, step, passes, schedule.cycle_duration)

    @property
    def n_modes(self):
        return len(self.mode_offsets)

    @property
    def attempts_per_sync(self):
        return self.n_modes * len(self.pass_offsets)

    @property
    def attempt_offsets(self):
        return (self.pass_offsets[:, None] + self.mode_offsets[None, :]).ravel()

    @property
    def attempt_modes(self):
        return np.tile(np.arange(self.n_modes), len(self.pass_offsets))


class _SyncTracker:
    """Assigns each detector tag its cycle index and sync-relative time."""

    def __init__(self):
        self.cycle = -1
        self.sync_time = None
        self.n_syncs = 0

    def split(self, tags):
        is_sync = tags.channel == SYNC
        sync_t = tags.time_ps[is_sync]
        det = ~is_sync
        t = tags.time_ps[det]
        ch = tags.channel[det]
        idx = np.searchsorted(sync_t, t, side="right") - 1
        cycle = self.cycle + idx + 1
        ref = np.where(idx >= 0, sync_t[np.maximum(idx, 0)] if len(sync_t) else 0,
                       self.sync_time if self.sync_time is not None else 0)
        valid = cycle >= 0
        if len(sync_t):
            self.cycle += len(sync_t)
            self.sync_time = int(sync_t[-1])
            self.n_syncs += len(sync_t)
        return ch[valid], t[valid] - ref[valid], cycle[valid]


@dataclass(frozen=True)
class TemporalProfile:
    edges: np.ndarray  # s, relative to sync
    counts: np.ndarray  # detector tags per bin (both detectors)
    modes: np.ndarray  # mode label per bin, -1 when unassigned
    n_syncs: int = 0

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def per_mode(self):
        n = int(self.modes.max()) + 1 if len(self.modes) else 0
        return np.array([self.counts[self.modes == m].sum() for m in range(n)])

    def to_csv(self, dest=None):
        buf = io.StringIO()
        buf.write("bin_start_s,bin_end_s,mode,counts\n")
        for lo, hi, m, c in zip(self.edges[:-1], self.edges[1:], self.modes, self.counts):
            buf.write(f"{lo:.9e},{hi:.9e},{m:d},{c:d}\n")
        return _emit(buf.getvalue(), dest)


class ProfileAccumulator:
    def __init__(self, schedule, bin_width):
        if not bin_width > 0:
            raise ValueError("bin_width must be positive")
        self.schedule = schedule
        n_bins = int(np.ceil(schedule.sync_period / bin_width - 1e-9))
        self.edges_ps = _to_ps(np.arange(n_bins + 1) * bin_width)
        self.counts = np.zeros(n_bins, dtype=np.int64)
        self._sync = _SyncTracker()

    def feed(self, tags):
        _, t_rel, _ = self._sync.split(tags)
        idx = np.searchsorted(self.edges_ps, t_rel, side="right") - 1
        idx = idx[(idx >= 0) & (idx < len(self.counts))]
        self.counts += np.bincount(idx, minlength=len(self.counts))

    def result(self):
        if self._sync.n_syncs == 0:
            raise InputError("no sync (channel 0) events in the stream")
        edges = self.edges_ps / PS
        # each bin takes the mode whose window covers most of it
        labels = np.full(len(edges) - 1, -1)
        best = np.zeros(len(edges) - 1)
        s = self.schedule
        for off, mode in zip(s.attempt_offsets, s.attempt_modes):
            overlap = np.clip(np.minimum(edges[1:], off + s.window_length)
                              - np.maximum(edges[:-1], off), 0.0, None)
            take = overlap > best
            labels[take] = mode
            best[take] = overlap[take]
        return TemporalProfile(edges, self.counts.copy(), labels, self._sync.n_syncs)


@dataclass(frozen=True)
class CorrelationHistogram:
    delays: np.ndarray
    coincidences: np.ndarray

    @property
    def denominator(self):
        side = self.coincidences[self.delays != 0]
        return float(side.mean()) if len(side) else 0.0

    @property
    def normalized(self):
        d = self.denominator
        if d == 0:
            raise NumericError("all nonzero-delay bins are empty; cannot normalise")
        return self.coincidences / d

    @property
    def stat_error(self):
        """Poisson errors propagated through the normalisation.

        Empty bins use one count as the upper-bound convention.
        """
        d = self.denominator
        if d == 0:
            raise NumericError("all nonzero-delay bins are empty; cannot normalise")
        c = self.coincidences.astype(float)
        side = self.coincidences[self.delays != 0]
        var_d = side.sum() / len(side) ** 2
        return np.sqrt(np.maximum(c, 1.0) / d ** 2 + (c / d ** 2) ** 2 * var_d)

    def value(self, delay=0):
        return float(self.normalized[self.delays == delay][0])

    def error(self, delay=0):
        return float(self.stat_error[self.delays == delay][0])

    def __add__(self, other):
        if not np.array_equal(self.delays, other.delays):
            raise ValueError("histograms cover different delays")
        return CorrelationHistogram(self.delays, self.coincidences + other.coincidences)

    def to_csv(self, dest=None):
        buf = io.StringIO()
        buf.write("delay,counts,normalized,error\n")
        for k, c, n, e in zip(self.delays, self.coincidences, self.normalized, self.stat_error):
            buf.write(f"{k:d},{c:d},{n:.9f},{e:.9f}\n")
        return _emit(buf.getvalue(), dest)


def _pair_counts(a_idx, a_cnt, b_idx, b_cnt, delays):
    out = np.zeros(len(delays), dtype=np.int64)
    if len(a_idx) == 0 or len(b_idx) == 0:
        return out
    for n, k in enumerate(delays):
        target = a_idx + k
        pos = np.searchsorted(b_idx, target)
        pos_c = np.minimum(pos, len(b_idx) - 1)
        hit = (pos < len(b_idx)) & (b_idx[pos_c] == target)
        out[n] = int(np.dot(a_cnt[hit], b_cnt[pos_c[hit]]))
    return out


class CorrelationAccumulator:
    def __init__(self, schedule, coincidence_window, max_delay):
        if not 0 < coincidence_window <= schedule.step_period:
            raise ValueError("need 0 < coincidence_window <= step_period")
        if max_delay < 1:
            raise ValueError("max_delay must be >= 1")
        self.schedule = schedule
        self.window_ps = int(_to_ps(coincidence_window))
        self.offsets_ps = _to_ps(schedule.attempt_offsets)
        self.delays = np.arange(-max_delay, max_delay + 1)
        self.max_delay = max_delay
        self.counts = np.zeros(len(self.delays), dtype=np.int64)
        self._sync = _SyncTracker()
        self._carry = (np.empty(0, np.int64), np.empty(0, np.int64))
        self.n_det = {DET1: 0, DET2: 0}

    def _attempts(self, tags):
        ch, t_rel, cycle = self._sync.split(tags)
        j = np.searchsorted(self.offsets_ps, t_rel, side="right") - 1
        ok = j >= 0
        ok[ok] = (t_rel[ok] - self.offsets_ps[j[ok]]) < self.window_ps
        attempt = cycle * self.schedule.attempts_per_sync + j
        return ch[ok], attempt[ok]

    def feed(self, tags):
        ch, attempt = self._attempts(tags)
        a1 = attempt[ch == DET1]
        a2 = attempt[ch == DET2]
        self.n_det[DET1] += int(np.count_nonzero(tags.channel == DET1))
        self.n_det[DET2] += int(np.count_nonzero(tags.channel == DET2))
        c1, c2 = self._carry
        all1 = np.concatenate([c1, a1])
        all2 = np.concatenate([c2, a2])
        # pairs entirely inside the carry were counted on a previous chunk
        self.counts += self._count(all1, all2) - self._count(c1, c2)
        latest = max(all1[-1] if len(all1) else -1, all2[-1] if len(all2) else -1)
        keep_from = latest - self.max_delay
        self._carry = (all1[all1 >= keep_from], all2[all2 >= keep_from])

    def _count(self, a1, a2):
        u1, n1 = np.unique(a1, return_counts=True)
        u2, n2 = np.unique(a2, return_counts=True)
        return _pair_counts(u1, n1, u2, n2, self.delays)

    def result(self):
        if self.n_det[DET1] == 0 or self.n_det[DET2] == 0:
            raise InputError("both detector channels (1 and 2) must be present")
        hist = CorrelationHistogram(self.delays.copy(), self.counts.copy())
        if hist.denominator == 0:
            raise NumericError("all nonzero-delay bins are empty; cannot normalise")
        return hist


def _chunks(tags):
    if isinstance(tags, TimeTags):
        return [tags]
    if isinstance(tags, (str, os.PathLike, bytes)) or hasattr(tags, "read"):
        return iter_time_tag_chunks(tags)
    return tags


def bin_temporal_profile(tags, schedule, bin_width):
    """Histogram detector tags against time since sync, labelled by mode.

    ``tags`` is a :class:`TimeTags`, an iterable of them, or a file source.
    """
    acc = ProfileAccumulator(schedule, bin_width)
    for chunk in _chunks(tags):
        acc.feed(chunk)
    return acc.result()


def correlation_histogram(tags, schedule, coincidence_window, max_delay):
    """Mode-delay coincidence histogram between detectors 1 and 2.

    Normalised by the mean of the nonzero-delay bins.
    """
    acc = CorrelationAccumulator(schedule, coincidence_window, max_delay)
    for chunk in _chunks(tags):
        acc.feed(chunk)
    return acc.result()


def _emit(text, dest):
    if dest is None:
        return text
    with open(dest, "w", newline="\n") as fh:
        fh.write(text)
