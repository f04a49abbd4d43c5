"""Time-tag stream I/O.

File format: header ``channel,time_ps``, then one ``<channel>,<time_ps>``
record per LF-terminated line in ASCII decimal. Channel 0 marks a sequence
sync, 1 and 2 are the two detectors. Timestamps never decrease.
"""
from dataclasses import dataclass
import io
import os
from typing import NamedTuple

import numpy as np

from ..errors import TimeTagFormatError

__all__ = [
    "HEADER",
    "SYNC",
    "DET1",
    "DET2",
    "TimeTagRecord",
    "TimeTags",
    "parse_time_tags",
    "iter_time_tag_chunks",
    "read_time_tags",
    "write_time_tags",
]

HEADER = "channel,time_ps"
SYNC, DET1, DET2 = 0, 1, 2
_CHANNELS = {"0": 0, "1": 1, "2": 2}


class TimeTagRecord(NamedTuple):
    channel: int
    time_ps: int


@dataclass(frozen=True)
class TimeTags:
    channel: np.ndarray  # int8
    time_ps: np.ndarray  # int64

    def __post_init__(self):
        object.__setattr__(self, "channel", np.asarray(self.channel, dtype=np.int8))
        object.__setattr__(self, "time_ps", np.asarray(self.time_ps, dtype=np.int64))
        if self.channel.shape != self.time_ps.shape:
            raise ValueError("channel and time arrays differ in length")

    @classmethod
    def empty(cls):
        return cls(np.empty(0, np.int8), np.empty(0, np.int64))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            return cls.empty()
        ch, t = zip(*records)
        return cls(np.array(ch), np.array(t))

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.channel for p in parts]),
                   np.concatenate([p.time_ps for p in parts]))

    def __len__(self):
        return len(self.time_ps)

    def records(self):
        for ch, t in zip(self.channel.tolist(), self.time_ps.tolist()):
            yield TimeTagRecord(ch, t)

    def count(self, channel):
        return int(np.count_nonzero(self.channel == channel))

    def to_csv(self, dest=None):
        return write_time_tags(self, dest)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="ascii", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("ascii"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    if hasattr(source, "read"):
        sample = source.read(0)
        if isinstance(sample, bytes):
            return io.TextIOWrapper(source, encoding="ascii", newline=""), False
        return source, False
    raise TypeError(f"cannot read time tags from {type(source).__name__}")


def parse_time_tags(source):
    """Yield validated :class:`TimeTagRecord` objects one line at a time.

    ``source`` is a path, raw bytes, or an open text/binary file. Any
    malformed line or timestamp regression raises
    :class:`~ionmux.errors.TimeTagFormatError` carrying the 1-based line.
    """
    fh, owned = _open_text(source)
    try:
        last = None
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                # a missing final newline is tolerated
                pass
            else:
                line = line[:-1]
            if lineno == 1:
                if line != HEADER:
                    raise TimeTagFormatError(f"expected header {HEADER!r}, got {line!r}", lineno)
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TimeTagFormatError(f"expected 2 fields, got {len(parts)}: {line!r}", lineno)
            ch_text, t_text = parts
            if ch_text not in _CHANNELS:
                raise TimeTagFormatError(f"invalid channel {ch_text!r}", lineno)
            if not (t_text.isascii() and t_text.isdigit()):
                raise TimeTagFormatError(f"invalid timestamp {t_text!r}", lineno)
            t = int(t_text)
            if last is not None and t < last:
                raise TimeTagFormatError(f"timestamp {t} precedes previous {last}", lineno)
            last = t
            yield TimeTagRecord(_CHANNELS[ch_text], t)
    finally:
        if owned:
            fh.close()


def iter_time_tag_chunks(source, chunk_size=65536):
    """Parse ``source`` into :class:`TimeTags` chunks of bounded size."""
    ch_buf, t_buf = [], []
    for rec in parse_time_tags(source):
        ch_buf.append(rec.channel)
        t_buf.append(rec.time_ps)
        if len(t_buf) >= chunk_size:
            yield TimeTags(np.array(ch_buf), np.array(t_buf))
            ch_buf, t_buf = [], []
    if t_buf:
        yield TimeTags(np.array(ch_buf), np.array(t_buf))


def read_time_tags(source):
    return TimeTags.concatenate(iter_time_tag_chunks(source))


def write_time_tags(tags, dest=None):
    """Serialise ``tags`` (a :class:`TimeTags` or an iterable of them).

    Returns the text when ``dest`` is None, otherwise writes to the path or
    file object.
    """
    chunks = [tags] if isinstance(tags, TimeTags) else tags
    if dest is None:
        buf = io.StringIO()
        _write(chunks, buf)
        return buf.getvalue()
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="ascii", newline="\n") as fh:
            _write(chunks, fh)
    else:
        _write(chunks, dest)


def _write(chunks, fh):
    fh.write(HEADER + "\n")
    for chunk in chunks:
        if len(chunk):
            lines = [f"{c},{t}" for c, t in zip(chunk.channel.tolist(), chunk.time_ps.tolist())]
            fh.write("\n".join(lines) + "\n")
