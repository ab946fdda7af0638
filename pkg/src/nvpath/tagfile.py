"""Binary tag files.

Layout, all little-endian::

    magic      4s   b"PTAG"
    version    u16  1
    resolution u32  ps
    count      u64  number of records
    duration   u64  ps
    records    count x (time u64, channel u8, reserved u8 = 0)
"""

from __future__ import annotations

import os
import struct

import numpy as np

from nvpath.core import NvpathError, TagStream

MAGIC = b"PTAG"
VERSION = 1
HEADER = struct.Struct("<4sHIQQ")
RECORD = np.dtype([("time", "<u8"), ("channel", "u1"), ("reserved", "u1")])
_BLOCK = 1 << 22


class TagFileError(NvpathError):
    """Malformed tag file."""


class BadMagicError(TagFileError):
    pass


class TruncatedError(TagFileError):
    pass


class UnsortedError(TagFileError):
    pass


def write_tagfile(stream: TagStream, path) -> None:
    """Write ``stream`` to ``path`` (overwrites)."""
    n = len(stream)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, int(stream.resolution), n, int(stream.duration)))
        for i in range(0, n, _BLOCK):
            rec = np.zeros(min(_BLOCK, n - i), dtype=RECORD)
            rec["time"] = stream.times[i:i + _BLOCK]
            rec["channel"] = stream.channels[i:i + _BLOCK]
            fh.write(rec.tobytes())


def read_header(path):
    """Return ``(version, resolution, count, duration)`` after checking magic and size."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a tag file (magic {raw[:4]!r})")
    if len(raw) < HEADER.size:
        raise TruncatedError(f"{path}: header truncated")
    magic, version, resolution, count, duration = HEADER.unpack(raw)
    if version != VERSION:
        raise TagFileError(f"{path}: unsupported version {version}")
    expected = HEADER.size + count * RECORD.itemsize
    if size != expected:
        raise TruncatedError(f"{path}: {count} records need {expected} bytes, file has {size}")
    return version, resolution, count, duration


def read_tagfile(path) -> TagStream:
    """Read and validate a tag file."""
    _, resolution, count, duration = read_header(path)
    rec = np.fromfile(path, dtype=RECORD, count=count, offset=HEADER.size)
    if count and rec["reserved"].any():
        raise TagFileError(f"{path}: nonzero reserved byte")
    times = rec["time"]
    if count and times.max() > np.iinfo(np.int64).max:
        raise TagFileError(f"{path}: time exceeds int64 range")
    times = times.astype(np.int64)
    if count > 1 and np.any(np.diff(times) < 0):
        i = int(np.flatnonzero(np.diff(times) < 0)[0]) + 1
        raise UnsortedError(f"{path}: record {i} is earlier than its predecessor")
    if count and times[-1] > duration:
        raise TagFileError(f"{path}: tag time beyond the declared duration")
    if resolution <= 0:
        raise TagFileError(f"{path}: resolution must be positive")
    channels = np.ascontiguousarray(rec["channel"])
    del rec
    return TagStream(times, channels, int(duration), int(resolution))
