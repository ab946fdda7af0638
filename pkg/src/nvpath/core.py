"""Shared value types: time tags, parameter bundles and result records.

All times inside a :class:`TagStream` are integer picoseconds since the
start of the acquisition. Rates in the model bundles are per nanosecond,
matching how the fitted correlation parameters are usually quoted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

PS_PER_NS = 1000
PS_PER_S = 10**12
DEFAULT_RESOLUTION_PS = 25


class NvpathError(Exception):
    """Base class for all package errors."""


class ValidationError(NvpathError, ValueError):
    """Input or configuration violates a documented invariant."""


class FitError(NvpathError, RuntimeError):
    """A model fit did not converge or is degenerate."""


class CalibrationError(NvpathError, RuntimeError):
    """No emitter rates reproduce the requested correlation model."""


class Channel(enum.IntEnum):
    DH = 0
    DV = 1
    SYNC = 2
    AUX = 3


class TimeTag(NamedTuple):
    time: int
    channel: Channel


class Violation(NamedTuple):
    index: Optional[int]
    rule: str

    def __str__(self):
        if self.index is None:
            return self.rule
        return f"{self.rule} at index {self.index}"


def _frozen(arr, dtype):
    arr = np.array(arr, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TagStream:
    """Channel-stamped detection events.

    ``times`` and ``channels`` are parallel read-only arrays; ``duration``
    and ``resolution`` are in picoseconds. Construction does not validate,
    use :func:`validate_stream` for that.
    """

    times: np.ndarray
    channels: np.ndarray
    duration: int
    resolution: int = DEFAULT_RESOLUTION_PS

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen(self.times, np.int64))
        object.__setattr__(self, "channels", _frozen(self.channels, np.uint8))
        object.__setattr__(self, "duration", int(self.duration))
        object.__setattr__(self, "resolution", int(self.resolution))

    @classmethod
    def empty(cls, duration, resolution=DEFAULT_RESOLUTION_PS):
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), duration, resolution)

    @classmethod
    def from_tags(cls, tags: Iterable, duration, resolution=DEFAULT_RESOLUTION_PS):
        tags = [TimeTag(int(t), Channel(c)) for t, c in tags]
        times = np.array([t.time for t in tags], dtype=np.int64)
        chans = np.array([int(t.channel) for t in tags], dtype=np.uint8)
        return cls(times, chans, duration, resolution)

    @classmethod
    def single_channel(cls, times, channel, duration, resolution=DEFAULT_RESOLUTION_PS):
        times = np.asarray(times, dtype=np.int64)
        return cls(times, np.full(len(times), int(channel), np.uint8), duration, resolution)

    def __len__(self):
        return len(self.times)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.times.tolist(), self.channels.tolist()):
            yield TimeTag(t, Channel(c))

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.duration == other.duration
            and self.resolution == other.resolution
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.channels, other.channels)
        )

    @property
    def duration_s(self) -> float:
        return self.duration / PS_PER_S

    def select(self, *channels) -> "TagStream":
        mask = np.isin(self.channels, [int(c) for c in channels])
        return TagStream(self.times[mask], self.channels[mask], self.duration, self.resolution)

    def channel_times(self, channel) -> np.ndarray:
        return self.times[self.channels == int(channel)]

    def count(self, channel=None) -> int:
        if channel is None:
            return len(self)
        return int(np.count_nonzero(self.channels == int(channel)))

    def relabel(self, channel) -> "TagStream":
        return TagStream.single_channel(self.times, channel, self.duration, self.resolution)


def quantize(times, resolution):
    """Floor integer picosecond times onto the tagger grid."""
    times = np.asarray(times, dtype=np.int64)
    return times - times % resolution


def merge_streams(*streams: TagStream, dedup=False) -> TagStream:
    """Time-ordered merge of streams sharing a resolution.

    The result spans the longest duration. Ties keep input order (stable).
    With ``dedup`` only the first tag of each (time, channel) pair survives.
    """
    if not streams:
        raise ValidationError("nothing to merge")
    res = {s.resolution for s in streams}
    if len(res) != 1:
        raise ValidationError(f"cannot merge streams with resolutions {sorted(res)}")
    times = np.concatenate([s.times for s in streams])
    chans = np.concatenate([s.channels for s in streams])
    order = np.argsort(times, kind="stable")
    times, chans = times[order], chans[order]
    if dedup and len(times) > 1:
        keep = np.ones(len(times), dtype=bool)
        # ties are adjacent after the sort; compare within equal-time runs
        same_t = times[1:] == times[:-1]
        keep[1:] = ~(same_t & (chans[1:] == chans[:-1]))
        times, chans = times[keep], chans[keep]
    return TagStream(times, chans, max(s.duration for s in streams), res.pop())


def validate_stream(stream: TagStream) -> list:
    """Return every invariant violation of ``stream`` (empty when valid)."""
    out = []
    if stream.resolution <= 0:
        out.append(Violation(None, "non-positive resolution"))
    if stream.duration < 0:
        out.append(Violation(None, "negative duration"))
    if len(stream.times) != len(stream.channels):
        out.append(Violation(None, "times/channels length mismatch"))
        return out
    t = stream.times
    for i in np.flatnonzero(t < 0):
        out.append(Violation(int(i), "negative time"))
    for i in np.flatnonzero(t > stream.duration):
        out.append(Violation(int(i), "time exceeds duration"))
    if len(t) > 1:
        for i in np.flatnonzero(np.diff(t) < 0):
            out.append(Violation(int(i) + 1, "out-of-order"))
    if stream.resolution > 0:
        for i in np.flatnonzero(t % stream.resolution != 0):
            out.append(Violation(int(i), "off resolution grid"))
    for i in np.flatnonzero(stream.channels > max(Channel)):
        out.append(Violation(int(i), "unknown channel"))
    out.sort(key=lambda v: (-1 if v.index is None else v.index))
    return out


@dataclass(frozen=True)
class EmitterModel:
    """Three-level rates (per ns) plus the signal fraction of detected light.

    ``mean_flux`` is the photon flux in photons/s that the model was
    calibrated to, kept as a diagnostic only.
    """

    r12: float
    r21: float
    r23: float
    r31: float
    rho: float = 1.0
    mean_flux: Optional[float] = None

    def __post_init__(self):
        rates = (self.r12, self.r21, self.r23, self.r31)
        if not all(np.isfinite(rates)):
            raise ValidationError(f"non-finite rate in {rates}")
        if min(rates) < 0:
            raise ValidationError(f"negative rate in {rates}")
        if self.r21 <= 0:
            raise ValidationError("r21 must be positive")
        if not 0 < self.rho <= 1:
            raise ValidationError(f"rho must lie in (0, 1], got {self.rho}")

    def stationary(self) -> np.ndarray:
        """Steady-state populations of levels 1, 2, 3 under CW pumping."""
        if self.r12 == 0:
            return np.array([1.0, 0.0, 0.0])
        if self.r23 > 0 and self.r31 == 0:
            return np.array([0.0, 0.0, 1.0])
        shelf = self.r23 / self.r31 if self.r23 > 0 else 0.0
        inv_n2 = 1.0 + shelf + (self.r21 + self.r23) / self.r12
        n2 = 1.0 / inv_n2
        return np.array([(self.r21 + self.r23) / self.r12 * n2, n2, shelf * n2])

    def signal_rate(self) -> float:
        """Mean CW emission rate in photons/ns."""
        return self.r21 * self.stationary()[1]

    def total_flux(self) -> float:
        """Signal plus background in photons/s."""
        return self.signal_rate() * 1e9 / self.rho


@dataclass(frozen=True)
class G2Model:
    """Parameters of the bunching/antibunching correlation model.

    ``gamma1``/``gamma2`` in 1/ns; ``rho`` is the signal fraction.
    """

    beta: float
    gamma1: float
    gamma2: float
    rho: float = 1.0

    def __post_init__(self):
        vals = (self.beta, self.gamma1, self.gamma2, self.rho)
        if not all(np.isfinite(vals)):
            raise ValidationError(f"non-finite G2Model parameter in {vals}")
        if self.beta <= 0:
            raise ValidationError("beta must be positive")
        if not self.gamma1 > self.gamma2 >= 0:
            raise ValidationError("need gamma1 > gamma2 >= 0")
        if not 0 < self.rho <= 1:
            raise ValidationError(f"rho must lie in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    dead_time: int = 24_000
    jitter_fwhm: float = 350.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ValidationError(f"detector efficiency must lie in (0, 1], got {self.efficiency}")
        if self.dead_time < 0 or self.jitter_fwhm < 0 or self.dark_rate < 0:
            raise ValidationError("dead_time, jitter_fwhm and dark_rate must be non-negative")

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_fwhm / 2.355


@dataclass(frozen=True, eq=False)
class G2Histogram:
    """Binned, normalized cross-correlation of two channels.

    Bin ``i`` covers ``[edges[i], edges[i+1])`` in ns; ``tau`` holds the bin
    centers. ``stderr`` is NaN where a bin has no counts.
    """

    w: float
    tau_max: float
    edges: np.ndarray
    counts: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    n1: int
    n2: int
    duration_s: float
    centered: bool = False

    @property
    def tau(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def zero_bin(self) -> int:
        return int(np.searchsorted(self.edges, 0.0, side="right") - 1)

    @property
    def g2_zero(self) -> float:
        return float(self.g2[self.zero_bin])

    @property
    def norm(self) -> float:
        return self.n1 * self.n2 * (self.w * 1e-9) / self.duration_s


@dataclass(frozen=True)
class PopulationEstimate:
    """Photon-number probabilities for one state-generation window.

    ``detected``/``corrected`` are ``(p0, p1, p2)``; ``*_cov`` are the 3x3
    covariance matrices used for error propagation.
    """

    window: float
    window_count: int
    detected: tuple
    detected_err: tuple
    detected_cov: Optional[np.ndarray] = None
    corrected: Optional[tuple] = None
    corrected_err: Optional[tuple] = None
    corrected_cov: Optional[np.ndarray] = None
    eta: Optional[float] = None
    clamped: bool = False
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConcurrenceResult:
    window: float
    V: float
    V_err: float
    y_c: float
    y_c_err: float
    C_N: float
    C_N_err: float
    C: Optional[float] = None
    C_err: Optional[float] = None
    pC: Optional[float] = None
    clamped: bool = False
