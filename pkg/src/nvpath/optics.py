"""Path splitting, interferometric routing and detector imperfections.

Photons are routed at the probability level. Path 1 is tagged V and lands
on DV, path 2 stays H and lands on DH; the half-wave plate after the path
combiner mixes the two tags so that

    P_H = (1 + (s2 - s1) cos 4theta + 2 sqrt(s1 s2) v cos(phi) sin 4theta) / 2

with ``s1``/``s2`` the split probabilities, ``phi`` the interferometer
phase and ``v`` the intrinsic fringe visibility. For a balanced split this
is ``(1 + v cos(phi) sin 4theta) / 2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from nvpath._backend import kernels
from nvpath.core import (
    DEFAULT_RESOLUTION_PS,
    PS_PER_S,
    Channel,
    DetectorModel,
    TagStream,
    ValidationError,
    merge_streams,
    quantize,
)


class RouteMode(str, enum.Enum):
    POPULATION = "population"
    VISIBILITY_SCAN = "visibility_scan"


@dataclass(frozen=True)
class OpticsConfig:
    split_ratio: float = 0.5
    phase: float = 0.0
    hwp_angle: float = 0.0
    mz_loss: float = 0.5
    v_intrinsic: float = 1.0

    def __post_init__(self):
        if not 0 <= self.split_ratio <= 1:
            raise ValidationError("split_ratio must lie in [0, 1]")
        if not 0 <= self.mz_loss < 1:
            raise ValidationError("mz_loss must lie in [0, 1)")
        if not 0 <= self.v_intrinsic <= 1:
            raise ValidationError("v_intrinsic must lie in [0, 1]")


def hwp_detection_probs(theta, phi=0.0, v_intrinsic=1.0, split_ratio=0.5):
    """Probabilities (P_H, P_V) of a surviving photon reaching DH / DV.

    ``theta`` is the wave-plate angle in degrees and may be an array.
    """
    if not 0 <= v_intrinsic <= 1:
        raise ValidationError("v_intrinsic must lie in [0, 1]")
    th = np.deg2rad(np.asarray(theta, dtype=float))
    s1 = split_ratio
    s2 = 1.0 - split_ratio
    p_h = 0.5 * (
        1.0
        + (s2 - s1) * np.cos(4 * th)
        + 2.0 * np.sqrt(s1 * s2) * v_intrinsic * np.cos(phi) * np.sin(4 * th)
    )
    p_h = np.clip(p_h, 0.0, 1.0)
    if np.ndim(p_h) == 0:
        p_h = float(p_h)
    return p_h, 1.0 - p_h


def _rng(seed):
    return np.random.default_rng(seed)


def _split_sync(stream: TagStream):
    sync = stream.channels == Channel.SYNC
    return sync, ~sync


def route_photons(emissions: TagStream, optics: OpticsConfig, mode=RouteMode.POPULATION,
                  rng=None) -> TagStream:
    """Send photons through the interferometer onto DH/DV.

    Every photon first survives the path combiner with probability
    ``1 - mz_loss``. SYNC tags pass through untouched.
    """
    mode = RouteMode(mode)
    if mode is RouteMode.POPULATION and optics.hwp_angle != 0:
        raise ValidationError("POPULATION routing needs hwp_angle = 0 (no interference)")
    rng = _rng(rng)
    sync, photon = _split_sync(emissions)
    t = emissions.times[photon]
    if optics.mz_loss > 0:
        t = t[rng.random(len(t)) >= optics.mz_loss]
    u = rng.random(len(t))
    if mode is RouteMode.POPULATION:
        # path 1 -> V tag -> DV
        ch = np.where(u < optics.split_ratio, Channel.DV, Channel.DH).astype(np.uint8)
    else:
        p_h, _ = hwp_detection_probs(optics.hwp_angle, optics.phase, optics.v_intrinsic,
                                     optics.split_ratio)
        ch = np.where(u < p_h, Channel.DH, Channel.DV).astype(np.uint8)
    out = TagStream(t, ch, emissions.duration, emissions.resolution)
    if sync.any():
        out = merge_streams(emissions.select(Channel.SYNC), out)
    return out


def thin(stream: TagStream, efficiency: float, rng=None) -> TagStream:
    """Keep each non-SYNC tag independently with probability ``efficiency``."""
    rng = _rng(rng)
    keep = rng.random(len(stream)) < efficiency
    keep |= stream.channels == Channel.SYNC
    return TagStream(stream.times[keep], stream.channels[keep], stream.duration, stream.resolution)


def add_jitter(stream: TagStream, sigma_ps: float, rng=None) -> TagStream:
    """Gaussian timing jitter on non-SYNC tags, re-quantized and re-sorted."""
    if sigma_ps <= 0 or not len(stream):
        return stream
    rng = _rng(rng)
    sync, photon = _split_sync(stream)
    t = stream.times.copy()
    shift = np.rint(rng.normal(0.0, sigma_ps, size=int(photon.sum()))).astype(np.int64)
    t[photon] = np.clip(t[photon] + shift, 0, stream.duration)
    t[photon] = quantize(t[photon], stream.resolution)
    order = np.argsort(t, kind="stable")
    return TagStream(t[order], stream.channels[order], stream.duration, stream.resolution)


def dead_time_filter(stream: TagStream, dead_time: int) -> TagStream:
    """Non-paralyzable dead time, applied per channel (SYNC exempt)."""
    if dead_time <= 0 or not len(stream):
        return stream
    keep = kernels.dead_time_mask(stream.times, stream.channels, int(dead_time))
    keep = np.asarray(keep, dtype=bool) | (stream.channels == Channel.SYNC)
    return TagStream(stream.times[keep], stream.channels[keep], stream.duration, stream.resolution)


def add_dark_counts(stream: TagStream, rate: float, channels=None, rng=None) -> TagStream:
    """Poisson dark counts at ``rate`` counts/s on each photon channel."""
    if rate <= 0:
        return stream
    rng = _rng(rng)
    if channels is None:
        channels = sorted({int(c) for c in np.unique(stream.channels)} - {int(Channel.SYNC)})
    parts = [stream]
    for ch in channels:
        n = rng.poisson(rate * stream.duration / PS_PER_S)
        t = np.sort(quantize(rng.integers(0, stream.duration + 1, size=n, dtype=np.int64),
                             stream.resolution))
        parts.append(TagStream.single_channel(t, ch, stream.duration, stream.resolution))
    return merge_streams(*parts)


def apply_detector(stream: TagStream, det: DetectorModel, rng=None) -> TagStream:
    """Efficiency, jitter, dead time and dark counts, in that order."""
    rng = _rng(rng)
    out = thin(stream, det.efficiency, rng) if det.efficiency < 1 else stream
    out = add_jitter(out, det.jitter_sigma, rng)
    out = dead_time_filter(out, det.dead_time)
    return add_dark_counts(out, det.dark_rate, rng=rng)


def iter_coherent(rate: float, duration: float, rng=None, chunk_s: float = 10.0,
                  resolution: int = DEFAULT_RESOLUTION_PS):
    """Poisson (coherent-light) AUX tags in consecutive chunks."""
    if not rate > 0:
        raise ValidationError("coherent rate must be positive")
    rng = _rng(rng)
    total = int(round(duration * PS_PER_S))
    chunk = max(int(round(chunk_s * PS_PER_S)), 1)
    start = 0
    while start < total:
        end = min(start + chunk, total)
        n = rng.poisson(rate * (end - start) / PS_PER_S)
        t = np.sort(quantize(rng.integers(start, end, size=n, dtype=np.int64), resolution))
        part = TagStream.single_channel(t, Channel.AUX, end, resolution)
        yield merge_streams(part, dedup=True)
        start = end


def simulate_coherent(rate: float, duration: float, rng=None,
                      resolution: int = DEFAULT_RESOLUTION_PS) -> TagStream:
    """Homogeneous Poisson stream at ``rate`` counts/s for ``duration`` s."""
    parts = list(iter_coherent(rate, duration, rng, resolution=resolution))
    times = np.concatenate([p.times for p in parts]) if parts else np.empty(0, np.int64)
    return TagStream.single_channel(times, Channel.AUX, int(round(duration * PS_PER_S)), resolution)
