"""Correlation estimators over tag streams.

``estimate_g2`` is a multistart/multistop coincidence histogram: every
ordered pair ``(t_a, t_b)`` with ``|t_b - t_a| <= tau_max`` is counted, not
only nearest neighbours. Bins are left-closed/right-open starting at
``-tau_max``; a delay of exactly ``+tau_max`` goes to the last bin. With
``centered=True`` one extra bin is centered on zero instead.

Normalization is ``c / (R1 R2 w T)`` with count rates ``R = N / T``, i.e.
``c T / (N1 N2 w)``, so uncorrelated light gives 1.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from nvpath._backend import kernels
from nvpath.core import PS_PER_NS, Channel, G2Histogram, TagStream, ValidationError


def _to_ps(x_ns, what):
    ps = int(round(x_ns * PS_PER_NS))
    if ps <= 0:
        raise ValidationError(f"{what} must be positive")
    return ps


def bin_layout(w_ps: int, tau_max_ps: int, centered: bool = False):
    """Return ``(lo, min_dt, max_dt, nbins)`` in ps for the kernel."""
    if tau_max_ps % w_ps:
        raise ValidationError("tau_max must be a whole multiple of the bin width")
    if centered:
        if w_ps % 2:
            raise ValidationError("centered binning needs an even bin width in ps")
        lo = -tau_max_ps - w_ps // 2
        return lo, lo, tau_max_ps + w_ps // 2 - 1, 2 * tau_max_ps // w_ps + 1
    return -tau_max_ps, -tau_max_ps, tau_max_ps, 2 * tau_max_ps // w_ps


def coincidence_counts(a, b, w_ps, tau_max_ps, centered=False, n_chunks=1, workers=1):
    """Raw pair histogram of ``b - a`` delays (integer ps arrays, sorted).

    ``n_chunks > 1`` partitions ``a`` by time and pairs each piece with the
    slice of ``b`` inside its ``tau_max`` margins; the summed histogram is
    identical to the sequential one.
    """
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    lo, min_dt, max_dt, nbins = bin_layout(w_ps, tau_max_ps, centered)
    if n_chunks <= 1 or len(a) < 2 * n_chunks:
        hist = np.zeros(nbins, np.int64)
        kernels.g2_hist(a, b, lo, w_ps, min_dt, max_dt, hist)
        return hist

    bounds = np.linspace(0, len(a), n_chunks + 1).astype(np.int64)

    def one(k):
        i0, i1 = int(bounds[k]), int(bounds[k + 1])
        h = np.zeros(nbins, np.int64)
        if i1 > i0:
            j0 = int(np.searchsorted(b, a[i0] + min_dt, side="left"))
            j1 = int(np.searchsorted(b, a[i1 - 1] + max_dt, side="right"))
            kernels.g2_hist(a[i0:i1], b[j0:j1], lo, w_ps, min_dt, max_dt, h)
        return h

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        parts = list(ex.map(one, range(n_chunks)))
    return np.sum(parts, axis=0)


def estimate_g2(a: TagStream, b: TagStream, w: float = 1.0, tau_max: float = 200.0,
                centered: bool = False, n_chunks: int = 1, workers: int = 1) -> G2Histogram:
    """Normalized cross-correlation of all tags in ``a`` (start) and ``b`` (stop).

    ``w`` and ``tau_max`` in ns. Pass single-channel streams, e.g.
    ``stream.select(Channel.DH)``.
    """
    if a.duration != b.duration:
        raise ValidationError(f"durations differ: {a.duration} vs {b.duration} ps")
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("g2 normalization undefined: a stream is empty")
    if a.duration <= 0:
        raise ValidationError("g2 normalization undefined: zero duration")
    w_ps = _to_ps(w, "bin width")
    tmax_ps = _to_ps(tau_max, "tau_max")
    counts = coincidence_counts(a.times, b.times, w_ps, tmax_ps, centered, n_chunks, workers)
    lo, _, _, nbins = bin_layout(w_ps, tmax_ps, centered)
    edges = (lo + w_ps * np.arange(nbins + 1)) / PS_PER_NS
    duration_s = a.duration_s
    norm = len(a) * len(b) * (w_ps * 1e-12) / duration_s
    g2 = counts / norm
    with np.errstate(divide="ignore", invalid="ignore"):
        stderr = np.where(counts > 0, g2 / np.sqrt(counts), np.nan)
    return G2Histogram(
        w=w_ps / PS_PER_NS,
        tau_max=tmax_ps / PS_PER_NS,
        edges=edges,
        counts=counts,
        g2=g2,
        stderr=stderr,
        n1=len(a),
        n2=len(b),
        duration_s=duration_s,
        centered=centered,
    )


@dataclass(frozen=True, eq=False)
class LifetimeHistogram:
    """Photon counts versus delay after the preceding SYNC.

    ``edges`` in ns; ``dropped_before_sync`` counts photons preceding the
    first SYNC, ``dropped_late`` those at or beyond one period.
    """

    bin_ps: int
    period_ps: int
    edges: np.ndarray
    counts: np.ndarray
    dropped_before_sync: int
    dropped_late: int

    @property
    def t(self) -> np.ndarray:
        """Left bin edges in ns."""
        return self.edges[:-1]


def lifetime_histogram(stream: TagStream, bin_ps: int = 25, photon_channels=None,
                       period_ps=None) -> LifetimeHistogram:
    """Sync-referenced decay histogram over ``[0, period)``.

    The period defaults to the median SYNC spacing.
    """
    bin_ps = int(bin_ps)
    if bin_ps < stream.resolution:
        raise ValidationError("bin must be at least the stream resolution")
    syncs = stream.channel_times(Channel.SYNC)
    if not len(syncs):
        raise ValidationError("no SYNC tags in stream")
    if period_ps is None:
        if len(syncs) < 2:
            raise ValidationError("need two SYNC tags to infer the pulse period")
        period_ps = int(np.median(np.diff(syncs)))
    period_ps = int(period_ps)
    if photon_channels is None:
        mask = stream.channels != Channel.SYNC
    else:
        mask = np.isin(stream.channels, [int(c) for c in photon_channels])
    photons = np.ascontiguousarray(stream.times[mask])
    nbins = -(-period_ps // bin_ps)
    counts = np.zeros(nbins, np.int64)
    early, late = kernels.sync_delays(photons, np.ascontiguousarray(syncs), period_ps, bin_ps, counts)
    edges = bin_ps * np.arange(nbins + 1) / PS_PER_NS
    return LifetimeHistogram(bin_ps, period_ps, edges, counts, int(early), int(late))
