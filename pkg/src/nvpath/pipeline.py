"""Chunked end-to-end runs: source -> interferometer -> detectors.

Long acquisitions are processed chunk by chunk so memory stays bounded by
the detected stream. Jitter is truncated at ``JITTER_CLIP`` standard
deviations, which lets each chunk be finalized once the next chunk can no
longer reach below its cut; dead time carries the last accepted tag per
channel across chunks. The result is a valid sorted stream identical in law
to applying :func:`nvpath.optics.apply_detector` to the whole acquisition.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Optional

import numpy as np

from nvpath._backend import kernels
from nvpath.core import (
    PS_PER_S,
    Channel,
    DetectorModel,
    EmitterModel,
    TagStream,
    merge_streams,
    quantize,
)
from nvpath.emitter import ExcitationConfig, Mode, iter_cw, simulate_pulsed
from nvpath.optics import (
    OpticsConfig,
    RouteMode,
    apply_detector,
    iter_coherent,
    route_photons,
    thin,
)

JITTER_CLIP = 8.0
PHOTON_CHANNELS = (Channel.DH, Channel.DV)


def optics_rng(seed) -> np.random.Generator:
    """Generator for routing and detector draws, independent of the emitter's."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(4)[3])


def _concat(parts, duration, resolution) -> TagStream:
    if not parts:
        return TagStream.empty(duration, resolution)
    return TagStream(
        np.concatenate([p.times for p in parts]),
        np.concatenate([p.channels for p in parts]),
        duration,
        resolution,
    )


def detect_chunks(chunks: Iterable[TagStream], duration: int, optics: OpticsConfig,
                  det: DetectorModel, rng, mode=RouteMode.POPULATION) -> Iterator[TagStream]:
    """Route and detect consecutive emission chunks.

    Each input chunk must hold tags in ``[prev_end, chunk.duration)``;
    ``duration`` is the full acquisition length in ps.
    """
    sigma = det.jitter_sigma
    margin = int(math.ceil(JITTER_CLIP * sigma)) if sigma > 0 else 0
    carry_t = np.empty(0, np.int64)
    carry_c = np.empty(0, np.uint8)
    last_t = {}
    emitted_to = 0
    res = None
    it = iter(chunks)
    chunk = next(it, None)
    while chunk is not None:
        nxt = next(it, None)
        res = chunk.resolution
        s = route_photons(TagStream(chunk.times, chunk.channels, duration, res), optics, mode, rng)
        if det.efficiency < 1:
            s = thin(s, det.efficiency, rng)
        t = s.times.copy()
        photon = s.channels != Channel.SYNC
        if sigma > 0 and photon.any():
            shift = rng.normal(0.0, sigma, size=int(photon.sum()))
            shift = np.rint(np.clip(shift, -JITTER_CLIP * sigma, JITTER_CLIP * sigma))
            t[photon] = quantize(np.clip(t[photon] + shift.astype(np.int64), 0, duration), res)
        t = np.concatenate([carry_t, t])
        c = np.concatenate([carry_c, s.channels])
        order = np.argsort(t, kind="stable")
        t, c = t[order], c[order]

        bound = duration + 1 if nxt is None else chunk.duration - margin - res
        k = int(np.searchsorted(t, bound, side="left"))
        et, ec = t[:k], c[:k]
        carry_t, carry_c = t[k:], c[k:]

        if det.dead_time > 0 and len(et):
            pre_ch = np.array(sorted(last_t), dtype=np.uint8)
            pre_t = np.array([last_t[int(ch)] for ch in pre_ch], dtype=np.int64)
            o = np.argsort(pre_t, kind="stable")
            pt = np.concatenate([pre_t[o], et])
            pc = np.concatenate([pre_ch[o], ec])
            keep = np.asarray(kernels.dead_time_mask(pt, pc, int(det.dead_time)), dtype=bool)
            keep = keep[len(pre_t):] | (ec == Channel.SYNC)
            et, ec = et[keep], ec[keep]
            for ch in PHOTON_CHANNELS:
                sel = et[ec == ch]
                if len(sel):
                    last_t[int(ch)] = int(sel[-1])
        out = TagStream(et, ec, duration, res)

        if det.dark_rate > 0:
            hi = min(bound, duration + 1)
            parts = [out]
            for ch in PHOTON_CHANNELS:
                n = rng.poisson(det.dark_rate * (hi - emitted_to) / PS_PER_S)
                dt = np.sort(quantize(rng.integers(emitted_to, hi, size=n, dtype=np.int64), res))
                parts.append(TagStream.single_channel(dt, ch, duration, res))
            out = merge_streams(*parts)
            emitted_to = hi
        yield out
        chunk = nxt


def run_cw(model: EmitterModel, cfg: ExcitationConfig, optics: OpticsConfig,
           det: DetectorModel, mode=RouteMode.POPULATION, chunk_s: float = 10.0) -> TagStream:
    """Detected DH/DV stream of a CW-pumped emitter."""
    if cfg.mode is not Mode.CW:
        raise ValueError("run_cw needs a CW ExcitationConfig")
    rng = optics_rng(cfg.rng_seed)
    parts = list(detect_chunks(iter_cw(model, cfg, chunk_s), cfg.duration_ps, optics, det, rng, mode))
    return _concat(parts, cfg.duration_ps, cfg.resolution)


def run_coherent(rate: float, duration_s: float, optics: OpticsConfig, det: DetectorModel,
                 seed=0, mode=RouteMode.POPULATION, chunk_s: float = 10.0,
                 resolution: Optional[int] = None) -> TagStream:
    """Detected stream of a coherent (Poisson) source of ``rate`` photons/s."""
    kw = {} if resolution is None else {"resolution": resolution}
    src_rng, opt_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    duration = int(round(duration_s * PS_PER_S))
    chunks = iter_coherent(rate, duration_s, src_rng, chunk_s, **kw)
    parts = list(detect_chunks(chunks, duration, optics, det, opt_rng, mode))
    res = parts[0].resolution if parts else kw.get("resolution", 25)
    return _concat(parts, duration, res)


def run_pulsed(model: EmitterModel, cfg: ExcitationConfig, optics: OpticsConfig,
               det: DetectorModel) -> TagStream:
    """Detected stream of a pulsed emitter, SYNC tags included."""
    rng = optics_rng(cfg.rng_seed)
    emitted = simulate_pulsed(model, cfg)
    routed = route_photons(emitted, optics, RouteMode.POPULATION, rng)
    return apply_detector(routed, det, rng)


def scan_angles(start: float = 0.0, stop: float = 90.0, step: float = 2.5) -> np.ndarray:
    """Inclusive half-wave-plate angle grid in degrees."""
    n = int(round((stop - start) / step))
    return start + step * np.arange(n + 1)


def run_visibility_scan(source, thetas, point_s: float, optics: OpticsConfig,
                        det: DetectorModel, seed=0):
    """Detected streams at each wave-plate angle.

    ``source`` is either an :class:`EmitterModel` (CW-pumped) or a coherent
    rate in photons/s. Each angle gets an independent seed. Returns a list
    of ``(theta, TagStream)``.
    """
    children = np.random.SeedSequence(seed).spawn(len(thetas))
    out = []
    for th, child in zip(thetas, children):
        o = OpticsConfig(optics.split_ratio, optics.phase, float(th), optics.mz_loss,
                         optics.v_intrinsic)
        s = int(child.generate_state(1)[0])
        if isinstance(source, EmitterModel):
            cfg = ExcitationConfig(Mode.CW, point_s, s)
            stream = run_cw(source, cfg, o, det, RouteMode.VISIBILITY_SCAN)
        else:
            stream = run_coherent(float(source), point_s, o, det, s, RouteMode.VISIBILITY_SCAN)
        out.append((float(th), stream))
    return out


def scan_counts(scan):
    """``(theta, n_h, n_v)`` arrays from :func:`run_visibility_scan` output."""
    th = np.array([t for t, _ in scan])
    nh = np.array([s.count(Channel.DH) for _, s in scan])
    nv = np.array([s.count(Channel.DV) for _, s in scan])
    return th, nh, nv
