"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

The stochastic kernels are literal loop transcriptions so that both
backends produce bit-identical streams for the same random buffers. The
counting kernels are vectorized with numpy instead; their outputs are
integer histograms, so equality is exact either way.
"""

import math

import numpy as np


def kmc_cw(exps, unis, r12, r21, r23, r31, state, t, frac, t_end, out):
    ne, nu, no = len(exps), len(unis), len(out)
    ie = iu = n = 0
    k2 = r21 + r23
    done = False
    t = int(t)
    frac = float(frac)
    while True:
        if state == 1:
            rate = r12
        elif state == 2:
            rate = k2
        else:
            rate = r31
        if rate <= 0.0:
            t = int(t_end)
            done = True
            break
        if ie >= ne or n >= no or (state == 2 and iu >= nu):
            break
        frac = frac + float(exps[ie]) / rate
        ie += 1
        whole = math.floor(frac)
        t += whole
        frac = frac - whole
        if t >= t_end:
            done = True
            break
        if state == 1:
            state = 2
        elif state == 2:
            if float(unis[iu]) * k2 < r21:
                state = 1
                out[n] = t
                n += 1
            else:
                state = 3
            iu += 1
        else:
            state = 1
    return n, ie, iu, state, t, frac, done


def kmc_pulsed(exps, unis, r21, r23, r31, p_exc, period, k, n_pulses, state, out):
    ne, nu, no = len(exps), len(unis), len(out)
    ie = iu = n = 0
    k2 = r21 + r23
    k = int(k)
    while k < n_pulses:
        if ie + 2 > ne or iu + 2 > nu or n + 1 > no:
            break
        tp = k * period
        if state == 1:
            if float(unis[iu]) < p_exc:
                state = 2
            iu += 1
        s = 0.0
        while state != 1:
            rate = k2 if state == 2 else r31
            if rate <= 0.0:
                break
            s = s + float(exps[ie]) / rate
            ie += 1
            if s >= period:
                break
            if state == 2:
                if float(unis[iu]) * k2 < r21:
                    state = 1
                    out[n] = tp + math.floor(s)
                    n += 1
                else:
                    state = 3
                iu += 1
            else:
                state = 1
        k += 1
    return n, ie, iu, k, state


_PAIR_BLOCK = 1 << 22


def g2_hist(a, b, lo, w, min_dt, max_dt, hist):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    nbins = len(hist)
    if len(a) == 0 or len(b) == 0:
        return 0
    first = np.searchsorted(b, a + min_dt, side="left")
    stop = np.searchsorted(b, a + max_dt, side="right")
    counts = stop - first
    ends = np.cumsum(counts)
    total = int(ends[-1])
    # walk a in blocks so the pair arrays stay bounded
    i0 = 0
    while i0 < len(a):
        base = int(ends[i0 - 1]) if i0 else 0
        i1 = int(np.searchsorted(ends, base + _PAIR_BLOCK, side="right"))
        i1 = max(i1, i0 + 1)
        c = counts[i0:i1]
        m = int(c.sum())
        if m:
            ia = np.repeat(np.arange(i0, i1), c)
            offs = np.arange(m) - np.repeat(np.cumsum(c) - c, c)
            jb = first[ia] + offs
            idx = (b[jb] - a[ia] - lo) // w
            np.minimum(idx, nbins - 1, out=idx)
            hist += np.bincount(idx, minlength=nbins).astype(hist.dtype)
        i0 = i1
    return total


def sync_delays(photons, syncs, period, bin_width, hist):
    photons = np.asarray(photons, dtype=np.int64)
    syncs = np.asarray(syncs, dtype=np.int64)
    j = np.searchsorted(syncs, photons, side="right")
    early = int(np.count_nonzero(j == 0))
    ok = j > 0
    d = photons[ok] - syncs[j[ok] - 1]
    idx = d // bin_width
    good = (d < period) & (idx < len(hist))
    late = int(np.count_nonzero(~good))
    hist += np.bincount(idx[good], minlength=len(hist)).astype(hist.dtype)
    return early, late


def dead_time_mask(times, channels, dead_time):
    keep = np.zeros(len(times), dtype=bool)
    last = {}
    for i, (t, c) in enumerate(zip(times.tolist(), channels.tolist())):
        prev = last.get(c)
        if prev is None or t - prev >= dead_time:
            keep[i] = True
            last[c] = t
    return keep


def classify_windows(wa, wb):
    ua, ca = np.unique(np.asarray(wa, dtype=np.int64), return_counts=True)
    ub, cb = np.unique(np.asarray(wb, dtype=np.int64), return_counts=True)
    in_b = np.isin(ua, ub, assume_unique=True)
    in_a = np.isin(ub, ua, assume_unique=True)
    both = int(np.count_nonzero(in_b))
    a_only = len(ua) - both
    b_only = len(ub) - both
    multi = int(np.count_nonzero(ca[~in_b] > 1) + np.count_nonzero(cb[~in_a] > 1))
    return a_only, b_only, both, multi
