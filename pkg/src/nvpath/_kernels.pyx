# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every function here has a twin in :mod:`nvpath._pykernels` with the same
signature and the same results; :mod:`nvpath._backend` picks one at import.
Random numbers are drawn by the caller in numpy and passed in as buffers, so
both backends consume identical variates.
"""

from libc.math cimport floor

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


def kmc_cw(const double[::1] exps, const double[::1] unis,
           double r12, double r21, double r23, double r31,
           int state, i64 t, double frac, i64 t_end, i64[::1] out):
    """Advance the CW three-level chain until a buffer runs dry or ``t_end``.

    Rates are per picosecond. Returns
    ``(n_out, n_exps_used, n_unis_used, state, t, frac, done)``.
    """
    cdef Py_ssize_t ne = exps.shape[0], nu = unis.shape[0], no = out.shape[0]
    cdef Py_ssize_t ie = 0, iu = 0, n = 0
    cdef double rate, whole
    cdef double k2 = r21 + r23
    cdef bint done = False
    with nogil:
        while True:
            if state == 1:
                rate = r12
            elif state == 2:
                rate = k2
            else:
                rate = r31
            if rate <= 0.0:
                # absorbing: nothing else ever happens
                t = t_end
                done = True
                break
            if ie >= ne or n >= no or (state == 2 and iu >= nu):
                break
            frac = frac + exps[ie] / rate
            ie += 1
            whole = floor(frac)
            t += <i64>whole
            frac = frac - whole
            if t >= t_end:
                done = True
                break
            if state == 1:
                state = 2
            elif state == 2:
                if unis[iu] * k2 < r21:
                    state = 1
                    out[n] = t
                    n += 1
                else:
                    state = 3
                iu += 1
            else:
                state = 1
    return n, ie, iu, state, t, frac, done


def kmc_pulsed(const double[::1] exps, const double[::1] unis,
               double r21, double r23, double r31, double p_exc,
               i64 period, i64 k, i64 n_pulses, int state, i64[::1] out):
    """Run pulses ``k .. n_pulses-1`` with delta excitation at ``k * period``.

    A pulse is only started when the buffers can cover it completely
    (at most two waiting times and two uniforms per pulse). Returns
    ``(n_out, n_exps_used, n_unis_used, k, state)``.
    """
    cdef Py_ssize_t ne = exps.shape[0], nu = unis.shape[0], no = out.shape[0]
    cdef Py_ssize_t ie = 0, iu = 0, n = 0
    cdef double s, rate
    cdef double k2 = r21 + r23
    cdef i64 tp
    with nogil:
        while k < n_pulses:
            if ie + 2 > ne or iu + 2 > nu or n + 1 > no:
                break
            tp = k * period
            if state == 1:
                if unis[iu] < p_exc:
                    state = 2
                iu += 1
            s = 0.0
            while state != 1:
                rate = k2 if state == 2 else r31
                if rate <= 0.0:
                    break
                s = s + exps[ie] / rate
                ie += 1
                if s >= period:
                    # memoryless: the pending transition is redrawn next pulse
                    break
                if state == 2:
                    if unis[iu] * k2 < r21:
                        state = 1
                        out[n] = tp + <i64>floor(s)
                        n += 1
                    else:
                        state = 3
                    iu += 1
                else:
                    state = 1
            k += 1
    return n, ie, iu, k, state


def g2_hist(const i64[::1] a, const i64[::1] b, i64 lo, i64 w,
            i64 min_dt, i64 max_dt, i64[::1] hist):
    """Two-pointer multistart/multistop sweep; accumulates into ``hist``.

    Every pair with ``min_dt <= b - a <= max_dt`` lands in bin
    ``(b - a - lo) // w``, clamped to the last bin. Returns the pair count.
    """
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], nbins = hist.shape[0]
    cdef Py_ssize_t i, j, j0 = 0, idx
    cdef i64 ta, dt, npairs = 0
    with nogil:
        for i in range(na):
            ta = a[i]
            while j0 < nb and b[j0] - ta < min_dt:
                j0 += 1
            j = j0
            while j < nb:
                dt = b[j] - ta
                if dt > max_dt:
                    break
                idx = <Py_ssize_t>((dt - lo) // w)
                if idx >= nbins:
                    idx = nbins - 1
                hist[idx] += 1
                npairs += 1
                j += 1
    return npairs


def sync_delays(const i64[::1] photons, const i64[::1] syncs, i64 period,
                i64 bin_width, i64[::1] hist):
    """Histogram photon delays after the most recent SYNC.

    Returns ``(n_before_first_sync, n_beyond_period)``.
    """
    cdef Py_ssize_t n = photons.shape[0], m = syncs.shape[0], nbins = hist.shape[0]
    cdef Py_ssize_t i, j = 0, idx
    cdef i64 d, early = 0, late = 0
    with nogil:
        for i in range(n):
            while j < m and syncs[j] <= photons[i]:
                j += 1
            if j == 0:
                early += 1
                continue
            d = photons[i] - syncs[j - 1]
            if d >= period:
                late += 1
                continue
            idx = <Py_ssize_t>(d // bin_width)
            if idx < nbins:
                hist[idx] += 1
            else:
                late += 1
    return early, late


def dead_time_mask(const i64[::1] times, const cnp.uint8_t[::1] channels,
                   i64 dead_time):
    """Non-paralyzable dead time per channel over a time-sorted stream."""
    cdef Py_ssize_t n = times.shape[0], i
    cdef cnp.uint8_t[::1] keep = np.zeros(n, dtype=np.uint8)
    cdef i64 last[256]
    cdef bint seen[256]
    cdef int c
    for c in range(256):
        seen[c] = False
        last[c] = 0
    with nogil:
        for i in range(n):
            c = channels[i]
            if not seen[c] or times[i] - last[c] >= dead_time:
                keep[i] = 1
                last[c] = times[i]
                seen[c] = True
    return np.asarray(keep).view(np.bool_)


def classify_windows(const i64[::1] wa, const i64[::1] wb):
    """Merge two sorted window-index lists.

    Returns ``(a_only, b_only, both, single_multi)`` where ``single_multi``
    counts one-channel windows holding two or more tags.
    """
    cdef Py_ssize_t na = wa.shape[0], nb = wb.shape[0]
    cdef Py_ssize_t i = 0, j = 0, ca, cb
    cdef i64 cur
    cdef i64 a_only = 0, b_only = 0, both = 0, multi = 0
    with nogil:
        while i < na or j < nb:
            if j >= nb or (i < na and wa[i] < wb[j]):
                cur = wa[i]
            else:
                cur = wb[j]
            ca = 0
            while i < na and wa[i] == cur:
                ca += 1
                i += 1
            cb = 0
            while j < nb and wb[j] == cur:
                cb += 1
                j += 1
            if ca > 0 and cb > 0:
                both += 1
            elif ca > 0:
                a_only += 1
                if ca > 1:
                    multi += 1
            else:
                b_only += 1
                if cb > 1:
                    multi += 1
    return a_only, b_only, both, multi
