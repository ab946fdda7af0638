import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nvpath.core import Channel, TagStream, ValidationError
from nvpath.correlate import bin_layout, coincidence_counts, estimate_g2, lifetime_histogram
from nvpath.optics import simulate_coherent


def brute_force(a, b, w_ps, tau_max_ps, centered=False):
    """All-pairs reference histogram."""
    lo, min_dt, max_dt, nbins = bin_layout(w_ps, tau_max_ps, centered)
    hist = np.zeros(nbins, np.int64)
    d = (np.asarray(b)[None, :] - np.asarray(a)[:, None]).ravel()
    d = d[(d >= min_dt) & (d <= max_dt)]
    idx = np.minimum((d - lo) // w_ps, nbins - 1)
    np.add.at(hist, idx, 1)
    return hist


def single(times, ch, duration=100_000):
    return TagStream.single_channel(times, ch, duration)


def test_single_pair_lands_in_plus_two_ns_bin():
    a = single([10_000], Channel.DH)
    b = single([12_000], Channel.DV)
    h = estimate_g2(a, b, 1.0, 5.0)
    assert h.counts.sum() == 1
    i = int(np.argmax(h.counts))
    assert h.edges[i] <= 2.0 < h.edges[i + 1]
    assert h.counts.tolist() == [0] * 7 + [1] + [0] * 2


def test_boundary_pairs_go_to_inner_bins():
    a = np.array([10_000], np.int64)
    h = coincidence_counts(a, np.array([5000, 15_000], np.int64), 1000, 5000)
    assert h[0] == 1 and h[-1] == 1


def test_left_closed_bins():
    a = np.array([0], np.int64)
    h = coincidence_counts(a, np.array([0, 999, 1000], np.int64), 1000, 3000)
    assert h.tolist() == [0, 0, 0, 2, 1, 0]


def test_layout_errors():
    with pytest.raises(ValidationError):
        bin_layout(300, 1000)
    with pytest.raises(ValidationError):
        bin_layout(25, 1000, centered=True)
    lo, _, _, n = bin_layout(1000, 5000, centered=True)
    assert lo == -5500 and n == 11


sorted_times = st.lists(st.integers(0, 2000), max_size=150).map(
    lambda xs: np.array(sorted(xs), dtype=np.int64) * 25)


@given(sorted_times, sorted_times, st.sampled_from([50, 100, 250]), st.integers(1, 20),
       st.booleans())
def test_sweep_equals_all_pairs(a, b, w, k, centered):
    tmax = w * k
    got = coincidence_counts(a, b, w, tmax, centered)
    assert np.array_equal(got, brute_force(a, b, w, tmax, centered))


@given(sorted_times, sorted_times, st.integers(2, 9))
def test_chunked_equals_sequential(a, b, chunks):
    seq = coincidence_counts(a, b, 100, 2000)
    par = coincidence_counts(a, b, 100, 2000, n_chunks=chunks, workers=2)
    assert np.array_equal(seq, par)


@given(sorted_times, sorted_times)
def test_swapping_channels_mirrors_delays(a, b):
    # odd delays never sit on a bin edge, where left-closed bins break the symmetry
    b = b + 1
    ab = coincidence_counts(a, b, 100, 2000)
    ba = coincidence_counts(b, a, 100, 2000)
    assert np.array_equal(ab, ba[::-1])


def test_brute_force_on_ten_thousand_tags():
    rng = np.random.default_rng(0)
    a = np.sort(rng.integers(0, 10**9, 5000)) // 25 * 25
    b = np.sort(rng.integers(0, 10**9, 5000)) // 25 * 25
    got = coincidence_counts(a, b, 1000, 200_000)
    assert np.array_equal(got, brute_force(a, b, 1000, 200_000))


def test_independent_poisson_streams_give_unity():
    a = simulate_coherent(1e5, 30.0, rng=1).relabel(Channel.DH)
    b = simulate_coherent(1e5, 30.0, rng=2).relabel(Channel.DV)
    h = estimate_g2(a, b, 1.0, 200.0)
    assert abs(np.mean(h.g2) - 1) < 3 / np.sqrt(h.counts.sum())
    assert np.all(np.abs(h.g2 - 1) < 5 * h.stderr)
    assert h.g2[0] == pytest.approx(h.counts[0] / h.norm)


def test_centered_histogram_has_zero_centered_bin():
    a = single([10_000], Channel.DH)
    b = single([10_000, 10_400, 10_600], Channel.DV)
    h = estimate_g2(a, b, 1.0, 5.0, centered=True)
    assert h.tau[h.zero_bin] == 0.0
    assert h.counts[h.zero_bin] == 2 and h.counts[h.zero_bin + 1] == 1


def test_g2_errors():
    a = single([10_000], Channel.DH)
    with pytest.raises(ValidationError):
        estimate_g2(a, single([], Channel.DV), 1.0, 5.0)
    with pytest.raises(ValidationError):
        estimate_g2(a, single([1000], Channel.DV, duration=200_000), 1.0, 5.0)
    with pytest.raises(ValidationError):
        estimate_g2(a, single([1000], Channel.DV), 0.0, 5.0)


def _pulsed(photons, syncs, duration=200_000):
    tags = [(t, Channel.SYNC) for t in syncs] + [(t, Channel.DH) for t in photons]
    return TagStream.from_tags(sorted(tags, key=lambda x: (x[0], x[1] != Channel.SYNC)), duration)


def test_photons_at_sync_fill_bin_zero():
    syncs = [0, 40_000, 80_000, 120_000]
    h = lifetime_histogram(_pulsed(syncs, syncs), 25)
    assert h.counts[0] == 4 and h.counts.sum() == 4
    assert h.period_ps == 40_000 and len(h.counts) == 1600


def test_empty_photon_channel_gives_zero_histogram():
    h = lifetime_histogram(_pulsed([], [0, 40_000, 80_000]), 100)
    assert not h.counts.any()


def test_photons_before_first_sync_are_counted_as_dropped():
    h = lifetime_histogram(_pulsed([100, 50_000], [1000, 41_000, 81_000]), 25)
    assert h.dropped_before_sync == 1
    assert h.counts.sum() == 1
    assert h.counts[9000 // 25] == 1


def test_lifetime_errors():
    s = _pulsed([100], [0, 40_000])
    with pytest.raises(ValidationError):
        lifetime_histogram(s, 10)
    with pytest.raises(ValidationError):
        lifetime_histogram(single([5], Channel.DH), 25)
