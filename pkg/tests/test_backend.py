import os
import subprocess
import sys

import numpy as np
import pytest

from nvpath import _pykernels
from nvpath._backend import BACKEND, compiled

try:
    from nvpath import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def test_backend_flag_matches_import():
    assert compiled == (_kernels is not None and not os.environ.get("NVPATH_PURE_PYTHON"))
    assert BACKEND in ("cython", "python")


def _sorted(rng, n, hi):
    return np.sort(rng.integers(0, hi, n)).astype(np.int64)


@needs_ext
@pytest.mark.parametrize("seed", range(3))
def test_counting_kernels_agree(seed):
    rng = np.random.default_rng(seed)
    a, b = _sorted(rng, 20_000, 10**9), _sorted(rng, 20_000, 10**9)
    for centered in (False, True):
        lo = -200_000 - (500 if centered else 0)
        args = (a, b, lo, 1000, lo, 200_000 + (499 if centered else 0))
        n = 401 if centered else 400
        h1, h2 = np.zeros(n, np.int64), np.zeros(n, np.int64)
        _kernels.g2_hist(*args, h1)
        _pykernels.g2_hist(*args, h2)
        assert np.array_equal(h1, h2)

    wa, wb = a // 7000, b // 7000
    assert tuple(_kernels.classify_windows(wa, wb)) == tuple(_pykernels.classify_windows(wa, wb))

    t = np.sort(np.concatenate([a, b]))
    ch = rng.integers(0, 3, len(t)).astype(np.uint8)
    m1 = np.asarray(_kernels.dead_time_mask(t, ch, 24_000), bool)
    m2 = np.asarray(_pykernels.dead_time_mask(t, ch, 24_000), bool)
    assert np.array_equal(m1, m2)

    syncs = np.arange(0, 10**9, 42_017, dtype=np.int64)
    h1, h2 = np.zeros(1681, np.int64), np.zeros(1681, np.int64)
    r1 = _kernels.sync_delays(a, syncs, 42_017, 25, h1)
    r2 = _pykernels.sync_delays(a, syncs, 42_017, 25, h2)
    assert tuple(r1) == tuple(r2) and np.array_equal(h1, h2)


@needs_ext
def test_kmc_cw_bit_identical():
    rng = np.random.default_rng(9)
    exps, unis = rng.standard_exponential(50_000), rng.random(50_000)
    rates = (1.8317e-7, 3.1415e-5, 3.4199e-6, 1.0005e-7)
    o1, o2 = np.empty(4096, np.int64), np.empty(4096, np.int64)
    r1 = _kernels.kmc_cw(exps, unis, *rates, 1, 0, 0.0, 10**13, o1)
    r2 = _pykernels.kmc_cw(exps, unis, *rates, 1, 0, 0.0, 10**13, o2)
    assert tuple(r1) == tuple(r2)
    assert np.array_equal(o1[: r1[0]], o2[: r2[0]])


@needs_ext
def test_kmc_pulsed_bit_identical():
    rng = np.random.default_rng(10)
    exps, unis = rng.standard_exponential(20_000), rng.random(20_000)
    o1, o2 = np.empty(8192, np.int64), np.empty(8192, np.int64)
    args = (exps, unis, 3.8e-5, 3.4e-6, 1e-7, 0.8, 42_017, 0, 10_000, 1)
    r1 = _kernels.kmc_pulsed(*args, o1)
    r2 = _pykernels.kmc_pulsed(*args, o2)
    assert tuple(r1) == tuple(r2)
    assert np.array_equal(o1[: r1[0]], o2[: r2[0]])


SCRIPT = """
import hashlib, numpy as np
from nvpath import REFERENCE_G2, REFERENCE_FLUX
from nvpath._backend import BACKEND
from nvpath.core import Channel, DetectorModel
from nvpath.correlate import estimate_g2
from nvpath.emitter import ExcitationConfig, Mode, calibrate_to_flux
from nvpath.optics import OpticsConfig
from nvpath.pipeline import run_cw
m = calibrate_to_flux(REFERENCE_G2, REFERENCE_FLUX)
s = run_cw(m, ExcitationConfig(Mode.CW, 0.05, 4), OpticsConfig(mz_loss=0.0), DetectorModel(0.5))
h = estimate_g2(s.select(Channel.DH), s.select(Channel.DV), 1.0, 50.0)
d = hashlib.sha256(s.times.tobytes() + s.channels.tobytes() + h.counts.tobytes()).hexdigest()
print(BACKEND, d)
"""


def _run(pure):
    env = dict(os.environ)
    env.pop("NVPATH_PURE_PYTHON", None)
    if pure:
        env["NVPATH_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return out.stdout.split()


@needs_ext
def test_forced_fallback_gives_identical_pipeline_output():
    fast, slow = _run(False), _run(True)
    assert fast[0] == "cython" and slow[0] == "python"
    assert fast[1] == slow[1]
