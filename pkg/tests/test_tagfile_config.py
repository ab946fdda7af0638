import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from nvpath.config import (
    check_required,
    detector_from_config,
    emitter_from_config,
    excitation_from_config,
    optics_from_config,
    parse_config,
)
from nvpath.core import Channel, TagStream, ValidationError
from nvpath.emitter import Mode
from nvpath.tagfile import (
    HEADER,
    BadMagicError,
    TagFileError,
    TruncatedError,
    UnsortedError,
    read_header,
    read_tagfile,
    write_tagfile,
)

streams = st.lists(
    st.tuples(st.integers(0, 10**6), st.sampled_from(list(Channel))), max_size=300
).map(lambda tags: TagStream.from_tags(sorted((25 * t, c) for t, c in tags), 25 * 10**6 + 25))


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(streams)
def test_round_trip_is_lossless(tmp_path, s):
    p = tmp_path / "s.ptag"
    write_tagfile(s, p)
    back = read_tagfile(p)
    assert back == s
    assert back.resolution == s.resolution and back.duration == s.duration


def test_byte_layout(tmp_path):
    s = TagStream.from_tags([(25, Channel.DV), (50, Channel.SYNC)], 1000)
    p = tmp_path / "a.ptag"
    write_tagfile(s, p)
    raw = p.read_bytes()
    assert len(raw) == 26 + 2 * 10
    assert raw[:26] == b"PTAG" + struct.pack("<HIQQ", 1, 25, 2, 1000)
    assert raw[26:36] == struct.pack("<QBB", 25, 1, 0)
    assert read_header(p) == (1, 25, 2, 1000)


def _write_raw(path, records, magic=b"PTAG", count=None, duration=10_000, version=1):
    count = len(records) if count is None else count
    body = b"".join(struct.pack("<QBB", t, c, r) for t, c, r in records)
    path.write_bytes(HEADER.pack(magic, version, 25, count, duration) + body)
    return path


def test_bad_magic(tmp_path):
    with pytest.raises(BadMagicError):
        read_tagfile(_write_raw(tmp_path / "x", [(0, 0, 0)], magic=b"XTAG"))


def test_truncated_records(tmp_path):
    p = _write_raw(tmp_path / "x", [(0, 0, 0), (25, 1, 0)], count=3)
    with pytest.raises(TruncatedError):
        read_tagfile(p)
    q = tmp_path / "y"
    q.write_bytes(b"PTAG\x01\x00")
    with pytest.raises(TruncatedError):
        read_tagfile(q)


def test_unsorted_records(tmp_path):
    with pytest.raises(UnsortedError, match="record 1"):
        read_tagfile(_write_raw(tmp_path / "x", [(50, 0, 0), (25, 1, 0)]))


def test_errors_are_distinct():
    assert len({BadMagicError, TruncatedError, UnsortedError}) == 3
    for cls in (BadMagicError, TruncatedError, UnsortedError):
        assert issubclass(cls, TagFileError)
    assert not issubclass(BadMagicError, TruncatedError)


def test_other_record_violations(tmp_path):
    with pytest.raises(TagFileError, match="reserved"):
        read_tagfile(_write_raw(tmp_path / "a", [(0, 0, 1)]))
    with pytest.raises(TagFileError, match="duration"):
        read_tagfile(_write_raw(tmp_path / "b", [(20_000, 0, 0)]))
    with pytest.raises(TagFileError, match="version"):
        read_tagfile(_write_raw(tmp_path / "c", [], version=2))


def test_empty_file_round_trip(tmp_path):
    s = TagStream.empty(5000)
    write_tagfile(s, tmp_path / "e")
    assert read_tagfile(tmp_path / "e") == s


CW_CONFIG = """
# reference NV source
emitter.flux_per_s = 150700
emitter.rho = 0.925
detector.eta = 0.25
detector.dead_time_ns = 24
detector.jitter_fwhm_ps = 350   # FWHM
optics.theta_deg = 0
optics.v_intrinsic = 0.93
sim.duration_s = 0.5
sim.seed = 7
"""


def test_parse_and_build_objects():
    cfg = parse_config(CW_CONFIG)
    check_required(cfg, "cw")
    assert cfg.get_value("sim.seed") == 7 and isinstance(cfg["sim.seed"], int)
    assert cfg.get_value("optics.mz_loss") == 0.5
    m = emitter_from_config(cfg)
    assert m.rho == 0.925
    assert m.total_flux() == pytest.approx(150700, rel=1e-9)
    det = detector_from_config(cfg)
    assert det.dead_time == 24_000 and det.efficiency == 0.25
    opt = optics_from_config(cfg, theta=22.5)
    assert opt.hwp_angle == 22.5 and opt.v_intrinsic == 0.93
    ex = excitation_from_config(cfg, Mode.CW)
    assert ex.rng_seed == 7 and ex.sim_duration == 0.5


@pytest.mark.parametrize("text,match", [
    ("emitter.bogus = 1", "unknown key"),
    ("sim.seed = 1\nsim.seed = 2", "duplicate"),
    ("sim.seed = 1.5", "expects int"),
    ("just words", "key = value"),
])
def test_parse_errors_name_the_line(text, match):
    with pytest.raises(ValidationError, match=match):
        parse_config(text)


def test_missing_required_keys_are_listed():
    cfg = parse_config("detector.eta = 0.5\nsim.seed = 1")
    with pytest.raises(ValidationError) as exc:
        check_required(cfg, "cw")
    msg = str(exc.value)
    for key in ("emitter.rho", "detector.dead_time_ns", "sim.duration_s", "emitter.r12_per_ns"):
        assert key in msg
    with pytest.raises(ValidationError, match="coherent.rate_per_s"):
        check_required(cfg, "coherent")


def test_required_value_without_default():
    with pytest.raises(ValidationError, match="required"):
        parse_config("").get_value("sim.seed")


def test_explicit_rates_bypass_calibration():
    cfg = parse_config("emitter.rho = 1\nemitter.r12_per_ns = 0.001\nemitter.r21_per_ns = 0.03\n"
                       "emitter.r23_per_ns = 0.002\nemitter.r31_per_ns = 0.0001")
    m = emitter_from_config(cfg)
    assert (m.r12, m.r21, m.r23, m.r31) == (0.001, 0.03, 0.002, 0.0001)
    assert np.isfinite(m.total_flux())
