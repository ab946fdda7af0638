import csv
import json

import numpy as np
import pytest

from nvpath.cli import main, parse_grid
from nvpath.core import Channel, TagStream, ValidationError
from nvpath.tagfile import read_tagfile, write_tagfile

BASE = """
detector.eta = 0.5
detector.dead_time_ns = 24
detector.jitter_fwhm_ps = 350
optics.theta_deg = 0
optics.v_intrinsic = 0.93
optics.mz_loss = 0
sim.seed = 3
"""

CW = BASE + "emitter.flux_per_s = 150700\nemitter.rho = 0.925\nsim.duration_s = 2\n"
COHERENT = BASE + "coherent.rate_per_s = 200000\nsim.duration_s = 1\n"
SCAN = BASE + "coherent.rate_per_s = 20000\nsim.duration_s = 0.05\n"
PULSED = BASE + ("emitter.rho = 1\nemitter.r12_per_ns = 0\nemitter.r21_per_ns = 0.0415\n"
                 "emitter.r23_per_ns = 0\nemitter.r31_per_ns = 0\nsim.duration_s = 0.05\n")


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = {}
    for name, text, mode in (("cw", CW, "cw"), ("coh", COHERENT, "coherent"),
                             ("pulsed", PULSED, "pulsed")):
        cfg = d / f"{name}.cfg"
        cfg.write_text(text)
        out[name] = d / f"{name}.ptag"
        assert main(["simulate", str(cfg), "--mode", mode, "--out", str(out[name])]) == 0
    out["dir"] = d
    return out


def test_simulate_is_byte_deterministic(files, tmp_path):
    again = tmp_path / "again.ptag"
    assert main(["simulate", str(files["dir"] / "cw.cfg"), "--mode", "cw", "--out", str(again)]) == 0
    assert again.read_bytes() == files["cw"].read_bytes()


def test_coherent_mode_writes_poisson_stream(files):
    s = read_tagfile(files["coh"])
    n = len(s)
    expected = 200_000 * 0.5
    assert abs(n - expected) < 5 * np.sqrt(expected)
    assert {int(c) for c in np.unique(s.channels)} == {int(Channel.DH), int(Channel.DV)}


def test_mz_scan_writes_37_files_and_manifest(tmp_path):
    cfg = tmp_path / "scan.cfg"
    cfg.write_text(SCAN)
    out = tmp_path / "scan"
    assert main(["simulate", str(cfg), "--mode", "mz-scan", "--out", str(out)]) == 0
    rows = read_rows(out / "manifest.csv")
    assert len(rows) == 37
    assert float(rows[0]["theta_deg"]) == 0.0 and float(rows[-1]["theta_deg"]) == 90.0
    assert all((out / r["file"]).exists() for r in rows)
    vis_csv, vis_json = tmp_path / "vis.csv", tmp_path / "vis.json"
    assert main(["visibility", str(out / "manifest.csv"), "--out", str(vis_csv),
                 "--json", str(vis_json)]) == 0
    assert list(read_rows(vis_csv)[0]) == ["theta_deg", "nH", "nV", "pH", "pV"]
    v = json.loads(vis_json.read_text())
    assert 0.8 < v["V"] <= 1.0 and v["V_err"] > 0


def test_g2_csv(files, tmp_path):
    out = tmp_path / "g2.csv"
    assert main(["g2", str(files["cw"]), "--w-ns", "2", "--tau-max-ns", "100",
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    assert list(rows[0]) == ["tau_ns", "g2", "stderr"]
    assert len(rows) == 100
    g = np.array([float(r["g2"]) for r in rows])
    assert g[49:51].mean() < 0.6


def test_g2_two_file_form_checks_durations(files, tmp_path):
    s = read_tagfile(files["cw"])
    other = tmp_path / "short.ptag"
    write_tagfile(TagStream(s.times[:10], s.channels[:10], s.duration // 2, s.resolution), other)
    assert main(["g2", str(files["cw"]), str(other), "--out", str(tmp_path / "x.csv")]) == 2


def test_populations_on_empty_files(tmp_path):
    p = tmp_path / "empty.ptag"
    write_tagfile(TagStream.empty(10**6), p)
    out = tmp_path / "pops.csv"
    assert main(["populations", str(p), "--windows-ns", "2:10:2", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert [float(r["window_ns"]) for r in rows] == [2, 4, 6, 8, 10]
    assert all(float(r["p0"]) == 1.0 and float(r["p1"]) == 0.0 for r in rows)
    assert list(rows[0]) == ["window_ns", "p0", "p1", "p2", "p0_err", "p1_err", "p2_err",
                             "yc", "yc_err"]


def test_corrected_populations_need_eta(files, tmp_path):
    args = ["populations", str(files["cw"]), "--out", str(tmp_path / "a.csv"),
            "--out-corrected", str(tmp_path / "b.csv")]
    assert main(args) == 2
    assert main(args + ["--eta", "0.5", "--windows-ns", "2,20"]) == 0
    assert len(read_rows(tmp_path / "b.csv")) == 2


def test_concurrence_json(files, tmp_path):
    out = tmp_path / "c.json"
    assert main(["concurrence", str(files["cw"]), "--eta", "0.5", "--V", "0.93",
                 "--windows-ns", "10,50", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert [r["window"] for r in res] == [10.0, 50.0]
    assert {"C_N", "C_N_err", "y_c", "V", "clamped"} <= set(res[0])
    assert main(["concurrence", str(files["cw"]), "--V", "0.93", "--out", str(out)]) == 2


def test_oracle_csv(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["oracle", "--T-ns", "2:20:2", "--numeric", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 10
    full = np.array([float(r["g2d_full"]) for r in rows])
    num = np.array([float(r["g2d_numeric"]) for r in rows])
    assert np.allclose(full, num, rtol=1e-9)
    yc = np.array([float(r["yc_split"]) for r in rows])
    assert np.all(np.diff(yc) > 0)


def test_lifetime_outputs(files, tmp_path):
    out, js = tmp_path / "l.csv", tmp_path / "l.json"
    assert main(["lifetime", str(files["pulsed"]), "--bin-ps", "500", "--cutoffs-ns", "0:2:1",
                 "--out", str(out), "--fit-json", str(js)]) == 0
    fit = json.loads(js.read_text())
    assert len(fit["fits"]) == 3
    assert fit["gamma"] == pytest.approx(0.0415, rel=0.1)


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("detector.nonsense = 3\n")
    assert main(["simulate", str(cfg), "--mode", "cw", "--out", str(tmp_path / "x")]) == 2
    assert main(["g2", str(tmp_path / "missing.ptag"), "--out", str(tmp_path / "y")]) == 2


def test_parse_grid():
    assert parse_grid("2:10:2").tolist() == [2, 4, 6, 8, 10]
    assert parse_grid("0:90:2.5").size == 37
    assert parse_grid("1, 3").tolist() == [1, 3]
    with pytest.raises(ValidationError):
        parse_grid("5:1:1")
