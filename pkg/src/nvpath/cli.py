"""Command-line interface: ``nvpath <command> ...``.

Floats in CSV and JSON output use Python's shortest round-trip ``repr``, so
identical inputs give byte-identical files. Every command exits with status
2 on invalid input and 0 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from nvpath import REFERENCE_G2
from nvpath.analysis import (
    concurrence,
    contamination,
    correct_populations,
    fit_g2,
    fit_lifetime,
    visibility_from_scan,
    window_populations,
)
from nvpath.config import (
    check_required,
    detector_from_config,
    emitter_from_config,
    excitation_from_config,
    load_config,
    optics_from_config,
)
from nvpath.core import Channel, G2Model, NvpathError, ValidationError
from nvpath.correlate import estimate_g2, lifetime_histogram
from nvpath.emitter import Mode
from nvpath.optics import OpticsConfig, RouteMode
from nvpath.oracles import (
    g2_detected_full,
    g2_detected_numeric,
    g2_detected_simple,
    populations_from_g2,
)
from nvpath.pipeline import run_coherent, run_cw, run_pulsed, run_visibility_scan, scan_angles
from nvpath.tagfile import read_tagfile, write_tagfile


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if not math.isfinite(x) else x
    return x


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n", encoding="utf-8")


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        try:
            a, b, s = (float(v) for v in text.split(":"))
        except ValueError:
            raise ValidationError(f"bad grid {text!r}; expected start:stop:step") from None
        if s <= 0 or b < a:
            raise ValidationError(f"bad grid {text!r}")
        n = int(math.floor((b - a) / s + 1e-9))
        return np.round(a + s * np.arange(n + 1), 12)
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ValidationError(f"bad list {text!r}") from None


def _channel(name: str) -> Channel:
    try:
        return Channel[name.upper()]
    except KeyError:
        raise ValidationError(f"unknown channel {name!r}") from None


def _pair(files, chan_a="DH", chan_b="DV"):
    """Two single-channel streams from one file (two channels) or two files."""
    first = read_tagfile(files[0])
    second = read_tagfile(files[1]) if len(files) > 1 else first
    if first.duration != second.duration:
        raise ValidationError(
            f"inconsistent durations: {first.duration} ps vs {second.duration} ps"
        )
    return first.select(_channel(chan_a)), second.select(_channel(chan_b))


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    check_required(cfg, args.mode)
    det = detector_from_config(cfg)
    chunk_s = cfg.get_value("sim.chunk_s")
    if args.mode == "cw":
        optics = optics_from_config(cfg)
        route = RouteMode.POPULATION if optics.hwp_angle == 0 else RouteMode.VISIBILITY_SCAN
        stream = run_cw(emitter_from_config(cfg), excitation_from_config(cfg, Mode.CW), optics,
                        det, route, chunk_s)
        write_tagfile(stream, args.out)
    elif args.mode == "pulsed":
        optics = OpticsConfig(split_ratio=cfg.get_value("optics.split_ratio"),
                              mz_loss=cfg.get_value("optics.mz_loss"))
        stream = run_pulsed(emitter_from_config(cfg), excitation_from_config(cfg, Mode.PULSED),
                            optics, det)
        write_tagfile(stream, args.out)
    elif args.mode == "coherent":
        optics = optics_from_config(cfg)
        route = RouteMode.POPULATION if optics.hwp_angle == 0 else RouteMode.VISIBILITY_SCAN
        stream = run_coherent(cfg.get_value("coherent.rate_per_s"), cfg.get_value("sim.duration_s"),
                              optics, det, cfg.get_value("sim.seed"), route, chunk_s,
                              cfg.get_value("sim.resolution_ps"))
        write_tagfile(stream, args.out)
    else:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        thetas = scan_angles(cfg.get_value("optics.scan_start_deg"),
                             cfg.get_value("optics.scan_stop_deg"),
                             cfg.get_value("optics.scan_step_deg"))
        source = (cfg.get_value("coherent.rate_per_s") if cfg.has("coherent.rate_per_s")
                  else emitter_from_config(cfg))
        optics = optics_from_config(cfg, theta=0.0)
        rows = []
        for th, stream in run_visibility_scan(source, thetas, cfg.get_value("sim.duration_s"),
                                              optics, det, cfg.get_value("sim.seed")):
            name = f"theta_{th:06.2f}.ptag"
            write_tagfile(stream, out / name)
            rows.append((th, name))
        with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta_deg", "file"])
            for th, name in rows:
                w.writerow([fmt(th), name])
    return 0


def cmd_g2(args) -> int:
    a, b = _pair(args.files, args.chan_a, args.chan_b)
    h = estimate_g2(a, b, args.w_ns, args.tau_max_ns, centered=args.centered,
                    n_chunks=args.chunks, workers=args.workers)
    write_csv(args.out, ["tau_ns", "g2", "stderr"], zip(h.tau, h.g2, h.stderr))
    if args.fit_json:
        init = G2Model(args.beta, args.gamma1, args.gamma2, args.rho)
        fit = fit_g2(h, init, fit_rho=args.fit_rho)
        write_json(args.fit_json, {
            **dataclasses.asdict(fit.model),
            "names": list(fit.names), "perr": fit.perr, "cov": fit.cov,
            "chi2_red": fit.chi2_red, "g2_zero": h.g2_zero,
        })
    return 0


def cmd_lifetime(args) -> int:
    stream = read_tagfile(args.file)
    chans = [_channel(c) for c in args.channels.split(",")] if args.channels else None
    hist = lifetime_histogram(stream, args.bin_ps, chans)
    write_csv(args.out, ["t_ns", "counts"], zip(hist.t, hist.counts))
    if args.fit_json:
        scan = fit_lifetime(hist, parse_grid(args.cutoffs_ns))
        write_json(args.fit_json, {
            "gamma": scan.gamma, "plateau_cutoff_ns": scan.plateau_cutoff,
            "converged": scan.converged, "fits": [f._asdict() for f in scan.fits],
            "dropped_before_sync": hist.dropped_before_sync, "dropped_late": hist.dropped_late,
        })
    return 0


_POP_HEADER = ["window_ns", "p0", "p1", "p2", "p0_err", "p1_err", "p2_err", "yc", "yc_err"]


def _pop_row(window, p, err, cov):
    try:
        yc, yc_err = contamination(*p, cov=cov)
    except ValidationError:
        yc, yc_err = float("nan"), float("nan")
    return (window, *p, *err, yc, yc_err)


def _population_scan(args):
    dh, dv = _pair(args.files)
    out = []
    for dt in parse_grid(args.windows_ns):
        est = window_populations(dh, dv, float(dt), bootstrap=args.bootstrap, rng=0)
        if args.eta is not None:
            est = correct_populations(est, args.eta, args.eta_err, args.inversion)
        out.append(est)
    return out


def cmd_populations(args) -> int:
    if args.out_corrected and args.eta is None:
        raise ValidationError("corrected populations need --eta")
    ests = _population_scan(args)
    write_csv(args.out, _POP_HEADER,
              [_pop_row(e.window, e.detected, e.detected_err, e.detected_cov) for e in ests])
    if args.out_corrected:
        write_csv(args.out_corrected, _POP_HEADER,
                  [_pop_row(e.window, e.corrected, e.corrected_err, e.corrected_cov) for e in ests])
    return 0


def _scan_from_manifest(path):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    th, nh, nv = [], [], []
    for r in rows:
        s = read_tagfile(path.parent / r["file"])
        th.append(float(r["theta_deg"]))
        nh.append(s.count(Channel.DH))
        nv.append(s.count(Channel.DV))
    return np.array(th), np.array(nh), np.array(nv)


def cmd_visibility(args) -> int:
    th, nh, nv = _scan_from_manifest(args.manifest)
    res = visibility_from_scan(th, nh, nv)
    write_csv(args.out, ["theta_deg", "nH", "nV", "pH", "pV"], zip(th, nh, nv, res.p_h, res.p_v))
    if args.json:
        write_json(args.json, {
            "V": res.V, "V_err": res.V_err, "V_fringes": res.V_fringes,
            "fringe_angles_deg": res.fringe_angles, "fit_V": res.fit_V,
            "fit_V_err": res.fit_V_err, "fit_A": res.fit_A, "fit_A_err": res.fit_A_err,
        })
    return 0


def cmd_concurrence(args) -> int:
    if args.eta is None:
        raise ValidationError("concurrence needs --eta for loss-corrected populations")
    if args.visibility_json:
        vis = json.loads(Path(args.visibility_json).read_text(encoding="utf-8"))
        V, V_err = vis["V"], vis.get("V_err") or 0.0
    elif args.V is not None:
        V, V_err = args.V, args.V_err
    else:
        raise ValidationError("give --V or --visibility-json")
    results = []
    for est in _population_scan(args):
        p0, p1, p2 = est.corrected
        y, y_err = contamination(p0, p1, p2, cov=est.corrected_cov)
        e0, e1, _ = est.corrected_err
        p_err = math.sqrt(max(est.corrected_cov[0, 0] + est.corrected_cov[1, 1]
                              + 2 * est.corrected_cov[0, 1], 0.0))
        r = concurrence(min(V, 1.0), y, p1, p0 + p1, V_err, y_err, e1, p_err, window=est.window)
        results.append(dataclasses.asdict(r))
    write_json(args.out, results)
    return 0


def cmd_oracle(args) -> int:
    m = G2Model(args.beta, args.gamma1, args.gamma2, args.rho)
    header = ["T_ns", "g2d_full", "g2d_simple", "mu", "p0", "p1", "p2", "yc_split"]
    if args.numeric:
        header.insert(2, "g2d_numeric")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for T in parse_grid(args.T_ns):
            T = float(T)
            pops = populations_from_g2(m, args.flux, T)
            # the two photons of p2 land in different paths half of the time
            yc, _ = contamination(pops.p0, pops.p1, pops.p2 / 2)
            row = [T, g2_detected_full(m, T), g2_detected_simple(m.gamma1, T), pops.mu,
                   pops.p0, pops.p1, pops.p2, yc]
            if args.numeric:
                row.insert(2, g2_detected_numeric(m, T))
            rows.append(row)
    write_csv(args.out, header, rows)
    return 0


# -- parser -----------------------------------------------------------------

def _add_model_args(p):
    p.add_argument("--beta", type=float, default=REFERENCE_G2.beta)
    p.add_argument("--gamma1", type=float, default=REFERENCE_G2.gamma1, help="per ns")
    p.add_argument("--gamma2", type=float, default=REFERENCE_G2.gamma2, help="per ns")
    p.add_argument("--rho", type=float, default=REFERENCE_G2.rho)


def _add_population_args(p):
    p.add_argument("files", nargs="+", help="one file with DH and DV, or DH file then DV file")
    p.add_argument("--windows-ns", default="2:100:2", help="start:stop:step or a list")
    p.add_argument("--eta", type=float, default=None, help="lumped detection efficiency")
    p.add_argument("--eta-err", type=float, default=0.0)
    p.add_argument("--inversion", choices=["verbatim", "self_consistent"], default="verbatim")
    p.add_argument("--bootstrap", type=int, default=0,
                   help="multinomial resamples for errors (0: analytic)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvpath", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate tag files from a config")
    p.add_argument("config")
    p.add_argument("--mode", choices=["cw", "pulsed", "coherent", "mz-scan"], required=True)
    p.add_argument("--out", required=True, help="tag file, or directory for mz-scan")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("g2", help="g2 histogram (and optional model fit)")
    p.add_argument("files", nargs="+")
    p.add_argument("--chan-a", default="DH")
    p.add_argument("--chan-b", default="DV")
    p.add_argument("--w-ns", type=float, default=1.0)
    p.add_argument("--tau-max-ns", type=float, default=200.0)
    p.add_argument("--centered", action="store_true", help="put a bin centered on zero delay")
    p.add_argument("--chunks", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--fit-json")
    p.add_argument("--fit-rho", action="store_true")
    _add_model_args(p)
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("lifetime", help="sync-referenced decay histogram")
    p.add_argument("file")
    p.add_argument("--bin-ps", type=int, default=25)
    p.add_argument("--channels", default=None, help="comma list, default all photon channels")
    p.add_argument("--cutoffs-ns", default="0:10:0.5")
    p.add_argument("--out", required=True)
    p.add_argument("--fit-json")
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("populations", help="window photon-number populations")
    _add_population_args(p)
    p.add_argument("--out", required=True, help="detected populations CSV")
    p.add_argument("--out-corrected", help="loss-corrected populations CSV (needs --eta)")
    p.set_defaults(func=cmd_populations)

    p = sub.add_parser("visibility", help="fringe visibility from an mz-scan manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_visibility)

    p = sub.add_parser("concurrence", help="normalized concurrence per window")
    _add_population_args(p)
    p.add_argument("--V", type=float, default=None)
    p.add_argument("--V-err", type=float, default=0.0)
    p.add_argument("--visibility-json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_concurrence)

    p = sub.add_parser("oracle", help="analytic window statistics over a T grid")
    _add_model_args(p)
    p.add_argument("--flux", type=float, default=1.507e5, help="photons/s")
    p.add_argument("--T-ns", default="2:100:2")
    p.add_argument("--numeric", action="store_true", help="add the quadrature column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NvpathError, ValueError, OSError, KeyError) as exc:
        print(f"nvpath {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
