"""Flat ``key = value`` experiment configuration.

Lines are UTF-8; ``#`` starts a comment; blank lines are ignored. Keys are
dotted and carry their unit as a suffix. Unknown and duplicate keys are
errors, and each simulate mode has its own set of required keys.
"""

from __future__ import annotations

from pathlib import Path

from nvpath.core import DetectorModel, EmitterModel, G2Model, ValidationError
from nvpath.emitter import ExcitationConfig, Mode, calibrate_rates, calibrate_to_flux
from nvpath.optics import OpticsConfig

# key -> (type, default); default None means "no default"
KEYS = {
    "emitter.r12_per_ns": (float, None),
    "emitter.flux_per_s": (float, None),
    "emitter.r21_per_ns": (float, None),
    "emitter.r23_per_ns": (float, None),
    "emitter.r31_per_ns": (float, None),
    "emitter.rho": (float, None),
    "emitter.beta": (float, 1.18),
    "emitter.gamma1_per_ns": (float, 0.035),
    "emitter.gamma2_per_ns": (float, 1.18e-4),
    "detector.eta": (float, None),
    "detector.dead_time_ns": (float, None),
    "detector.jitter_fwhm_ps": (float, None),
    "detector.dark_rate_per_s": (float, 0.0),
    "optics.theta_deg": (float, None),
    "optics.v_intrinsic": (float, None),
    "optics.split_ratio": (float, 0.5),
    "optics.phase_rad": (float, 0.0),
    "optics.mz_loss": (float, 0.5),
    "optics.scan_start_deg": (float, 0.0),
    "optics.scan_stop_deg": (float, 90.0),
    "optics.scan_step_deg": (float, 2.5),
    "sim.duration_s": (float, None),
    "sim.seed": (int, None),
    "sim.chunk_s": (float, 10.0),
    "sim.resolution_ps": (int, 25),
    "sim.pulse_rate_mhz": (float, 23.8),
    "sim.excitation_prob": (float, 1.0),
    "coherent.rate_per_s": (float, None),
}

_DETECTOR = ["detector.eta", "detector.dead_time_ns", "detector.jitter_fwhm_ps"]
_SIM = ["sim.duration_s", "sim.seed"]
_OPTICS = ["optics.theta_deg", "optics.v_intrinsic"]

REQUIRED = {
    "cw": ["emitter.rho"] + _DETECTOR + _OPTICS + _SIM,
    "pulsed": ["emitter.rho"] + _DETECTOR + _SIM,
    "coherent": ["coherent.rate_per_s"] + _DETECTOR + _OPTICS + _SIM,
    "mz-scan": _DETECTOR + ["optics.v_intrinsic"] + _SIM,
}


class Config(dict):
    """Parsed configuration; missing optional keys resolve to their defaults."""

    def get_value(self, key):
        if key in self:
            return self[key]
        default = KEYS[key][1]
        if default is None:
            raise ValidationError(f"config key {key!r} is required")
        return default

    def has(self, key) -> bool:
        return key in self


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        if key in cfg:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        typ = KEYS[key][0]
        try:
            cfg[key] = typ(value)
        except ValueError:
            raise ValidationError(f"line {lineno}: {key} expects {typ.__name__}, got {value!r}") from None
    return cfg


def load_config(path) -> Config:
    return parse_config(Path(path).read_text(encoding="utf-8"))


_EXPLICIT = ("emitter.r21_per_ns", "emitter.r23_per_ns", "emitter.r31_per_ns")


def check_required(cfg: Config, mode: str) -> None:
    """Raise :class:`ValidationError` listing every key ``mode`` needs but lacks."""
    missing = [k for k in REQUIRED[mode] if k not in cfg]
    uses_emitter = mode in ("cw", "pulsed") or (mode == "mz-scan" and "coherent.rate_per_s" not in cfg)
    if uses_emitter:
        if "emitter.rho" not in cfg:
            missing.append("emitter.rho")
        if not (cfg.has("emitter.r12_per_ns") or cfg.has("emitter.flux_per_s")
                or all(cfg.has(k) for k in _EXPLICIT)):
            missing.append("emitter.r12_per_ns (or emitter.flux_per_s)")
    if missing:
        raise ValidationError(f"missing config keys for {mode}: {', '.join(dict.fromkeys(missing))}")


def emitter_from_config(cfg: Config) -> EmitterModel:
    """Explicit rates if all of r21/r23/r31 are given, otherwise a calibration."""
    rho = cfg.get_value("emitter.rho")
    if all(cfg.has(k) for k in _EXPLICIT):
        m = EmitterModel(cfg.get("emitter.r12_per_ns", 0.0), cfg["emitter.r21_per_ns"],
                         cfg["emitter.r23_per_ns"], cfg["emitter.r31_per_ns"], rho)
        flux = float(m.total_flux()) if m.r12 > 0 else None
        return EmitterModel(m.r12, m.r21, m.r23, m.r31, rho, flux)
    target = G2Model(cfg.get_value("emitter.beta"), cfg.get_value("emitter.gamma1_per_ns"),
                     cfg.get_value("emitter.gamma2_per_ns"), rho)
    if cfg.has("emitter.r12_per_ns"):
        return calibrate_rates(target, cfg["emitter.r12_per_ns"])
    return calibrate_to_flux(target, cfg.get_value("emitter.flux_per_s"))


def detector_from_config(cfg: Config) -> DetectorModel:
    return DetectorModel(
        efficiency=cfg.get_value("detector.eta"),
        dead_time=int(round(cfg.get_value("detector.dead_time_ns") * 1000)),
        jitter_fwhm=cfg.get_value("detector.jitter_fwhm_ps"),
        dark_rate=cfg.get_value("detector.dark_rate_per_s"),
    )


def optics_from_config(cfg: Config, theta=None) -> OpticsConfig:
    return OpticsConfig(
        split_ratio=cfg.get_value("optics.split_ratio"),
        phase=cfg.get_value("optics.phase_rad"),
        hwp_angle=cfg.get_value("optics.theta_deg") if theta is None else float(theta),
        mz_loss=cfg.get_value("optics.mz_loss"),
        v_intrinsic=cfg.get_value("optics.v_intrinsic"),
    )


def excitation_from_config(cfg: Config, mode: Mode, duration=None, seed=None) -> ExcitationConfig:
    return ExcitationConfig(
        mode=mode,
        sim_duration=cfg.get_value("sim.duration_s") if duration is None else duration,
        rng_seed=cfg.get_value("sim.seed") if seed is None else seed,
        pulse_rate=cfg.get_value("sim.pulse_rate_mhz"),
        excitation_prob=cfg.get_value("sim.excitation_prob"),
        resolution=cfg.get_value("sim.resolution_ps"),
    )
