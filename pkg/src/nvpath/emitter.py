"""Kinetic Monte Carlo of a three-level emitter and rate calibration.

Levels are 1 (ground), 2 (excited) and 3 (metastable shelf). Under CW
pumping the chain moves 1->2 at ``r12``, 2->1 at ``r21`` (emitting a
photon), 2->3 at ``r23`` and 3->1 at ``r31``. Its normalized intensity
autocorrelation is exactly

    g2(tau) = 1 - beta exp(-gamma1 |tau|) + (beta - 1) exp(-gamma2 |tau|)

with ``gamma1 + gamma2 = P``, ``gamma1 gamma2 = Q`` (the trace and the sum
of principal 2x2 minors of the rate matrix) and the initial slope
``g2'(0) = r12 / n2 = beta gamma1 - (beta - 1) gamma2``. With ``r12``
fixed those three relations invert in closed form, which is what
:func:`calibrate_rates` does.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from nvpath._backend import kernels
from nvpath.core import (
    DEFAULT_RESOLUTION_PS,
    PS_PER_NS,
    PS_PER_S,
    CalibrationError,
    Channel,
    EmitterModel,
    G2Model,
    TagStream,
    ValidationError,
    merge_streams,
    quantize,
)

_BUF = 1 << 18
_OUT = 1 << 16


class Mode(str, enum.Enum):
    CW = "cw"
    PULSED = "pulsed"


@dataclass(frozen=True)
class ExcitationConfig:
    """How the emitter is driven.

    ``pulse_rate`` is in MHz, ``sim_duration`` in seconds. The pulse period
    is rounded to whole picoseconds; :attr:`pulse_period_ps` is the value
    actually simulated.
    """

    mode: Mode = Mode.CW
    sim_duration: float = 1.0
    rng_seed: int = 0
    pulse_rate: float = 23.8
    excitation_prob: float = 1.0
    resolution: int = DEFAULT_RESOLUTION_PS

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not np.isfinite(self.sim_duration) or self.sim_duration <= 0:
            raise ValidationError(f"sim_duration must be positive, got {self.sim_duration}")
        if self.mode is Mode.PULSED and not self.pulse_rate > 0:
            raise ValidationError("pulsed excitation needs pulse_rate > 0")
        if not 0 <= self.excitation_prob <= 1:
            raise ValidationError("excitation_prob must lie in [0, 1]")
        if self.resolution <= 0:
            raise ValidationError("resolution must be positive")

    @property
    def duration_ps(self) -> int:
        return int(round(self.sim_duration * PS_PER_S))

    @property
    def pulse_period_ps(self) -> int:
        return int(round(1e6 / self.pulse_rate))


# -- analytic side -----------------------------------------------------------

def rate_matrix(model: EmitterModel) -> np.ndarray:
    """Generator of the population dynamics dn/dt = M n, per ns."""
    r12, r21, r23, r31 = model.r12, model.r21, model.r23, model.r31
    return np.array(
        [
            [-r12, r21, r31],
            [r12, -(r21 + r23), 0.0],
            [0.0, r23, -r31],
        ]
    )


def rates_g2_curve(model: EmitterModel, tau) -> np.ndarray:
    """Signal-only g2 of the rate model by direct matrix exponentials.

    Excited population after a photon (system reset to level 1), divided by
    its steady-state value. Independent of the eigen-decomposition below.
    """
    m = rate_matrix(model)
    n2 = model.stationary()[1]
    e1 = np.array([1.0, 0.0, 0.0])
    tau = np.abs(np.atleast_1d(np.asarray(tau, dtype=float)))
    return np.array([(linalg.expm(m * t) @ e1)[1] / n2 for t in tau])


def rates_to_g2(model: EmitterModel) -> G2Model:
    """Read (beta, gamma1, gamma2) off the eigen-decomposition of the rate matrix."""
    m = rate_matrix(model)
    lam, vec = np.linalg.eig(m)
    lam, vec = lam.real, vec.real
    coef = np.linalg.solve(vec, np.array([1.0, 0.0, 0.0]))
    amp = vec[1] * coef
    zero = int(np.argmin(np.abs(lam)))
    n2 = amp[zero]
    others = [k for k in range(3) if k != zero]
    others.sort(key=lambda k: lam[k])  # most negative first: gamma1
    k1, k2 = others
    a1, a2 = amp[k1] / n2, amp[k2] / n2
    gamma1, gamma2 = -lam[k1], -lam[k2]
    if gamma2 < 0 or gamma1 <= gamma2:
        raise CalibrationError(f"rate matrix has unusable spectrum {lam}")
    # g2 = 1 + a1 e^{-g1 t} + a2 e^{-g2 t}, a1 + a2 = -1
    return G2Model(beta=-a1, gamma1=gamma1, gamma2=gamma2, rho=model.rho)


def _closed_form(target: G2Model, r12: float):
    p = target.gamma1 + target.gamma2
    q = target.gamma1 * target.gamma2
    slope = target.beta * target.gamma1 - (target.beta - 1.0) * target.gamma2
    if slope <= 0:
        raise CalibrationError(f"target has non-positive initial slope {slope}")
    r31 = q / slope
    r23 = r31 * (slope - p + r31) / r12
    r21 = p - r12 - r31 - r23
    return r21, r23, r31


def feasible_pump_range(target: G2Model):
    """Interval of r12 (per ns) for which the calibrated rates are all >= 0."""
    p = target.gamma1 + target.gamma2
    slope = target.beta * target.gamma1 - (target.beta - 1.0) * target.gamma2
    if slope <= 0:
        raise CalibrationError(f"target has non-positive initial slope {slope}")
    r31 = target.gamma1 * target.gamma2 / slope
    c = r31 * (slope - p + r31)
    if c < -1e-15 * p * p:
        raise CalibrationError(f"beta={target.beta} < 1 cannot be reached by a shelving level")
    c = max(c, 0.0)
    # r21(a) = (p - r31) - a - c / a >= 0
    b = p - r31
    disc = b * b - 4.0 * c
    if disc <= 0:
        raise CalibrationError("no pump rate gives non-negative r21 for this target")
    root = np.sqrt(disc)
    return (b - root) / 2.0, (b + root) / 2.0


def calibrate_rates(target: G2Model, pump_hint: float, rtol: float = 1e-3) -> EmitterModel:
    """Rates reproducing ``target`` exactly, with ``r12 = pump_hint`` (per ns).

    The result is checked against the numerical eigen-decomposition of the
    rate matrix; a mismatch beyond ``rtol`` raises :class:`CalibrationError`.
    """
    if not pump_hint > 0:
        raise CalibrationError("pump_hint must be positive")
    r21, r23, r31 = _closed_form(target, pump_hint)
    if target.beta == 1.0:
        r23 = 0.0  # exact: no shelving term
        r21 = target.gamma1 - pump_hint
    if min(r21, r23, r31) < -1e-12 or r21 <= 0:
        lo, hi = feasible_pump_range(target)
        raise CalibrationError(
            f"pump {pump_hint:g}/ns gives infeasible rates r21={r21:.4g}, r23={r23:.4g}, "
            f"r31={r31:.4g}; feasible pump range is [{lo:.4g}, {hi:.4g}] /ns"
        )
    model = EmitterModel(pump_hint, r21, max(r23, 0.0), max(r31, 0.0), rho=target.rho)
    model = EmitterModel(
        model.r12, model.r21, model.r23, model.r31, model.rho, mean_flux=float(model.total_flux())
    )
    got = rates_to_g2(model) if model.r23 > 0 else G2Model(1.0, model.r12 + model.r21, target.gamma2, target.rho)
    resid = max(
        abs(got.beta - target.beta) / target.beta,
        abs(got.gamma1 - target.gamma1) / target.gamma1,
        abs(got.gamma2 - target.gamma2) / max(target.gamma2, 1e-300) if target.beta != 1.0 else 0.0,
    )
    if resid > rtol:
        raise CalibrationError(f"calibrated rates miss the target: relative residual {resid:.3g}")
    return model


def pump_for_flux(target: G2Model, flux: float) -> float:
    """Weak-pump r12 (per ns) at which signal plus background reaches ``flux`` photons/s.

    The signal rate vanishes at both ends of the feasible pump interval;
    the root below its maximum is returned.
    """
    lo, hi = feasible_pump_range(target)
    want = flux * target.rho * 1e-9  # signal photons per ns

    def signal(a):
        r21, r23, r31 = _closed_form(target, a)
        if r21 <= 0:
            return 0.0
        return EmitterModel(a, r21, max(r23, 0.0), r31, target.rho).signal_rate()

    eps = (hi - lo) * 1e-12
    best = optimize.minimize_scalar(
        lambda a: -signal(a), bounds=(lo + eps, hi - eps), method="bounded",
        options={"xatol": (hi - lo) * 1e-10},
    )
    if signal(best.x) < want:
        raise CalibrationError(
            f"flux {flux:g}/s exceeds the maximum {signal(best.x) / target.rho * 1e9:.4g}/s for this target"
        )
    return optimize.brentq(lambda a: signal(a) - want, lo + eps, best.x, xtol=1e-16, rtol=1e-14)


def calibrate_to_flux(target: G2Model, flux: float) -> EmitterModel:
    """Rates matching both ``target`` and a total photon flux in photons/s."""
    return calibrate_rates(target, pump_for_flux(target, flux))


# -- stochastic side ---------------------------------------------------------

class _Draws:
    """Sequential buffer over one numpy generator; refills are invisible to consumers."""

    def __init__(self, gen, kind):
        self.gen = gen
        self.kind = kind
        self.buf = np.empty(0)
        self.pos = 0

    def view(self, need=1):
        if len(self.buf) - self.pos < need:
            if self.kind == "exp":
                fresh = self.gen.standard_exponential(_BUF)
            else:
                fresh = self.gen.random(_BUF)
            self.buf = np.concatenate([self.buf[self.pos:], fresh])
            self.pos = 0
        return self.buf[self.pos:]

    def advance(self, n):
        self.pos += n


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    e, u, b = (np.random.default_rng(s) for s in ss.spawn(3))
    return _Draws(e, "exp"), _Draws(u, "uni"), b


def _background(rng, model, n_signal, start, end):
    """Homogeneous Poisson background over ``[start, end)`` ps.

    With a calibrated ``mean_flux`` the rate is ``(1 - rho) * mean_flux``,
    otherwise it is scaled from the signal count realized in the span.
    """
    rho = model.rho
    if rho >= 1.0 or end <= start:
        return np.empty(0, np.int64)
    if model.mean_flux is not None:
        mean = (1.0 - rho) * model.mean_flux * (end - start) / PS_PER_S
    else:
        mean = n_signal * (1.0 - rho) / rho
    n = rng.poisson(mean)
    return np.sort(rng.integers(start, end, size=n, dtype=np.int64))


def _check_model(model: EmitterModel):
    if not isinstance(model, EmitterModel):
        raise ValidationError("model must be an EmitterModel")


def iter_cw(model: EmitterModel, cfg: ExcitationConfig, chunk_s: float = 10.0):
    """Yield consecutive CW emission chunks as AUX :class:`TagStream` objects.

    The signal trajectory does not depend on ``chunk_s``. Background is
    drawn per chunk (see :func:`_background`).
    """
    _check_model(model)
    if cfg.mode is not Mode.CW:
        raise ValidationError("iter_cw needs a CW ExcitationConfig")
    duration = cfg.duration_ps
    res = cfg.resolution
    chunk = max(int(round(chunk_s * PS_PER_S)), 1)
    exps, unis, bg_rng = _streams(cfg.rng_seed)

    n_stat = model.stationary()
    u0 = unis.view()[0]
    unis.advance(1)
    state = 1 + int(np.searchsorted(np.cumsum(n_stat), u0, side="right"))
    state = min(state, 3)
    t, frac, done = 0, 0.0, False
    per_ps = [r / PS_PER_NS for r in (model.r12, model.r21, model.r23, model.r31)]
    out = np.empty(_OUT, np.int64)
    pending = []
    pending_last = -1

    start = 0
    while start < duration:
        end = min(start + chunk, duration)
        while not done and pending_last < end:
            n, ie, iu, state, t, frac, done = kernels.kmc_cw(
                exps.view(), unis.view(), *per_ps, state, t, frac, duration, out
            )
            exps.advance(ie)
            unis.advance(iu)
            if n:
                pending.append(out[:n].copy())
                pending_last = int(out[n - 1])
        allp = np.concatenate(pending) if pending else np.empty(0, np.int64)
        cut = int(np.searchsorted(allp, end, side="left"))
        sig, rest = allp[:cut], allp[cut:]
        pending = [rest] if len(rest) else []
        pending_last = int(rest[-1]) if len(rest) else -1
        bg = _background(bg_rng, model, len(sig), start, end)
        times = quantize(np.concatenate([sig, bg]), res)
        part = TagStream.single_channel(np.sort(times, kind="stable"), Channel.AUX, end, res)
        yield merge_streams(part, dedup=True)
        start = end


def simulate_cw(model: EmitterModel, cfg: ExcitationConfig, chunk_s: float = 10.0) -> TagStream:
    """Full CW emission stream (channel AUX) over ``cfg.sim_duration``."""
    parts = list(iter_cw(model, cfg, chunk_s))
    times = np.concatenate([p.times for p in parts])
    return TagStream.single_channel(times, Channel.AUX, cfg.duration_ps, cfg.resolution)


def simulate_pulsed(model: EmitterModel, cfg: ExcitationConfig) -> TagStream:
    """Pulsed emission: SYNC at every pulse plus AUX photons.

    Each pulse is a delta excitation 1->2 with ``cfg.excitation_prob`` when
    the emitter sits in level 1; ``model.r12`` (the CW pump) is not used.
    """
    _check_model(model)
    if cfg.mode is not Mode.PULSED:
        raise ValidationError("simulate_pulsed needs a PULSED ExcitationConfig")
    duration = cfg.duration_ps
    period = cfg.pulse_period_ps
    n_pulses = (duration - 1) // period + 1
    exps, unis, bg_rng = _streams(cfg.rng_seed)
    per_ps = [r / PS_PER_NS for r in (model.r21, model.r23, model.r31)]
    out = np.empty(_OUT, np.int64)
    chunks = []
    k, state = 0, 1
    while k < n_pulses:
        n, ie, iu, k, state = kernels.kmc_pulsed(
            exps.view(2), unis.view(2), *per_ps, cfg.excitation_prob, period, k, n_pulses, state, out
        )
        exps.advance(ie)
        unis.advance(iu)
        if n:
            chunks.append(out[:n].copy())
    sig = np.concatenate(chunks) if chunks else np.empty(0, np.int64)
    sig = sig[sig <= duration]
    bg = _background(bg_rng, model, len(sig), 0, duration + 1)
    res = cfg.resolution
    photons = TagStream.single_channel(
        np.sort(quantize(np.concatenate([sig, bg]), res)), Channel.AUX, duration, res
    )
    sync = TagStream.single_channel(
        quantize(np.arange(n_pulses, dtype=np.int64) * period, res), Channel.SYNC, duration, res
    )
    return merge_streams(sync, photons, dedup=True)
