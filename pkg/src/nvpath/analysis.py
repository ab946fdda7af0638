"""Window populations, loss inversion, visibility, concurrence and model fits.

A state-generation window of length ``dt`` holds no detection (p0), clicks
on one detector only (p1) or clicks on both (p2). Loss correction, the
degree of contamination ``y_c`` and the normalized concurrence
``C_N = max(V - sqrt(y_c), 0)`` follow from those three numbers and the
interference visibility ``V``.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize

from nvpath._backend import kernels
from nvpath.core import (
    PS_PER_NS,
    ConcurrenceResult,
    FitError,
    G2Histogram,
    G2Model,
    PopulationEstimate,
    TagStream,
    ValidationError,
)

# ---------------------------------------------------------------------------
# window populations


def _multinomial_cov(p, n):
    p = np.asarray(p, dtype=float)
    return (np.diag(p) - np.outer(p, p)) / n


def window_populations(dh: TagStream, dv: TagStream, dt: float, bootstrap: int = 0,
                       rng=None) -> PopulationEstimate:
    """Classify consecutive windows of ``dt`` ns by which detectors clicked.

    ``[0, duration)`` is cut into ``W = duration // dt`` windows; the final
    partial window is dropped. Windows with two or more tags on a single
    detector count as p1 and are tallied in ``diagnostics['single_multi']``.

    Parameters
    ----------
    dh, dv : TagStream
        Tags of the two detectors; all tags in each stream are used.
    dt : float
        Window length in ns.
    bootstrap : int
        If positive, standard errors come from this many multinomial
        resamples of the window classes instead of the analytic formula.
    """
    if dh.duration != dv.duration:
        raise ValidationError(f"durations differ: {dh.duration} vs {dv.duration} ps")
    dt_ps = int(round(dt * PS_PER_NS))
    if dt_ps < max(dh.resolution, dv.resolution) or dt_ps <= 0:
        raise ValidationError("window shorter than the stream resolution")
    W = dh.duration // dt_ps
    if W <= 0:
        raise ValidationError("window longer than the acquisition")
    limit = W * dt_ps
    wa = np.ascontiguousarray(dh.times[dh.times < limit] // dt_ps)
    wb = np.ascontiguousarray(dv.times[dv.times < limit] // dt_ps)
    a_only, b_only, both, multi = (int(x) for x in kernels.classify_windows(wa, wb))
    n1 = a_only + b_only
    n0 = W - n1 - both
    counts = np.array([n0, n1, both], dtype=np.int64)
    p = counts / W
    cov = _multinomial_cov(p, W)
    if bootstrap > 0:
        gen = np.random.default_rng(rng)
        draws = gen.multinomial(W, p, size=int(bootstrap)) / W
        cov = np.atleast_2d(np.cov(draws, rowvar=False))
    err = tuple(float(x) for x in np.sqrt(np.clip(np.diag(cov), 0, None)))
    return PopulationEstimate(
        window=dt_ps / PS_PER_NS,
        window_count=int(W),
        detected=tuple(float(x) for x in p),
        detected_err=err,
        detected_cov=cov,
        diagnostics={
            "n0": int(n0), "n1": int(n1), "n2": int(both),
            "dh_only": a_only, "dv_only": b_only, "single_multi": multi,
        },
    )


# ---------------------------------------------------------------------------
# loss inversion


class CorrectedPopulations(NamedTuple):
    p: tuple
    err: tuple
    cov: np.ndarray
    clamped: bool


def _inversion(p1d, p2d, eta, mode):
    if mode == "verbatim":
        p2 = p2d / eta**2
        p1 = p1d / eta - 2.0 * (1.0 - eta) * p2d
        # rows: p1, p2; columns: p1d, p2d, eta
        J = np.array([
            [1.0 / eta, -2.0 * (1.0 - eta), -p1d / eta**2 + 2.0 * p2d],
            [0.0, 1.0 / eta**2, -2.0 * p2d / eta**3],
        ])
    elif mode == "self_consistent":
        p2 = p2d / eta**2
        p1 = p1d / eta - 2.0 * (1.0 - eta) * p2d / eta**2
        J = np.array([
            [1.0 / eta, -2.0 * (1.0 - eta) / eta**2,
             -p1d / eta**2 + 2.0 * p2d * (1.0 / eta**2 + 2.0 * (1.0 - eta) / eta**3)],
            [0.0, 1.0 / eta**2, -2.0 * p2d / eta**3],
        ])
    else:
        raise ValidationError(f"unknown inversion mode {mode!r}")
    return p1, p2, J


def invert_losses(detected: Sequence[float], eta: float, eta_err: float = 0.0,
                  cov: Optional[np.ndarray] = None, mode: str = "verbatim") -> CorrectedPopulations:
    """Undo binomial detection loss ``eta`` on ``(p0, p1, p2)``.

    ``mode='verbatim'`` uses the detected ``p2`` inside the ``p1``
    correction, ``p1 = (p1D - 2 eta (1 - eta) p2D) / eta``;
    ``mode='self_consistent'`` uses the corrected ``p2`` there instead.
    Negative results are clamped to zero and flagged. ``cov`` is the 3x3
    covariance of the detected triple; ``eta_err`` is treated as independent.
    """
    if not 0 < eta <= 1:
        raise ValidationError("eta must lie in (0, 1]")
    _, p1d, p2d = (float(x) for x in detected)
    p1, p2, J = _inversion(p1d, p2d, eta, mode)
    S = np.zeros((3, 3))
    if cov is not None:
        S[:2, :2] = np.asarray(cov, dtype=float)[1:, 1:]
    S[2, 2] = eta_err**2
    c12 = J @ S @ J.T
    # p0 = 1 - p1 - p2
    T = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    out_cov = T @ c12 @ T.T
    clamped = False
    if p1 < 0:
        p1, clamped = 0.0, True
    if p2 < 0:
        p2, clamped = 0.0, True
    p0 = 1.0 - p1 - p2
    if p0 < 0:
        p0, clamped = 0.0, True
    err = tuple(float(x) for x in np.sqrt(np.clip(np.diag(out_cov), 0, None)))
    return CorrectedPopulations((float(p0), float(p1), float(p2)), err, out_cov, clamped)


def correct_populations(est: PopulationEstimate, eta: float, eta_err: float = 0.0,
                        mode: str = "verbatim") -> PopulationEstimate:
    """Return ``est`` with its ``corrected`` fields filled in."""
    inv = invert_losses(est.detected, eta, eta_err, est.detected_cov, mode)
    return dataclasses.replace(est, corrected=inv.p, corrected_err=inv.err,
                               corrected_cov=inv.cov, eta=float(eta), clamped=inv.clamped)


def forward_losses(p: Sequence[float], eta: float):
    """Binomial thinning of a (p0, p1, p2) distribution, p2 taken as one photon per detector.

    Inverse of :func:`invert_losses` in ``self_consistent`` mode.
    """
    p0, p1, p2 = p
    p2d = eta**2 * p2
    p1d = eta * p1 + 2.0 * eta * (1.0 - eta) * p2
    return 1.0 - p1d - p2d, p1d, p2d


def detection_efficiency(P: float, eta_filters: float, P_D: float, qe_ratio: float = 1.0,
                         P_rel_err: float = 0.0, filters_rel_err: float = 0.0,
                         P_D_rel_err: float = 0.0):
    """Lumped detection efficiency from attenuated power measurements.

    ``eta_D = P_D / (P eta_filters) * qe_ratio``, all powers in the same
    unit. Relative input errors add in quadrature. Returns ``(eta, err)``.
    """
    for name, v in (("P", P), ("eta_filters", eta_filters), ("P_D", P_D), ("qe_ratio", qe_ratio)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive")
    eta = P_D / (P * eta_filters) * qe_ratio
    rel = np.sqrt(P_rel_err**2 + filters_rel_err**2 + P_D_rel_err**2)
    return float(eta), float(eta * rel)


# ---------------------------------------------------------------------------
# contamination and concurrence


def contamination(p0: float, p1: float, p2: float, N: int = 2, cov=None):
    """Degree of two-photon contamination ``2 N/(N-1) p2 p0 / p1^2``.

    ``cov`` is an optional 3x3 covariance of ``(p0, p1, p2)``. Returns
    ``(y_c, err)``.
    """
    if N < 2:
        raise ValidationError("number of modes must be at least 2")
    if not p1 > 0:
        raise ValidationError("contamination undefined for p1 = 0")
    k = 2.0 * N / (N - 1)
    y = k * p2 * p0 / p1**2
    err = 0.0
    if cov is not None:
        g = np.array([k * p2 / p1**2, -2.0 * k * p2 * p0 / p1**3, k * p0 / p1**2])
        err = float(np.sqrt(max(g @ np.asarray(cov, float) @ g, 0.0)))
    return float(y), err


def concurrence(V: float, y_c: float, p1: float, p: float, V_err: float = 0.0,
                y_c_err: float = 0.0, p1_err: float = 0.0, p_err: float = 0.0,
                window: float = float("nan")) -> ConcurrenceResult:
    """Normalized concurrence and its rescaling to all generated states.

    ``C_N = max(V - sqrt(y_c), 0)``, ``C = C_N p1 / p`` and ``pC = C_N p1``.
    Errors are first order; when the clamp is active the unclamped error is
    kept and ``clamped`` is set.
    """
    if not 0 <= V <= 1:
        raise ValidationError("V must lie in [0, 1]")
    if not y_c >= 0:
        raise ValidationError("y_c must be non-negative")
    if not 0 < p1 <= p <= 1:
        raise ValidationError("need 0 < p1 <= p <= 1")
    s = np.sqrt(y_c)
    raw = V - s
    ds = y_c_err / (2 * s) if s > 0 else np.sqrt(y_c_err)
    cn_err = float(np.hypot(V_err, ds))
    clamped = raw < 0
    cn = max(raw, 0.0)
    C = cn * p1 / p
    rel = np.sqrt((p1_err / p1) ** 2 + (p_err / p) ** 2)
    c_err = float(np.hypot(cn_err * p1 / p, C * rel))
    return ConcurrenceResult(
        window=float(window), V=float(V), V_err=float(V_err), y_c=float(y_c),
        y_c_err=float(y_c_err), C_N=float(cn), C_N_err=cn_err, C=float(C), C_err=c_err,
        pC=float(cn * p1), clamped=bool(clamped),
    )


# ---------------------------------------------------------------------------
# visibility


class VisibilityResult(NamedTuple):
    V: float
    V_err: float
    V_fringes: np.ndarray
    fringe_angles: np.ndarray
    fit_V: float
    fit_V_err: float
    fit_A: float
    fit_A_err: float
    p_h: np.ndarray
    p_v: np.ndarray


def visibility_from_scan(theta, n_h, n_v) -> VisibilityResult:
    """Fringe visibility from a half-wave-plate scan.

    ``V`` is the mean of ``|P_H - P_V|`` at the scanned angles nearest the
    fringe extrema ``22.5 + 45 k`` degrees. Its error is the larger of the
    standard error over fringes and the binomial counting error. A collective
    weighted fit of ``N_H = A (1 + V sin 4theta) / 2``,
    ``N_V = A (1 - V sin 4theta) / 2`` is reported alongside.
    """
    theta = np.asarray(theta, dtype=float)
    n_h = np.asarray(n_h, dtype=float)
    n_v = np.asarray(n_v, dtype=float)
    if not (theta.shape == n_h.shape == n_v.shape) or theta.ndim != 1:
        raise ValidationError("theta, n_h and n_v must be equal-length 1-d arrays")
    if len(theta) < 8:
        raise ValidationError("need at least 8 scan angles")
    if theta.max() - theta.min() < 90.0 - 1e-9:
        raise ValidationError("scan must cover one full fringe period (90 deg)")
    tot = n_h + n_v
    if not tot.sum() > 0:
        raise ValidationError("degenerate scan: all counts are zero")
    with np.errstate(invalid="ignore", divide="ignore"):
        p_h = np.where(tot > 0, n_h / tot, np.nan)
    p_v = 1.0 - p_h

    # linear weighted fit in (A/2, A V/2)
    s = np.sin(np.deg2rad(4 * theta))
    X = np.block([[np.ones_like(s)[:, None], s[:, None]], [np.ones_like(s)[:, None], -s[:, None]]])
    y = np.concatenate([n_h, n_v])
    sig = np.sqrt(np.maximum(y, 1.0))
    coef, *_ = np.linalg.lstsq(X / sig[:, None], y / sig, rcond=None)
    cov = np.linalg.inv((X / sig[:, None]).T @ (X / sig[:, None]))
    a, b = coef
    fit_A = 2 * a
    fit_V = b / a
    g = np.array([-b / a**2, 1.0 / a])
    fit_V_err = float(np.sqrt(g @ cov @ g))

    lo = int(np.ceil((theta.min() - 22.5) / 45.0 - 1e-9))
    hi = int(np.floor((theta.max() - 22.5) / 45.0 + 1e-9))
    targets = 22.5 + 45.0 * np.arange(lo, hi + 1)
    idx = np.array([int(np.argmin(np.abs(theta - t))) for t in targets], dtype=int)
    idx = idx[tot[idx] > 0]
    if not len(idx):
        raise ValidationError("no counts at the fringe extrema")
    vk = np.abs(p_h[idx] - p_v[idx])
    V = float(vk.mean())
    # counting error of the mean; the spread over fringes is used when larger
    count_err = float(np.sqrt(np.sum(4.0 * p_h[idx] * p_v[idx] / tot[idx])) / len(idx))
    spread_err = float(vk.std(ddof=1) / np.sqrt(len(vk))) if len(vk) > 1 else 0.0
    V_err = max(count_err, spread_err)
    return VisibilityResult(V, V_err, vk, theta[idx], float(fit_V), fit_V_err, float(fit_A),
                            float(2 * np.sqrt(cov[0, 0])), p_h, p_v)


# ---------------------------------------------------------------------------
# g2 fit


class G2Fit(NamedTuple):
    model: G2Model
    cov: np.ndarray
    names: tuple
    perr: np.ndarray
    chi2_red: float
    nfev: int


def rho_from_counts(signal: float, background: float) -> float:
    """Signal fraction ``S / (S + B)``."""
    if signal <= 0 or background < 0:
        raise ValidationError("need signal > 0 and background >= 0")
    return signal / (signal + background)


def _pooled_sigma(counts, norm):
    c = np.asarray(counts, dtype=float)
    pooled = c.copy()
    zero = np.flatnonzero(c == 0)
    for i in zero:
        k = 1
        while True:
            nb = c[max(i - k, 0): i + k + 1]
            nz = nb[nb > 0]
            if len(nz) or k > len(c):
                pooled[i] = nz.mean() if len(nz) else 1.0
                break
            k += 1
    return np.sqrt(np.maximum(pooled, 1.0)) / norm


def _g2_terms(tau, beta, g1, g2):
    at = np.abs(tau)
    E1 = np.exp(-g1 * at)
    E2 = np.exp(-g2 * at)
    return at, E1, E2


def fit_g2(hist: G2Histogram, initial: G2Model, fit_rho: bool = False,
           rho: Optional[float] = None, max_iter: int = 200, xtol: float = 1e-8) -> G2Fit:
    """Weighted least-squares fit of the three-level model with background.

    ``rho`` is held at ``rho`` (or ``initial.rho``) unless ``fit_rho``.
    Weights are Poisson standard errors; empty bins borrow the mean count of
    the nearest non-empty neighbours. Raises :class:`FitError` on
    non-convergence, singular normal equations or a dip narrower than a bin.
    """
    if hist.counts.sum() == 0:
        raise FitError("histogram is empty")
    if not initial.gamma1 > initial.gamma2 > 0:
        raise ValidationError("initial guess needs gamma1 > gamma2 > 0")
    tau = hist.tau
    y = hist.g2
    sig = _pooled_sigma(hist.counts, hist.norm)
    rho0 = initial.rho if rho is None else float(rho)

    def unpack(x):
        return (x[0], x[1], x[2], x[3]) if fit_rho else (x[0], x[1], x[2], rho0)

    def resid(x):
        b, g1, g2, r = unpack(x)
        _, E1, E2 = _g2_terms(tau, b, g1, g2)
        m = 1.0 - r * r * b * E1 + r * r * (b - 1.0) * E2
        return (m - y) / sig

    def jac(x):
        b, g1, g2, r = unpack(x)
        at, E1, E2 = _g2_terms(tau, b, g1, g2)
        r2 = r * r
        cols = [r2 * (E2 - E1), r2 * b * at * E1, -r2 * (b - 1.0) * at * E2]
        if fit_rho:
            cols.append(2 * r * (-b * E1 + (b - 1.0) * E2))
        return np.column_stack(cols) / sig[:, None]

    x0 = [initial.beta, initial.gamma1, initial.gamma2] + ([rho0] if fit_rho else [])
    lb = [0.0, 0.0, 0.0] + ([0.0] if fit_rho else [])
    ub = [np.inf, np.inf, np.inf] + ([1.0] if fit_rho else [])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = optimize.least_squares(resid, x0, jac=jac, bounds=(lb, ub), x_scale="jac",
                                     xtol=xtol, ftol=1e-12, gtol=1e-12, max_nfev=max_iter)
    if not np.all(np.isfinite(sol.x)) or not np.isfinite(sol.cost):
        raise FitError("fit produced non-finite parameters")
    if sol.status == 0:
        raise FitError(f"g2 fit did not converge in {max_iter} evaluations "
                       f"(cost {sol.cost:.6g})")
    b, g1, g2, r = unpack(sol.x)
    if np.any(sol.active_mask[:3] != 0):
        bound = [n for n, a in zip(("beta", "gamma1", "gamma2"), sol.active_mask) if a]
        raise FitError(f"fit is degenerate: {', '.join(bound)} pinned at its bound")
    if g1 * hist.w > 5.0:
        raise FitError("antibunching dip narrower than one bin: fit is degenerate")
    if not g1 > g2 > 0:
        raise FitError(f"fit left the admissible region (gamma1={g1:.4g}, gamma2={g2:.4g})")
    J = sol.jac
    JTJ = J.T @ J
    if np.linalg.cond(JTJ) > 1e14:
        raise FitError("singular normal equations")
    cov = np.linalg.inv(JTJ)
    perr = np.sqrt(np.diag(cov))
    if not np.all(np.isfinite(perr)) or perr[0] > 10 * max(abs(b), 1.0):
        raise FitError("fit is degenerate: beta is not constrained by the data")
    if perr[1] > g1:
        raise FitError("fit is degenerate: gamma1 is not constrained by the data")
    names = ("beta", "gamma1", "gamma2") + (("rho",) if fit_rho else ())
    dof = max(len(y) - len(sol.x), 1)
    return G2Fit(G2Model(float(b), float(g1), float(g2), float(r)), cov, names, perr,
                 float(2 * sol.cost / dof), int(sol.nfev))


# ---------------------------------------------------------------------------
# lifetime fit


class LifetimeFit(NamedTuple):
    cutoff: float
    gamma: float
    gamma_err: float
    alpha: float
    alpha_err: float
    background: float
    background_err: float
    chi2_red: float


class LifetimeScan(NamedTuple):
    fits: list
    gamma: float
    plateau_cutoff: Optional[float]
    converged: bool


def _fit_decay(t, c, cutoff, t_max=np.inf, min_counts=50):
    sel = (t >= cutoff) & (t < t_max)
    t, c = t[sel], c[sel].astype(float)
    if len(t) < 4:
        raise FitError(f"insufficient bins after cutoff {cutoff} ns")
    tail = c[-max(len(c) // 10, 1):]
    bg0 = float(np.median(tail))
    sig_counts = float((c - bg0).clip(min=0).sum())
    if sig_counts < min_counts:
        raise FitError(f"insufficient post-cutoff counts at cutoff {cutoff} ns")
    pos = c - bg0 > 0.2 * c.max()
    if pos.sum() >= 2:
        k, lna = np.polyfit(t[pos], np.log(c[pos] - bg0), 1)
        g0, a0 = max(-k, 1e-4), np.exp(lna)
    else:
        g0, a0 = 0.05, max(c[0] - bg0, 1.0)
    sig = np.sqrt(np.maximum(c, 1.0))

    def resid(x):
        a, g, bg = x
        return (a * np.exp(-g * t) + bg - c) / sig

    def jac(x):
        a, g, _ = x
        e = np.exp(-g * t)
        return np.column_stack([e, -a * t * e, np.ones_like(t)]) / sig[:, None]

    sol = optimize.least_squares(resid, [a0, g0, max(bg0, 0.0)], jac=jac,
                                 bounds=([0, 0, -np.inf], [np.inf, np.inf, np.inf]),
                                 x_scale="jac", xtol=1e-10, max_nfev=500)
    if sol.status <= 0:
        raise FitError(f"decay fit did not converge at cutoff {cutoff} ns")
    JTJ = sol.jac.T @ sol.jac
    try:
        perr = np.sqrt(np.diag(np.linalg.inv(JTJ)))
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal equations in decay fit") from exc
    a, g, bg = sol.x
    return LifetimeFit(float(cutoff), float(g), float(perr[1]), float(a), float(perr[0]),
                       float(bg), float(perr[2]), float(2 * sol.cost / max(len(t) - 3, 1)))


def fit_lifetime(hist, cutoffs: Sequence[float], plateau_tol: float = 0.02,
                 end_guard: float = 0.0) -> LifetimeScan:
    """Fit ``alpha exp(-gamma t) + bg`` for ``t >= cutoff`` at each cutoff (ns).

    ``t`` is the bin center measured from the SYNC, so ``alpha`` refers to
    ``t = 0`` for every cutoff. The recommended ``gamma`` is the first one
    whose change from the previous cutoff is below ``plateau_tol``; if none
    qualifies the last fit is returned with ``converged=False``.

    ``end_guard`` (ns) drops the last part of the period, where timing
    jitter wraps early photons of the next pulse back onto the tail. A
    final bin cut short by the period is never fitted.
    """
    cutoffs = sorted(float(c) for c in cutoffs)
    if not cutoffs:
        raise ValidationError("need at least one cutoff")
    # only whole bins that end before the guarded end of the period
    full = hist.edges[1:] <= hist.period_ps / 1000.0 - end_guard + 1e-9
    t = (hist.edges[:-1] + 0.5 * np.diff(hist.edges))[full]
    counts = np.asarray(hist.counts)[full]
    fits = [_fit_decay(t, counts, c) for c in cutoffs]
    for prev, cur in zip(fits, fits[1:]):
        if abs(cur.gamma - prev.gamma) < plateau_tol * prev.gamma:
            return LifetimeScan(fits, cur.gamma, cur.cutoff, True)
    return LifetimeScan(fits, fits[-1].gamma, None, False)
