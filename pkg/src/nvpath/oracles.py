"""Reference values for the correlation model and window statistics.

For a stationary field the detected zero-delay correlation over a counting
window ``T`` is the window-averaged g2,

    g2_D(0) = (2 / T^2) int_t^{t+T} dt' int_0^{t - t' + T} g2(u) du,

which :func:`g2_detected_numeric` integrates by adaptive quadrature and
:func:`g2_detected_simple` / :func:`g2_detected_full` give in closed form.
"""

from __future__ import annotations

import warnings
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy import integrate

from nvpath.core import G2Model, NvpathError, ValidationError

_SERIES_X = 1e-3


def g2_model(tau, m: G2Model, with_background: bool = False):
    """Three-level correlation at delay ``tau`` (ns); ``rho``-scaled on request."""
    tau = np.abs(np.asarray(tau, dtype=float))
    r2 = m.rho**2 if with_background else 1.0
    out = 1.0 - r2 * m.beta * np.exp(-m.gamma1 * tau) + r2 * (m.beta - 1.0) * np.exp(-m.gamma2 * tau)
    return float(out) if out.ndim == 0 else out


def g2_detected_numeric(g2: Union[G2Model, Callable], T: float,
                        epsabs: float = 1e-10, epsrel: float = 1e-10) -> float:
    """Window-averaged g2 by nested adaptive quadrature of the double integral.

    ``g2`` is either a :class:`G2Model` (evaluated with background) or any
    callable of the delay in ns.
    """
    if not T > 0:
        raise ValidationError("window T must be positive")
    if isinstance(g2, G2Model):
        m = g2
        f = lambda u: g2_model(u, m, with_background=True)  # noqa: E731
    else:
        f = g2
    t0 = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.dblquad(
                lambda u, tp: f(u),
                t0, t0 + T,
                lambda tp: 0.0,
                lambda tp: (t0 - tp) + T,
                epsabs=epsabs, epsrel=epsrel,
            )
        except integrate.IntegrationWarning as exc:
            raise NvpathError(f"quadrature did not converge for T={T}: {exc}") from exc
    return 2.0 * val / T**2


def g2_detected_simple(gamma: float, T: float) -> float:
    """Window average of ``1 - exp(-gamma |tau|)``.

    ``(1 - e^{-x} + x^2/2 - x) / (x^2/2)`` with ``x = gamma T``; a Taylor
    series takes over below ``x = 1e-3``.
    """
    if not (gamma > 0 and T > 0):
        raise ValidationError("gamma and T must be positive")
    x = gamma * T
    if x < _SERIES_X:
        return x / 3 - x**2 / 12 + x**3 / 60 - x**4 / 360 + x**5 / 2520
    return float((-np.expm1(-x) + x * x / 2 - x) / (x * x / 2))


def _window_kernel(x):
    """``(2 / x^2) (x - 1 + e^{-x})``: window average of ``exp(-gamma |tau|)``."""
    if x < _SERIES_X:
        return 1 - x / 3 + x**2 / 12 - x**3 / 60 + x**4 / 360
    return 2.0 * (x + np.expm1(-x)) / (x * x)


def g2_detected_full(m: G2Model, T: float) -> float:
    """Closed-form window average of the background-corrected three-level model.

    Regrouped as ``1 - rho^2 beta K(gamma1 T) + rho^2 (beta - 1) K(gamma2 T)``,
    which is algebraically the expanded exponential form but free of the
    ``e^{+gamma T}`` overflow and of cancellation at small ``gamma2 T``.
    """
    if not (m.gamma1 > 0 and m.gamma2 > 0 and T > 0):
        raise ValidationError("gamma1, gamma2 and T must be positive")
    r2 = m.rho**2
    return float(
        1.0
        - r2 * m.beta * _window_kernel(m.gamma1 * T)
        + r2 * (m.beta - 1.0) * _window_kernel(m.gamma2 * T)
    )


def g2_detected_full_expanded(m: G2Model, T: float) -> float:
    """Term-by-term transcription of the expanded closed form (no regrouping).

    Kept as a cross-check for :func:`g2_detected_full`; loses precision when
    ``gamma2 T`` is small and overflows for very large ``gamma1 T``.
    """
    b, g1, g2, rho = m.beta, m.gamma1, m.gamma2, m.rho
    r2 = rho**2
    pre = np.exp(-(g1 + g2) * T) / (T**2 * g1**2 * g2**2)
    inner = 2 * r2 * (np.exp(g1 * T) * (b - 1) * g1**2 - np.exp(g2 * T) * b * g2**2) + np.exp(
        (g1 + g2) * T
    ) * (T**2 * g1**2 * g2**2 + 2 * (b * g2**2 - T * b * g1 * g2**2 + (b - 1) * g1**2 * (T * g2 - 1)) * r2)
    return float(pre * inner)


class WindowPopulations(NamedTuple):
    p0: float
    p1: float
    p2: float
    mu: float
    g2d: float


def populations_from_g2(m: Optional[G2Model], f: float, T: float,
                        g2d: Optional[float] = None) -> WindowPopulations:
    """Photon-number probabilities in a window of ``T`` ns at flux ``f`` photons/s.

    ``mu = f T``, ``p2 = g2_D(0) mu^2 / 2``, ``p1 = mu - 2 p2``,
    ``p0 = 1 - p1 - p2``. Valid for ``p0 >> p1 >> p2``; warns when
    ``mu >= 0.1``. ``p2`` is the total two-photon probability, not split by
    path. Pass ``g2d`` to override the model value of ``g2_D(0)``.
    """
    mu = f * T * 1e-9
    if mu >= 0.1:
        warnings.warn(f"mean photon number {mu:.3g} >= 0.1: low-occupation approximation "
                      "is not valid", RuntimeWarning, stacklevel=2)
    if g2d is None:
        g2d = g2_detected_full(m, T)
    p2 = g2d * mu * mu / 2.0
    p1 = mu - 2.0 * p2
    p0 = 1.0 - p1 - p2
    return WindowPopulations(float(p0), float(p1), float(p2), float(mu), float(g2d))
