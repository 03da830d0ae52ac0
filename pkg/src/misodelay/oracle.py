"""Brute-force quadrature of ``E[g^(s-1)]`` from each scheme's SNR pdf.

This path shares no code with the closed forms in :mod:`misodelay.service`:
it integrates the density of the underlying random variable directly on a
geometric ladder of breakpoints. It backs the validation suite and the
tests; it is too slow for use inside the bound engine.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Optional

from scipy import integrate

from .service import FiniteBlocklengthSpec, SchemeKind, SchemeSpec

ORACLE_RTOL = 1e-11


class QuadratureError(ArithmeticError):
    """Quadrature did not reach the requested tolerance."""

    def __init__(self, achieved: float, requested: float):
        super().__init__(f"quadrature reached relative error {achieved:.3g} > {requested:.3g}")
        self.achieved = achieved


def _ladder_integral(func: Callable[[float], float], scale: float, rtol: float) -> float:
    """Integrate ``func`` over (0, inf) split at ``scale * 2^k``."""
    epsrel = max(rtol * 1e-2, 1e-13)  # quadpack rejects tighter requests
    edges = [0.0] + [scale * 2.0**k for k in range(-40, 13)] + [math.inf]
    values, errors = [], []
    # pieces with negligible mass may warn; only the summed error is checked
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            v, e = integrate.quad(func, a, b, epsabs=0.0, epsrel=epsrel, limit=400)
            values.append(v)
            errors.append(e)
    total = math.fsum(values)
    err = math.fsum(errors)
    if total == 0.0 or err > rtol * abs(total):
        raise QuadratureError(err / abs(total) if total else math.inf, rtol)
    return total


def _log_gamma_density(shape: float, scale: float) -> Callable[[float], float]:
    c = -math.lgamma(shape) - shape * math.log(scale)
    return lambda x: (shape - 1.0) * math.log(x) - x / scale + c


def _log_tas_density(M: int) -> Callable[[float], float]:
    # M e^-x (1 - e^-x)^(M-1) for the max of M unit exponentials
    return lambda x: math.log(M) - x + (M - 1) * math.log(-math.expm1(-x))


def _log_table_density(M: int, N: int, table) -> Callable[[float], float]:
    log_r = -sum(math.lgamma(N - k + 1) + math.lgamma(M - k + 1) for k in range(1, N + 1))
    entries = table.entries

    def log_p(x: float) -> float:
        total = math.fsum(c * x**m * math.exp(-i * x) for i, m, c in entries)
        return log_r + math.log(total) if total > 0 else -math.inf

    return log_p


def _expect(log_pdf, log_h, scale: float, rtol: float) -> float:
    def f(x: float) -> float:
        if x <= 0.0:
            return 0.0
        lp = log_pdf(x)
        if lp == -math.inf:
            return 0.0
        lh = log_h(x)
        if lh == -math.inf:
            return 0.0
        return math.exp(lp + lh)

    return _ladder_integral(f, scale, rtol)


def _fb_log_g(fb: FiniteBlocklengthSpec, unit_dispersion: bool) -> Callable[[float], float]:
    F = fb.F
    shift = fb.log_shift

    def log_g(x: float) -> float:
        v = 1.0 if unit_dispersion else x * (x + 2.0) / (1.0 + x) ** 2
        return max(math.log1p(x) - F * math.sqrt(v) + shift, 0.0)

    return log_g


def mellin_quadrature_oracle(
    scheme: SchemeSpec,
    s: float,
    fb: Optional[FiniteBlocklengthSpec] = None,
    unit_dispersion: bool = False,
    rtol: float = ORACLE_RTOL,
) -> float:
    """``E[g^(s-1)]`` by adaptive quadrature over the scheme's SNR density.

    With ``fb`` the service is the finite-blocklength mixture (MRT SNR only);
    ``unit_dispersion`` replaces the channel dispersion by 1.
    Raises :class:`QuadratureError` when the error estimate exceeds ``rtol``.
    """
    kind, p = scheme.kind, scheme.params
    t = float(s) - 1.0

    if kind is SchemeKind.GAUSSIAN:
        mu, var = scheme.mu, scheme.sigma2
        if var == 0.0:
            return math.exp(t * mu)
        sd = math.sqrt(var)
        centre = mu + t * var
        log_norm = -0.5 * math.log(2 * math.pi * var)

        def f(y: float) -> float:
            return math.exp(t * y - 0.5 * (y - mu) ** 2 / var + log_norm)

        edges = [centre + sd * k for k in range(-40, 41)]
        values = [integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol * 1e-2)[0]
                  for a, b in zip(edges[:-1], edges[1:])]
        return math.fsum(values)

    if kind is SchemeKind.HARDENING:
        # degenerate SNR at its mean: no density to integrate
        return (1.0 + p.zeta * p.M) ** t

    zeta = p.zeta
    if kind in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM, SchemeKind.HIGH_SNR, SchemeKind.LOW_SNR):
        log_pdf, scale = _log_gamma_density(p.M, zeta), zeta
        if kind is SchemeKind.HIGH_SNR:
            log_h = lambda x: t * math.log(x)
        elif kind is SchemeKind.LOW_SNR:
            log_h = lambda x: t * x
        elif fb is not None:
            log_g = _fb_log_g(fb, unit_dispersion)
            mq = _expect(log_pdf, lambda x: t * log_g(x), scale, rtol)
            return (1.0 - fb.eps) * mq + fb.eps
        else:
            log_h = lambda x: t * math.log1p(x)
        return _expect(log_pdf, log_h, scale, rtol)
    if kind is SchemeKind.OSTBC:
        scale = p.snr / p.M
        return _expect(_log_gamma_density(p.M, scale), lambda x: t * math.log1p(x), scale, rtol)
    if kind is SchemeKind.NAKAGAMI:
        return _expect(_log_gamma_density(scheme.m, p.snr), lambda x: t * math.log1p(x), p.snr, rtol)
    if kind is SchemeKind.TAS:
        return _expect(_log_tas_density(p.M), lambda x: t * math.log1p(zeta * x), 1.0, rtol)
    if kind is SchemeKind.MIMO_EIGEN:
        log_pdf = _log_table_density(p.M, p.N, scheme.table)
        return _expect(log_pdf, lambda x: t * math.log1p(zeta * x), 1.0, rtol)
    raise ValueError(f"no density available for scheme kind {kind!r}")


def ergodic_rate(scheme: SchemeSpec, fb: Optional[FiniteBlocklengthSpec] = None, rtol: float = 1e-10) -> float:
    """``E[ln g]`` in nats per channel use, by the same quadrature.

    With ``fb`` this is the mean finite-blocklength rate ``(1 - eps) E[max(ln q, 0)]``
    of the MRT service.
    """
    kind, p = scheme.kind, scheme.params
    if fb is not None:
        if kind not in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM):
            raise ValueError("finite-blocklength service is defined for MRT only")
        log_g = _fb_log_g(fb, unit_dispersion=False)
        mean = _expect(_log_gamma_density(p.M, p.zeta), _log_of(log_g), p.zeta, rtol)
        return (1.0 - fb.eps) * mean
    if kind is SchemeKind.GAUSSIAN:
        return scheme.mu
    if kind is SchemeKind.HARDENING:
        return math.log1p(p.zeta * p.M)
    rate = _log_of(math.log1p)
    if kind in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM):
        return _expect(_log_gamma_density(p.M, p.zeta), rate, p.zeta, rtol)
    if kind is SchemeKind.OSTBC:
        scale = p.snr / p.M
        return _expect(_log_gamma_density(p.M, scale), rate, scale, rtol)
    if kind is SchemeKind.NAKAGAMI:
        return _expect(_log_gamma_density(scheme.m, p.snr), rate, p.snr, rtol)
    scaled = _log_of(lambda x: math.log1p(p.zeta * x))
    if kind is SchemeKind.TAS:
        return _expect(_log_tas_density(p.M), scaled, 1.0, rtol)
    if kind is SchemeKind.MIMO_EIGEN:
        return _expect(_log_table_density(p.M, p.N, scheme.table), scaled, 1.0, rtol)
    raise ValueError(f"no density available for scheme kind {kind!r}")


def _log_of(func: Callable[[float], float]) -> Callable[[float], float]:
    # log of a nonnegative rate; zero rate contributes nothing
    def log_h(x: float) -> float:
        v = func(x)
        return math.log(v) if v > 0.0 else -math.inf

    return log_h


__all__ = ["QuadratureError", "mellin_quadrature_oracle", "ergodic_rate", "ORACLE_RTOL"]
