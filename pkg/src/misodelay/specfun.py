"""Scalar special functions used by the closed-form Mellin transforms.

All functions take and return Python floats. Out-of-domain arguments raise
:class:`DomainError`; results that do not fit in a double raise
:class:`SaturationError` carrying the log-magnitude, so an overflow never
leaks into a sum as ``inf``.

The upper incomplete gamma function is implemented here for every real
shape parameter. Negative shapes appear whenever a kernel evaluates
``Gamma(j + 1 - B*s, x)`` with ``B*s`` in the hundreds.
"""

from __future__ import annotations

import math

import mpmath
from scipy import special as sp

EULER_GAMMA = 0.57721566490153286061
LOG_DBL_MAX = 709.782712893384

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXITER = 20000
_SERIES_MAXITER = 200
# below this shape (and x < 1) the continued fraction converges in < 60 terms
_CF_NEGATIVE_SHAPE = -15.0
# zeta(2), zeta(3), ... for the ln Gamma(1 + a) series on |a| <= 1/2
_ZETA = [float(sp.zeta(k)) for k in range(2, 64)]


class DomainError(ValueError):
    """Argument outside the declared domain of a special function."""


class SaturationError(OverflowError):
    """Result overflows a double; ``log_value`` holds its natural log."""

    def __init__(self, name: str, log_value: float):
        super().__init__(f"{name} overflows double precision (log value {log_value:.6g})")
        self.log_value = log_value


class ConvergenceError(ArithmeticError):
    """An iterative evaluation did not reach its tolerance."""


def _check_finite(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not math.isfinite(value):
            raise DomainError(f"{name} must be finite, got {value!r}")


def _scaled_cf(a: float, x: float) -> float:
    """Return Gamma(a, x) * e^x * x^-a by the Legendre continued fraction.

    Modified Lentz iteration. Converges for x > 0 and any real a; fast when
    x + |a| is large.
    """
    b = x + 1.0 - a
    c = 1.0 / _CF_TINY
    d = 1.0 / b if b != 0.0 else 1.0 / _CF_TINY
    h = d
    for i in range(1, _CF_MAXITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = b + an / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ConvergenceError(f"continued fraction for Gamma({a}, {x}) did not converge")


def _small_shape_series(a: float, x: float) -> float:
    """Gamma(a, x) for |a| <= 1/2 and small x.

    Splits Gamma(a) - x^a/a into two well-conditioned differences so the
    pole at a = 0 cancels analytically.
    """
    # ln Gamma(1 + a) / a from its Taylor series; scipy's gammaln near 1 is
    # only accurate in absolute terms, which the division by a amplifies
    c = -EULER_GAMMA
    power = 1.0
    for k, zk in enumerate(_ZETA, start=2):
        power *= -a
        c -= zk * power / k
    lg = a * c
    t = a * math.log(x)
    head = c * (math.expm1(lg) / lg if lg != 0.0 else 1.0)
    head -= math.log(x) * (math.expm1(t) / t if t != 0.0 else 1.0)
    total = 0.0
    term = 1.0
    for k in range(1, _SERIES_MAXITER):
        term *= -x / k
        contrib = term / (a + k)
        total += contrib
        if abs(contrib) < 1e-17 * abs(total):
            break
    return head - x**a * total


def _scaled_small_x(a: float, x: float) -> float:
    """Gamma(a, x) * e^x * x^-a for a <= 1/2, x < 1, via downward recurrence.

    Starts from a0 = a - round(a) in [-1/2, 1/2] and applies
    r(a) = (x r(a+1) - 1) / a, which damps errors by x/|a| per step.
    """
    steps = int(math.floor(-a + 0.5))
    a0 = a + steps
    r = _small_shape_series(a0, x) * math.exp(x) * x ** (-a0)
    for k in range(1, steps + 1):
        ak = a0 - k
        r = (x * r - 1.0) / ak
    return r


def log_upper_incomplete_gamma(a: float, x: float) -> float:
    """Natural log of Gamma(a, x) = int_x^inf t^(a-1) e^-t dt.

    Defined for every real ``a`` and ``x > 0``. The integrand is positive,
    so the value is always positive and only its logarithm is returned.
    """
    _check_finite(a=a, x=x)
    if x <= 0.0:
        raise DomainError(f"upper incomplete gamma needs x > 0, got x={x!r}")
    if a > 0.5:
        if x > a + 1.0:
            return math.log(_scaled_cf(a, x)) + a * math.log(x) - x
        return float(sp.gammaln(a)) + math.log(float(sp.gammaincc(a, x)))
    if x >= 1.0 or a <= _CF_NEGATIVE_SHAPE:
        r = _scaled_cf(a, x)
    elif a > -0.5:
        value = _small_shape_series(a, x)
        return math.log(value)
    else:
        r = _scaled_small_x(a, x)
    return math.log(r) + a * math.log(x) - x


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Gamma(a, x) for real ``a`` and ``x > 0``.

    Raises :class:`SaturationError` instead of returning ``inf``.

    >>> round(upper_incomplete_gamma(1.0, 2.0), 12)
    0.135335283237
    """
    log_value = log_upper_incomplete_gamma(a, x)
    if log_value > LOG_DBL_MAX:
        raise SaturationError("upper_incomplete_gamma", log_value)
    return math.exp(log_value)


def log_tricomi_u(a: int, b: float, z: float) -> float:
    """Natural log of Tricomi's U(a, b, z) for positive integer ``a`` and z > 0.

    U is positive there. Evaluated with mpmath, whose hypergeometric
    combinations raise the working precision internally when the defining
    terms cancel.
    """
    _check_finite(b=b, z=z)
    if int(a) != a or a < 1:
        raise DomainError(f"tricomi_u requires a positive integer a, got {a!r}")
    if z <= 0.0:
        raise DomainError(f"tricomi_u requires z > 0, got {z!r}")
    # zeroprec: some terms of the connection formula vanish identically
    value = mpmath.hyperu(int(a), b, z, zeroprec=256)
    return float(mpmath.log(value))


def tricomi_u(a: int, b: float, z: float) -> float:
    """Tricomi's confluent hypergeometric function U(a, b, z), a a positive integer."""
    log_value = log_tricomi_u(a, b, z)
    if log_value > LOG_DBL_MAX:
        raise SaturationError("tricomi_u", log_value)
    return math.exp(log_value)


def gaussian_q(x: float) -> float:
    """Gaussian tail probability Q(x) = P[N(0,1) > x]."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def gaussian_q_inv(eps: float) -> float:
    """Inverse of the Gaussian Q function on (0, 1)."""
    _check_finite(eps=eps)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"gaussian_q_inv requires 0 < eps < 1, got {eps!r}")
    # ndtri(eps) avoids forming 1 - eps for small eps
    return -float(sp.ndtri(eps))


def regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a)."""
    _check_finite(a=a)
    if a <= 0.0:
        raise DomainError(f"regularized_lower_gamma requires a > 0, got {a!r}")
    if math.isnan(x) or x < 0.0:
        raise DomainError(f"regularized_lower_gamma requires x >= 0, got {x!r}")
    if math.isinf(x):
        return 1.0
    return float(sp.gammainc(a, x))


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = 1 - P(a, x), computed without the subtraction."""
    _check_finite(a=a)
    if a <= 0.0:
        raise DomainError(f"regularized_upper_gamma requires a > 0, got {a!r}")
    if math.isnan(x) or x < 0.0:
        raise DomainError(f"regularized_upper_gamma requires x >= 0, got {x!r}")
    if math.isinf(x):
        return 0.0
    return float(sp.gammaincc(a, x))


def digamma(x: float) -> float:
    """Digamma function psi(x) for x > 0."""
    _check_finite(x=x)
    if x <= 0.0:
        raise DomainError(f"digamma requires x > 0, got {x!r}")
    return float(sp.digamma(x))


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    _check_finite(x=x)
    if x <= 0.0:
        raise DomainError(f"log_gamma requires x > 0, got {x!r}")
    return float(sp.gammaln(x))
