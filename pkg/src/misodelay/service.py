"""Mellin transforms of the per-slot service process.

Every constructor returns a :class:`MellinFn`, an immutable callable
``s -> E[g^(s-1)]`` where ``g`` is the SNR-domain service increment
(``g = 1 + gamma`` for Shannon-rate service). Rates are natural-log based
throughout; the bit-domain exponent ``B = n / ln 2`` is applied by the
bound engine, not here.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from . import specfun
from .specfun import DomainError

CANCELLATION_LIMIT = 1e6
# accepted relative error of quadrature-backed transforms
QUAD_RTOL = 1e-8


class CancellationWarning(RuntimeWarning):
    """An alternating closed-form sum lost significant digits."""

    def __init__(self, what: str, lost_digits: float):
        super().__init__(f"{what}: alternating sum lost ~{lost_digits:.1f} digits")
        self.lost_digits = lost_digits


class CancellationError(ArithmeticError):
    """An alternating sum cancelled completely (non-positive result)."""


class FiniteBlocklengthError(ArithmeticError):
    """The clipping threshold of the finite-blocklength rate could not be found."""


@dataclass(frozen=True)
class MellinFn:
    """Evaluable Mellin transform ``s -> E[g^(s-1)]``.

    ``lower``/``upper`` bound the open interval of ``s`` on which the
    expectation is finite; outside it evaluation raises :class:`DomainError`.
    """

    func: Callable[[float], float]
    name: str
    domain_note: str = "finite for all real s"
    lower: float = -math.inf
    upper: float = math.inf
    log_func: Optional[Callable[[float], float]] = None

    def _check(self, s: float) -> float:
        s = float(s)
        if not (self.lower < s < self.upper):
            raise DomainError(f"{self.name}: s={s!r} outside ({self.lower}, {self.upper})")
        return s

    def __call__(self, s: float) -> float:
        return self.func(self._check(s))

    def log(self, s: float) -> float:
        """Natural log of the transform; ``-inf`` on underflow, ``inf`` on overflow."""
        s = self._check(s)
        if self.log_func is not None:
            return self.log_func(s)
        try:
            value = self.func(s)
        except OverflowError:
            return math.inf
        if value == 0.0:
            return -math.inf
        if not value > 0.0:
            raise ArithmeticError(f"{self.name}: non-positive value {value!r} at s={s!r}")
        return math.log(value)


@dataclass(frozen=True)
class ChannelParams:
    """Antenna counts and SNR statistics of a fading link.

    ``zeta`` is the scale of the gamma-distributed instantaneous SNR. With
    CSI error variance ``sigma_e2`` it is ``1 / (sigma_e2 + (1 + sigma_e2)/snr)``
    and equals ``snr`` exactly for perfect CSI.
    """

    M: int
    snr: float
    sigma_e2: float = 0.0
    N: int = 1
    zeta: float = field(init=False)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise DomainError(f"M must be a positive integer, got {self.M!r}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"N must be a positive integer, got {self.N!r}")
        if not (self.snr > 0.0 and math.isfinite(self.snr)):
            raise DomainError(f"snr must be positive and finite, got {self.snr!r}")
        if not (self.sigma_e2 >= 0.0 and math.isfinite(self.sigma_e2)):
            raise DomainError(f"sigma_e2 must be nonnegative, got {self.sigma_e2!r}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        if self.sigma_e2 == 0.0:
            zeta = float(self.snr)
        else:
            zeta = 1.0 / (self.sigma_e2 + (1.0 + self.sigma_e2) / self.snr)
        object.__setattr__(self, "zeta", zeta)

    @classmethod
    def perfect_csi(cls, M: int, snr: float, N: int = 1) -> "ChannelParams":
        return cls(M=M, snr=snr, sigma_e2=0.0, N=N)


class SchemeKind(enum.Enum):
    MRT_EXACT = "mrt"
    MRT_SUM = "mrt_sum"
    OSTBC = "ostbc"
    TAS = "tas"
    NAKAGAMI = "nakagami"
    GAUSSIAN = "gaussian"
    LOW_SNR = "low_snr"
    HIGH_SNR = "high_snr"
    MIMO_EIGEN = "mimo"
    HARDENING = "hardening"


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients ``c[i, m]`` of the largest-eigenvalue pdf of a Wishart matrix.

    The pdf of the largest eigenvalue is ``R * sum c[i,m] x^m e^(-i x)`` with
    ``R = 1 / prod_k (N-k)! (M-k)!``.
    """

    entries: tuple[tuple[int, int, float], ...]
    source: str = ""

    def validate(self, M: int, N: int) -> None:
        if not self.entries:
            raise DomainError("coefficient table is empty")
        for i, m, c in self.entries:
            if not math.isfinite(c):
                raise DomainError(f"non-finite coefficient at (i={i}, m={m})")
            if not 1 <= i <= N:
                raise DomainError(f"row index i={i} outside [1, {N}]")
            lo, hi = M - N, (M + N) * i - 2 * i * i
            if not lo <= m <= hi:
                raise DomainError(f"power m={m} outside [{lo}, {hi}] for i={i}")


def load_coefficient_table(path: str | Path) -> CoefficientTable:
    """Read a table of ``i m c`` lines; ``#`` starts a comment."""
    entries = []
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'i m c', got {raw!r}")
        try:
            i, m, c = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not math.isfinite(c):
            raise ValueError(f"{path}:{lineno}: non-finite coefficient")
        entries.append((i, m, c))
    return CoefficientTable(tuple(entries), source=str(path))


@dataclass(frozen=True)
class SchemeSpec:
    """A diversity technique together with its channel parameters.

    ``m`` is the Nakagami shape, ``mu``/``sigma2`` the Gaussian rate moments
    in nats, and ``table`` the MIMO eigen-beamforming coefficients.
    """

    kind: SchemeKind
    params: Optional[ChannelParams] = None
    m: Optional[float] = None
    mu: Optional[float] = None
    sigma2: Optional[float] = None
    table: Optional[CoefficientTable] = None

    def __post_init__(self):
        kind = self.kind
        if kind is SchemeKind.GAUSSIAN:
            if self.mu is None or self.sigma2 is None or self.sigma2 < 0:
                raise DomainError("Gaussian scheme needs mu and sigma2 >= 0")
            return
        if self.params is None:
            raise DomainError(f"{kind.value} scheme needs channel parameters")
        if kind is SchemeKind.NAKAGAMI:
            if self.params.M != 1 or self.params.N != 1:
                raise DomainError("Nakagami-m fading is defined for M = N = 1")
            if self.m is None or not self.m > 0:
                raise DomainError("Nakagami scheme needs m > 0")
        if kind is SchemeKind.MIMO_EIGEN:
            if self.table is None:
                raise DomainError("MIMO eigen-beamforming needs a coefficient table")
            self.table.validate(self.params.M, self.params.N)


@dataclass(frozen=True)
class FiniteBlocklengthSpec:
    """Normal-approximation coding at blocklength ``n`` and error rate ``eps``.

    ``F = Q^-1(eps) / sqrt(n)``. With ``include_half_log_term`` the rate also
    carries the ``ln(n) / (2n)`` nats-per-symbol correction.
    """

    n: int
    eps: float
    include_half_log_term: bool = False

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"blocklength n must be a positive integer, got {self.n!r}")
        if not 0.0 < self.eps < 1.0:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps!r}")

    @property
    def F(self) -> float:
        return specfun.gaussian_q_inv(self.eps) / math.sqrt(self.n)

    @property
    def log_shift(self) -> float:
        """Rate offset in nats per channel use."""
        return math.log(self.n) / (2 * self.n) if self.include_half_log_term else 0.0


def dispersion(x):
    """Channel dispersion of the complex AWGN channel at SNR ``x``, in nats^2."""
    return x * (x + 2.0) / (1.0 + x) ** 2


# ---------------------------------------------------------------------------
# Signed sums in log space


def _log_signed_sum(logs: Sequence[float], signs: Sequence[int]) -> tuple[float, float]:
    """Return ``(log(sum), lost_digits)`` of ``sign_k * exp(log_k)``.

    The log is ``nan`` and the digit loss infinite when the sum is not positive.
    """
    top = max(logs)
    scaled = [sg * math.exp(lg - top) for lg, sg in zip(logs, signs)]
    total = math.fsum(scaled)
    magnitude = math.fsum(abs(t) for t in scaled)
    if total <= 0.0:
        return math.nan, math.inf
    lost = math.log10(magnitude / total) if magnitude > total else 0.0
    return top + math.log(total), lost


def _exp_pair(log_value: float, lost: float) -> tuple[float, float]:
    return (0.0 if math.isnan(log_value) else math.exp(log_value)), lost


def _checked_log(log_value: float, lost: float, what: str) -> float:
    if math.isnan(log_value):
        raise CancellationError(f"{what}: alternating sum cancelled to a non-positive value")
    if lost > math.log10(CANCELLATION_LIMIT):
        warnings.warn(CancellationWarning(what, lost), stacklevel=3)
    return log_value


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def mrt_sum_terms(M: int, zeta: float, s: float, lower: float = None) -> tuple[float, float]:
    """``(value, lost_digits)`` of :func:`mrt_log_sum`; the value is 0 when the sum fails."""
    return _exp_pair(*mrt_log_sum(M, zeta, s, lower))


def mrt_log_sum(M: int, zeta: float, s: float, lower: float = None) -> tuple[float, float]:
    """Incomplete-gamma sum for ``E[(1+gamma)^(s-1)]``, gamma ~ Gamma(M, zeta).

    ``lower`` replaces the lower limit ``1/zeta`` of the incomplete gamma
    functions; the integral then runs over ``1 + gamma >= lower * zeta``.
    Returns ``(log_value, lost_digits)``; the prefactor ``e^(1/zeta)`` is included.
    """
    z = 1.0 / zeta if lower is None else lower
    log_zeta = math.log(zeta)
    logs, signs = [], []
    for j in range(M):
        logs.append(
            1.0 / zeta
            + (j + s - M) * log_zeta
            + specfun.log_upper_incomplete_gamma(j + s, z)
            - math.lgamma(M - j)
            - math.lgamma(j + 1)
        )
        signs.append(-1 if (M - 1 - j) % 2 else 1)
    return _log_signed_sum(logs, signs)


def tas_sum_terms(M: int, zeta: float, s: float) -> tuple[float, float]:
    return _exp_pair(*tas_log_sum(M, zeta, s))


def tas_log_sum(M: int, zeta: float, s: float) -> tuple[float, float]:
    log_zeta = math.log(zeta)
    logs, signs = [], []
    for k in range(M):
        logs.append(
            math.log(M)
            + (s - 1.0) * log_zeta
            + _log_binom(M - 1, k)
            + (k + 1) / zeta
            - s * math.log(k + 1)
            + specfun.log_upper_incomplete_gamma(s, (k + 1) / zeta)
        )
        signs.append(-1 if k % 2 else 1)
    return _log_signed_sum(logs, signs)


# ---------------------------------------------------------------------------
# Exact transforms


def _gamma_tricomi_log(shape: int, scale: float) -> Callable[[float], float]:
    def log_f(s: float) -> float:
        return -shape * math.log(scale) + specfun.log_tricomi_u(shape, shape + s, 1.0 / scale)

    return log_f


def _tricomi_mellin(shape: int, scale: float, name: str) -> MellinFn:
    log_f = _gamma_tricomi_log(shape, scale)
    return MellinFn(lambda s: _exp_checked(log_f(s), name), name, log_func=log_f)


def _exp_checked(log_value: float, name: str) -> float:
    if log_value > specfun.LOG_DBL_MAX:
        raise specfun.SaturationError(name, log_value)
    return math.exp(log_value)


def mellin_mrt_tricomi(params: ChannelParams) -> MellinFn:
    """MRT service: ``zeta^-M U(M, M+s, 1/zeta)``."""
    return _tricomi_mellin(params.M, params.zeta, f"mrt_tricomi(M={params.M})")


def mellin_mrt_sum(params: ChannelParams) -> MellinFn:
    """MRT service via the finite incomplete-gamma sum.

    Emits :class:`CancellationWarning` when more than six digits cancel and
    raises :class:`CancellationError` if the sum is not positive.
    """
    M, zeta = params.M, params.zeta

    name = f"mrt_sum(M={M})"

    def log_f(s: float) -> float:
        return _checked_log(*mrt_log_sum(M, zeta, s), f"mrt_sum(M={M}, zeta={zeta:g}, s={s:g})")

    return MellinFn(lambda s: _exp_checked(log_f(s), name), name, log_func=log_f)


def mellin_mrt(params: ChannelParams) -> MellinFn:
    """MRT service using the fast sum, falling back to Tricomi U on cancellation."""
    M, zeta = params.M, params.zeta
    tricomi = _gamma_tricomi_log(M, zeta)
    name = f"mrt(M={M})"

    def log_f(s: float) -> float:
        log_value, lost = mrt_log_sum(M, zeta, s)
        if lost <= math.log10(CANCELLATION_LIMIT):
            return log_value
        return tricomi(s)

    return MellinFn(lambda s: _exp_checked(log_f(s), name), name, log_func=log_f)


def mellin_ostbc(params: ChannelParams) -> MellinFn:
    """OSTBC: SNR ~ Gamma(M, snr/M)."""
    M = params.M
    return _tricomi_mellin(M, params.snr / M, f"ostbc(M={M})")


def mellin_tas(params: ChannelParams) -> MellinFn:
    """Transmit antenna selection: SNR = zeta * max of M unit exponentials."""
    M, zeta = params.M, params.zeta

    name = f"tas(M={M})"

    def log_f(s: float) -> float:
        return _checked_log(*tas_log_sum(M, zeta, s), f"tas(M={M}, zeta={zeta:g}, s={s:g})")

    return MellinFn(lambda s: _exp_checked(log_f(s), name), name, log_func=log_f)


def mellin_nakagami(m: float, snr: float) -> MellinFn:
    """SISO Nakagami-m fading: SNR ~ Gamma(m, snr).

    Integer ``m`` uses Tricomi U; other shapes integrate the gamma pdf.
    """
    if not m > 0:
        raise DomainError(f"Nakagami m must be positive, got {m!r}")
    if not snr > 0:
        raise DomainError(f"snr must be positive, got {snr!r}")
    if float(m).is_integer():
        return _tricomi_mellin(int(m), snr, f"nakagami(m={m:g})")

    def f(s: float) -> float:
        return _gamma_expectation(m, snr, lambda x: (s - 1.0) * math.log1p(x), s)

    return MellinFn(f, f"nakagami(m={m:g})")


def mellin_mimo_eigen(params: ChannelParams, table: CoefficientTable) -> MellinFn:
    """MIMO eigen-beamforming from tabulated largest-eigenvalue coefficients."""
    M, N, zeta = params.M, params.N, params.zeta
    table.validate(M, N)
    log_r = -sum(math.lgamma(N - k + 1) + math.lgamma(M - k + 1) for k in range(1, N + 1))
    entries = table.entries

    def f(s: float) -> float:
        terms = []
        for i, m, c in entries:
            if c == 0.0:
                continue
            u = specfun.tricomi_u(m + 1, m + 1 + s, i / zeta)
            terms.append(c * math.exp(log_r + math.lgamma(m + 1) - (m + 1) * math.log(zeta)) * u)
        return math.fsum(terms)

    return MellinFn(f, f"mimo_eigen(M={M}, N={N})")


# ---------------------------------------------------------------------------
# Asymptotic regimes


def mellin_high_snr(params: ChannelParams, euler_correction: bool = True) -> MellinFn:
    """High-SNR scaling of the MRT transform.

    At ``s = 1 - M`` the leading term of ``U(M, 1, 1/zeta)`` is
    ``(ln zeta - psi(M) - 2*gamma_E) / Gamma(M)``; ``euler_correction=False``
    drops the ``2*gamma_E`` constant.
    """
    M, zeta = params.M, params.zeta
    log_zeta = math.log(zeta)
    edge = 1.0 - M

    def f(s: float) -> float:
        if s > edge:
            return math.exp((s - 1.0) * log_zeta + math.lgamma(s + M - 1.0) - math.lgamma(M))
        if s < edge:
            return math.exp(-M * log_zeta + math.lgamma(1.0 - s - M) - math.lgamma(1.0 - s))
        const = specfun.digamma(M) + (2.0 * specfun.EULER_GAMMA if euler_correction else 0.0)
        return zeta ** (-M) * (log_zeta - const) / math.gamma(M)

    return MellinFn(f, f"high_snr(M={M})")


def mellin_low_snr(params: ChannelParams) -> MellinFn:
    """Low-SNR approximation ``(1 - (s-1) zeta)^-M``; finite for s < 1 + 1/zeta."""
    M, zeta = params.M, params.zeta

    def f(s: float) -> float:
        return (1.0 - (s - 1.0) * zeta) ** (-M)

    return MellinFn(f, f"low_snr(M={M})", "s < 1 + 1/zeta", upper=1.0 + 1.0 / zeta)


def mellin_gaussian(mu: float, sigma2: float) -> MellinFn:
    """Log-normal service increment: the rate is N(mu, sigma2) in nats."""
    if sigma2 < 0:
        raise DomainError(f"sigma2 must be nonnegative, got {sigma2!r}")

    def log_f(s: float) -> float:
        t = s - 1.0
        return t * mu + 0.5 * t * t * sigma2

    def f(s: float) -> float:
        return math.exp(log_f(s))

    return MellinFn(f, f"gaussian(mu={mu:g}, sigma2={sigma2:g})", log_func=log_f)


def mellin_hardening(params: ChannelParams) -> MellinFn:
    """Large-array limit: the channel behaves as AWGN with SNR ``zeta * M``."""
    log_g = math.log1p(params.zeta * params.M)

    def log_f(s: float) -> float:
        return (s - 1.0) * log_g

    def f(s: float) -> float:
        return math.exp(log_f(s))

    return MellinFn(f, f"hardening(M={params.M})", log_func=log_f)


# ---------------------------------------------------------------------------
# Finite blocklength


def _log_gamma_pdf(shape: float, scale: float) -> Callable[[float], float]:
    c = -math.lgamma(shape) - shape * math.log(scale)
    return lambda x: (shape - 1.0) * math.log(x) - x / scale + c


def _segments(lo: float, hi: float, points: Sequence[float]) -> list[tuple[float, float]]:
    cuts = sorted({p for p in points if lo < p < hi})
    edges = [lo, *cuts, hi]
    return list(zip(edges[:-1], edges[1:]))


def _quad_sum(func, pieces, epsrel: float) -> float:
    """Sum of per-piece quadratures, checked against the summed error estimate.

    Pieces carrying negligible mass often cannot meet a relative tolerance on
    their own; only the total is required to.
    """
    parts, errors = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in pieces:
            val, err = integrate.quad(func, a, b, epsabs=0.0, epsrel=epsrel, limit=200)
            parts.append(val)
            errors.append(err)
    total = math.fsum(parts)
    if math.fsum(errors) > QUAD_RTOL * abs(total):
        raise ArithmeticError(f"quadrature error {math.fsum(errors):.3g} exceeds tolerance on {total:.6g}")
    return total


def _gamma_expectation(shape: float, scale: float, log_h, s: float, lo: float = 0.0,
                       hi: float = math.inf, epsrel: float = 1e-11) -> float:
    """``int_lo^hi exp(log_h(x)) f(x) dx`` for a Gamma(shape, scale) pdf ``f``.

    Breakpoints follow the pdf scale and the ``1/|s-1|`` decay length near
    the lower limit, where large negative orders concentrate the mass.
    """

    log_pdf = _log_gamma_pdf(shape, scale)

    def integrand(x):
        if x <= 0.0:
            return 0.0
        return math.exp(log_h(x) + log_pdf(x))

    mean = shape * scale
    decay = (1.0 + max(lo, 0.0)) / (abs(s - 1.0) + 1e-300)
    points = [lo + decay * k for k in (1e-3, 1e-2, 0.1, 0.5, 1, 2, 5, 10, 30, 100)]
    points += [mean * k for k in (1e-4, 1e-3, 1e-2, 0.1, 0.3, 1, 2, 4, 8)]
    if math.isfinite(hi):
        return _quad_sum(integrand, _segments(lo, hi, points), epsrel)
    top = lo + 16.0 * mean + 50.0 * scale
    return _quad_sum(integrand, _segments(lo, top, points) + [(top, math.inf)], epsrel)


def _clipping_interval(F: float, shift: float, unit_dispersion: bool) -> Optional[tuple[float, float]]:
    """Interval of SNRs where the finite-blocklength rate is not positive.

    The rate in nats is ``ln(1+x) - F sqrt(V(x)) + shift``; it is clipped at
    zero where this is <= 0. Returns ``(lo, hi)`` or ``None``.
    """
    if unit_dispersion:
        edge = math.expm1(F - shift)
        return (0.0, edge) if edge > 0.0 else None
    if F <= 0.0:
        return None

    def g(x):
        return math.log1p(x) - F * math.sqrt(dispersion(x)) + shift

    grid = np.logspace(-12, 6, 541)
    vals = [g(x) for x in grid]
    negative = [i for i, v in enumerate(vals) if v < 0.0]
    if not negative:
        return None
    first, last = negative[0], negative[-1]
    if last != first + len(negative) - 1:
        raise FiniteBlocklengthError("rate is negative on more than one SNR interval")
    if last == len(grid) - 1:
        raise FiniteBlocklengthError(f"rate stays negative up to SNR {grid[-1]:g} (F={F:g})")
    try:
        if first == 0:
            lo = 0.0 if shift == 0.0 else optimize.brentq(g, 0.0, grid[0], xtol=1e-300, rtol=1e-15)
        else:
            lo = optimize.brentq(g, grid[first - 1], grid[first], xtol=1e-300, rtol=1e-15)
        hi = optimize.brentq(g, grid[last], grid[last + 1], xtol=1e-300, rtol=1e-15)
    except (ValueError, RuntimeError) as exc:
        raise FiniteBlocklengthError(f"threshold root not bracketed: {exc}") from None
    return lo, hi


def _fb_mq(params: ChannelParams, fb: FiniteBlocklengthSpec, unit_dispersion: bool):
    M, zeta = params.M, params.zeta
    F, shift = fb.F, fb.log_shift
    interval = _clipping_interval(F, shift, unit_dispersion)

    def log_q(x):
        v = 1.0 if unit_dispersion else dispersion(x)
        return math.log1p(x) - F * math.sqrt(v) + shift

    if interval is None:
        lo = hi = 0.0
        mass = 0.0
    else:
        lo, hi = interval
        mass = specfun.regularized_lower_gamma(M, hi / zeta) - specfun.regularized_lower_gamma(M, lo / zeta)

    def mq(s: float) -> float:
        log_h = lambda x: (s - 1.0) * log_q(x)
        total = mass + _gamma_expectation(M, zeta, log_h, s, lo=hi, epsrel=1e-10)
        if lo > 0.0:
            total += _gamma_expectation(M, zeta, log_h, s, lo=0.0, hi=lo, epsrel=1e-10)
        return total

    return mq, interval


def fb_threshold(params: ChannelParams, fb: FiniteBlocklengthSpec) -> Optional[tuple[float, float]]:
    """SNR interval on which the finite-blocklength rate is clipped to zero."""
    return _clipping_interval(fb.F, fb.log_shift, unit_dispersion=False)


def _mixture(mq: Callable[[float], float], eps: float) -> Callable[[float], float]:
    def f(s: float) -> float:
        return (1.0 - eps) * mq(s) + eps

    return f


def mellin_fb(params: ChannelParams, fb: FiniteBlocklengthSpec) -> MellinFn:
    """MRT service under finite-blocklength coding.

    Successful slots (probability ``1 - eps``) carry the normal-approximation
    rate, clipped at zero; failed slots serve nothing.
    """
    F, shift, eps = fb.F, fb.log_shift, fb.eps
    if F == 0.0:
        exact = mellin_mrt(params)

        def mq(s: float) -> float:
            return math.exp(shift * (s - 1.0)) * exact(s)

    else:
        mq, _ = _fb_mq(params, fb, unit_dispersion=False)
    return MellinFn(_mixture(mq, eps), f"fb(M={params.M}, n={fb.n}, eps={eps:g})")


def mellin_fb_high_snr(params: ChannelParams, fb: FiniteBlocklengthSpec) -> MellinFn:
    """Finite-blocklength MRT service with unit channel dispersion.

    Closed form in incomplete gamma functions; falls back to quadrature of
    the same model when the alternating sum cancels.
    """
    M, zeta, eps = params.M, params.zeta, fb.eps
    offset = fb.F - fb.log_shift
    exact = mellin_mrt(params)
    quad_mq, _ = _fb_mq(params, fb, unit_dispersion=True)

    def mq(s: float) -> float:
        if offset <= 0.0:
            return math.exp(-offset * (s - 1.0)) * exact(s)
        e_f = math.exp(offset)
        mass = specfun.regularized_lower_gamma(M, math.expm1(offset) / zeta)
        value, lost = mrt_sum_terms(M, zeta, s, lower=e_f / zeta)
        if not value > 0.0 or lost > math.log10(CANCELLATION_LIMIT):
            return quad_mq(s)
        return mass + math.exp(-offset * (s - 1.0)) * value

    return MellinFn(_mixture(mq, eps), f"fb_high_snr(M={M}, n={fb.n}, eps={eps:g})")


# ---------------------------------------------------------------------------
# Dispatch


def scheme_mellin(scheme: SchemeSpec) -> MellinFn:
    """Mellin transform of the infinite-blocklength service of ``scheme``.

    Exact MRT uses the incomplete-gamma sum with its Tricomi fallback.
    """
    kind, p = scheme.kind, scheme.params
    if kind is SchemeKind.MRT_EXACT:
        return mellin_mrt(p)
    if kind is SchemeKind.MRT_SUM:
        return mellin_mrt_sum(p)
    if kind is SchemeKind.OSTBC:
        return mellin_ostbc(p)
    if kind is SchemeKind.TAS:
        return mellin_tas(p)
    if kind is SchemeKind.NAKAGAMI:
        return mellin_nakagami(scheme.m, p.snr)
    if kind is SchemeKind.GAUSSIAN:
        return mellin_gaussian(scheme.mu, scheme.sigma2)
    if kind is SchemeKind.LOW_SNR:
        return mellin_low_snr(p)
    if kind is SchemeKind.HIGH_SNR:
        return mellin_high_snr(p)
    if kind is SchemeKind.MIMO_EIGEN:
        return mellin_mimo_eigen(p, scheme.table)
    if kind is SchemeKind.HARDENING:
        return mellin_hardening(p)
    raise ValueError(f"unknown scheme kind {kind!r}")
