"""Steady-state kernel, stability region and delay-violation bound.

The SNR-domain kernel for constant arrivals of ``rho`` bits per slot and an
i.i.d. service increment ``g`` per slot is

    K(s, w) = M_g(1 - B s)^w / (1 - e^(rho s) M_g(1 - B s)),

with ``B = n / ln 2`` so that ``B ln g`` is the slot service in bits. The
violation bound is ``inf_{s>0} K(s, w)`` over the stable region.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .service import MellinFn
from .specfun import DomainError

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GRID_POINTS = 64
# the stable region is scanned up to this many bits of B*s
SCAN_CAP = 1e6


@dataclass(frozen=True)
class ArrivalSpec:
    """Constant-rate arrivals of ``rho`` bits per slot.

    Bits, not nats: the kernel compares ``rho`` against the slot service
    ``B ln g`` with ``B = n / ln 2``, which is a bit count.
    """

    rho: float

    def __post_init__(self):
        if not (self.rho >= 0.0 and math.isfinite(self.rho)):
            raise DomainError(f"arrival rate must be finite and nonnegative, got {self.rho!r}")

    @classmethod
    def from_rate(cls, rate_bps: float, slot_seconds: float) -> "ArrivalSpec":
        return cls(rate_bps * slot_seconds)

    @property
    def rho_nats(self) -> float:
        return self.rho * LN2


@dataclass(frozen=True)
class SlotSpec:
    """Slot layout: ``n`` data symbols, ``n_m`` overhead symbols, duration ``T`` seconds."""

    n: int
    T: float = 1e-3
    n_m: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if int(self.n_m) != self.n_m or self.n_m < 0:
            raise DomainError(f"n_m must be a nonnegative integer, got {self.n_m!r}")
        if not self.T > 0.0:
            raise DomainError(f"slot duration must be positive, got {self.T!r}")

    @classmethod
    def from_symbol_time(cls, n: int, n_m: int, symbol_seconds: float) -> "SlotSpec":
        """Slot whose airtime is ``(n + n_m)`` symbols of fixed duration."""
        return cls(n=n, T=(n + n_m) * symbol_seconds, n_m=n_m)

    @property
    def B(self) -> float:
        return self.n / LN2

    def delay_to_slots(self, delay_seconds: float, fractional: bool = False) -> float:
        """Slot-count target for a delay in seconds.

        By default the largest integer ``w`` with ``W > w`` equivalent to
        ``W * T > delay``. ``fractional`` returns ``delay / T`` unrounded,
        which yields smooth curves in sweeps that change ``T``.
        """
        ratio = delay_seconds / self.T
        if fractional:
            return ratio
        return int(math.floor(ratio + 1e-9))


class Status(enum.Enum):
    OK = "ok"
    UNSTABLE = "unstable"
    CLAMPED = "clamped"


@dataclass(frozen=True)
class StabilityRegion:
    """Stable interval ``(0, s_max)``.

    ``unbounded`` means the scan reached its cap while still stable;
    ``second_interval`` flags a further stable stretch found beyond ``s_max``.
    """

    s_max: float
    unbounded: bool = False
    second_interval: bool = False


@dataclass(frozen=True)
class DelayBoundResult:
    w_slots: float
    p_v: float
    s_star: Optional[float]
    stability_margin: Optional[float]
    status: Status


def _log_mellin(mellin: MellinFn, arg: float) -> float:
    return mellin.log(arg)


def stability_exponent(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec, s: float) -> float:
    """``rho s + ln M_g(1 - B s)``; the queue is stable at ``s`` iff this is < 0."""
    return arrival.rho * s + _log_mellin(mellin, 1.0 - slot.B * s)


def _check_w(w: float) -> None:
    if not (w >= 0.0 and math.isfinite(w)):
        raise DomainError(f"w must be finite and nonnegative, got {w!r}")


def log_kernel(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec, s: float, w: float) -> float:
    """Natural log of the steady-state kernel; ``inf`` outside the stable region.

    ``w`` is a slot count. Non-integer values interpolate geometrically
    between neighbouring integer targets; only integer ``w`` bound an event.
    """
    _check_w(w)
    if not s > 0.0:
        raise DomainError(f"kernel needs s > 0, got {s!r}")
    log_m = _log_mellin(mellin, 1.0 - slot.B * s)
    expo = arrival.rho * s + log_m
    if not expo < 0.0:
        return math.inf
    return w * log_m - math.log(-math.expm1(expo))


def kernel(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec, s: float, w: float) -> float:
    """Steady-state kernel ``K(s, w)``; ``inf`` when the stability condition fails."""
    return math.exp(log_kernel(mellin, arrival, slot, s, w))


def stability_root(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec) -> Optional[StabilityRegion]:
    """Upper end of the stable interval ``(0, s_max)``, or ``None`` if unstable.

    Scans a log grid of ``s`` up to ``SCAN_CAP / B`` and bisects the first
    stable-to-unstable transition.
    """
    cap = SCAN_CAP / slot.B
    grid = np.logspace(math.log10(cap) - 18.0, math.log10(cap), 289)
    f = lambda s: stability_exponent(mellin, arrival, slot, float(s))
    stable = [f(s) < 0.0 for s in grid]
    if not any(stable):
        return None
    first = stable.index(True)
    last = first
    while last + 1 < len(grid) and stable[last + 1]:
        last += 1
    if last == len(grid) - 1:
        return StabilityRegion(s_max=float(cap), unbounded=True)
    second = any(stable[last + 1:])
    if second:
        log.warning("a second stable interval exists beyond s=%g; using the first", grid[last + 1])
    s_max = optimize.brentq(f, grid[last], grid[last + 1], xtol=1e-300, rtol=1e-12, maxiter=500)
    # keep s_max on the stable side of the root
    while not f(s_max) < 0.0 and s_max > grid[last]:
        s_max = math.nextafter(s_max, 0.0)
    return StabilityRegion(s_max=float(s_max), second_interval=second)


def golden_section(func, a: float, b: float, rtol: float = 1e-10, maxiter: int = 300) -> tuple[float, float]:
    """Minimise a unimodal ``func`` on ``[a, b]``; returns ``(x, func(x))``."""
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = func(x1), func(x2)
    for _ in range(maxiter):
        if b - a <= rtol * 0.5 * (a + b):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = func(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = func(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _search_grid(s_max: float) -> np.ndarray:
    half = GRID_POINTS // 2
    low = s_max * np.logspace(-9.0, math.log10(0.5), half)
    high = s_max * (1.0 - np.logspace(-9.0, math.log10(0.5), half)[::-1][1:])
    return np.concatenate([low, high])


def delay_bound(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec, w: float,
                region: Optional[StabilityRegion] = None) -> DelayBoundResult:
    """``inf_{s>0} K(s, w)`` clamped to 1.

    ``region`` may be passed to reuse a stability scan across several ``w``.
    """
    _check_w(w)
    if region is None:
        region = stability_root(mellin, arrival, slot)
    if region is None:
        return DelayBoundResult(w, 1.0, None, None, Status.UNSTABLE)
    f = lambda s: log_kernel(mellin, arrival, slot, float(s), w)
    grid = _search_grid(region.s_max)
    values = [f(s) for s in grid]
    k = int(np.argmin(values))
    a = grid[k - 1] if k > 0 else grid[0] * 1e-3
    b = grid[k + 1] if k + 1 < len(grid) else region.s_max
    s_star, log_k = golden_section(f, float(a), float(b))
    if values[k] < log_k:
        s_star, log_k = float(grid[k]), values[k]
    margin = -math.expm1(stability_exponent(mellin, arrival, slot, s_star))
    if log_k >= 0.0:
        return DelayBoundResult(w, 1.0, s_star, margin, Status.CLAMPED)
    return DelayBoundResult(w, math.exp(log_k), s_star, margin, Status.OK)


def delay_bounds(mellin: MellinFn, arrival: ArrivalSpec, slot: SlotSpec, ws) -> list[DelayBoundResult]:
    """:func:`delay_bound` for several targets sharing one stability scan."""
    region = stability_root(mellin, arrival, slot)
    return [delay_bound(mellin, arrival, slot, w, region=region) for w in ws]


def effective_capacity(mellin: MellinFn, theta: float) -> float:
    """``-ln M_g(1 - theta) / theta`` in nats per channel use."""
    if not theta > 0.0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    s = 1.0 - theta
    log_value = mellin.log(s)
    if not math.isfinite(log_value):
        raise DomainError(f"Mellin transform is not finite at 1 - theta = {s!r}")
    # divide by the theta actually represented in s, so that s - 1 inside
    # the transform and the divisor agree exactly
    return -log_value / (1.0 - s)
