"""Monte Carlo simulation of the discrete-time fading queue.

Arrivals are a constant ``rho`` bits per slot; slot ``i`` serves
``B ln(1 + gamma_i)`` bits with i.i.d. SNR draws (or the finite-blocklength
rate, zeroed on block errors). The backlog at slot boundaries follows the
Lindley recursion, evaluated in chunks as

    B(tau) = c(tau) + max(B(t0), -min_{t0 <= u <= tau} c(u))

with ``c`` the cumulative ``rho - s`` since the chunk start ``t0``. For
constant arrivals, data arriving at ``t`` waits more than ``w`` slots
exactly when ``B(t + w) > rho w``, so violation frequencies come straight
from the backlog path.

Random streams: the seed feeds a :class:`numpy.random.SeedSequence` whose
first child drives the SNR draws and whose second drives the block-error
indicators. Draws are consumed in slot order, so results do not depend on
the chunk size.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import oracle
from .bound import ArrivalSpec, SlotSpec
from .service import FiniteBlocklengthSpec, SchemeKind, SchemeSpec, dispersion
from .specfun import DomainError

CHUNK_SLOTS = 1 << 18
BATCHES = 100
WARMUP_FRACTION = 0.1
CONFIDENCE = 0.95
SUBSLOT_SAMPLES = 16

_SNR_KINDS = (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM, SchemeKind.OSTBC, SchemeKind.TAS, SchemeKind.NAKAGAMI)
_RATE_KINDS = (SchemeKind.GAUSSIAN, SchemeKind.HARDENING)


class UnstableQueueError(ValueError):
    """Mean service does not exceed the arrival rate."""


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    ``warmup_slots`` defaults to a tenth of the horizon. ``w_grid`` holds
    delay targets in slots and must be sorted.
    """

    scheme: SchemeSpec
    arrival: ArrivalSpec
    slot: SlotSpec
    w_grid: tuple[int, ...]
    horizon_slots: int = 10_000_000
    seed: int = 0
    fb: Optional[FiniteBlocklengthSpec] = None
    warmup_slots: Optional[int] = None
    allow_unstable: bool = False

    def __post_init__(self):
        w = tuple(int(x) for x in self.w_grid)
        if not w:
            raise DomainError("w_grid must not be empty")
        if any(x < 0 for x in w) or list(w) != sorted(w):
            raise DomainError(f"w_grid must be sorted and nonnegative, got {w}")
        object.__setattr__(self, "w_grid", w)
        if self.horizon_slots < 1:
            raise DomainError("horizon must be positive")
        if self.warmup_slots is None:
            object.__setattr__(self, "warmup_slots", int(self.horizon_slots * WARMUP_FRACTION))
        if not 0 <= self.warmup_slots < self.horizon_slots:
            raise DomainError("warmup must lie in [0, horizon)")
        if self.warmup_slots + w[-1] >= self.horizon_slots:
            raise DomainError("horizon too short for the largest delay target")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.fb is not None and self.scheme.kind not in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM):
            raise DomainError("finite-blocklength simulation is defined for MRT only")


@dataclass
class SimResult:
    """Empirical violation frequencies with Wilson intervals.

    ``n_effective`` shrinks the sample count by the batch-means estimate of
    serial correlation before the interval is formed.
    """

    w_slots: list[int]
    violations: list[int]
    samples: int
    p_hat: list[float]
    ci_low: list[float]
    ci_high: list[float]
    n_effective: list[float]
    mean_service_bits: float
    utilization: float
    mean_backlog_bits: float
    mean_delay_slots: float
    seed: int
    horizon_slots: int
    warmup_slots: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _generators(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    snr_seq, err_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(snr_seq)), np.random.Generator(np.random.PCG64(err_seq))


def draw_snr(scheme: SchemeSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` i.i.d. instantaneous SNRs of ``scheme``.

    Integer gamma shapes are sums of unit exponentials; non-integer
    Nakagami shapes use numpy's rejection sampler.
    """
    kind, p = scheme.kind, scheme.params
    if kind in (SchemeKind.MRT_EXACT, SchemeKind.MRT_SUM):
        return rng.standard_exponential((size, p.M)).sum(axis=1) * p.zeta
    if kind is SchemeKind.OSTBC:
        return rng.standard_exponential((size, p.M)).sum(axis=1) * (p.snr / p.M)
    if kind is SchemeKind.TAS:
        return rng.standard_exponential((size, p.M)).max(axis=1) * p.zeta
    if kind is SchemeKind.NAKAGAMI:
        if float(scheme.m).is_integer():
            return rng.standard_exponential((size, int(scheme.m))).sum(axis=1) * p.snr
        return rng.gamma(scheme.m, p.snr, size)
    raise DomainError(f"cannot draw SNRs for scheme kind {kind.value!r}")


def _rate_nats(scheme: SchemeSpec, fb: Optional[FiniteBlocklengthSpec], rng: np.random.Generator,
               err_rng: np.random.Generator, size: int) -> np.ndarray:
    kind = scheme.kind
    if kind is SchemeKind.GAUSSIAN:
        return scheme.mu + math.sqrt(scheme.sigma2) * rng.standard_normal(size)
    if kind is SchemeKind.HARDENING:
        return np.full(size, math.log1p(scheme.params.zeta * scheme.params.M))
    gamma = draw_snr(scheme, rng, size)
    if fb is None:
        return np.log1p(gamma)
    rate = np.log1p(gamma) - fb.F * np.sqrt(dispersion(gamma)) + fb.log_shift
    ok = err_rng.random(size) >= fb.eps
    return np.where(ok, np.maximum(rate, 0.0), 0.0)


def mean_service_bits(scheme: SchemeSpec, slot: SlotSpec, fb: Optional[FiniteBlocklengthSpec] = None) -> float:
    """Expected bits served per slot, by quadrature."""
    return slot.B * oracle.ergodic_rate(scheme, fb)


def estimate_rate_moments(scheme: SchemeSpec, samples: int, seed: int) -> tuple[float, float]:
    """Sample mean and variance of ``ln(1 + gamma)`` in nats."""
    if samples < 2:
        raise DomainError("need at least two samples")
    rng, _ = _generators(seed)
    if scheme.kind is SchemeKind.HARDENING:
        return math.log1p(scheme.params.zeta * scheme.params.M), 0.0
    rates = np.log1p(draw_snr(scheme, rng, samples))
    return float(rates.mean()), float(rates.var(ddof=1))


def backlog_path(service_bits: np.ndarray, rho: float, initial: float = 0.0) -> np.ndarray:
    """Backlog at the ``len(service_bits)`` slot boundaries after ``initial``."""
    c = np.cumsum(rho - service_bits)
    return c + np.maximum(initial, -np.minimum.accumulate(c))


def virtual_delays(service_bits: np.ndarray, rho: float) -> np.ndarray:
    """Integer delay of the data arriving at each slot boundary, by direct search.

    Brute-force reference for small runs: ``W(t)`` is the smallest ``k``
    with cumulative departures at ``t + k`` covering ``rho t``. Unresolved
    arrivals at the end of the path are returned as -1.
    """
    b = np.concatenate([[0.0], backlog_path(service_bits, rho)])
    t = np.arange(len(b))
    departures = rho * t - b
    idx = np.searchsorted(departures, rho * t * (1 - 1e-15) - 1e-12, side="left")
    return np.where(idx < len(b), idx - t, -1)


def _wilson(k: float, n: float) -> tuple[float, float]:
    n_int = max(int(round(n)), 1)
    k_int = min(max(int(round(k * n_int / n)) if n > 0 else 0, 0), n_int)
    ci = stats.binomtest(k_int, n_int).proportion_ci(confidence_level=CONFIDENCE, method="wilson")
    return float(ci.low), float(ci.high)


class _DelayTracker:
    """Fluid FIFO delay of bits arriving at ``SUBSLOT_SAMPLES`` points per slot.

    Departures are interpolated linearly between slot boundaries, so the
    time average of the delay equals the fluid backlog over ``rho``.
    Arrivals whose departure lies beyond the current chunk are carried on.
    """

    def __init__(self, rho: float, start: int):
        self.rho = rho
        self.start = start
        self.pending = np.empty(0)
        self.total = 0.0
        self.count = 0

    def update(self, a: int, b0: float, backlog: np.ndarray) -> None:
        rho = self.rho
        if rho == 0.0:
            return
        n = len(backlog)
        steps = np.arange(n + 1, dtype=float)
        # departures since boundary a, relative to D(a)
        dep = rho * steps - np.concatenate([[b0], backlog]) + b0
        slots = a + np.arange(n)
        busy = (np.concatenate([[b0], backlog[:-1]]) > 0.0) | (backlog > 0.0)
        # a slot that starts and ends empty serves its own arrivals at once
        idle = int(np.count_nonzero(~busy & (slots >= self.start))) * SUBSLOT_SAMPLES
        offsets = (np.arange(SUBSLOT_SAMPLES) + 0.5) / SUBSLOT_SAMPLES
        times = np.concatenate([self.pending, (slots[busy][:, None] + offsets).ravel()])
        times = times[times >= self.start]
        self.count += idle
        target = rho * (times - a) + b0
        idx = np.searchsorted(dep, target, side="left")
        done = idx <= n
        ti, ii, tg = times[done], idx[done], target[done]
        lo = np.maximum(ii - 1, 0)
        span = dep[ii] - dep[lo]
        frac = np.where(span > 0, (tg - dep[lo]) / np.where(span > 0, span, 1.0), 0.0)
        leave = a + lo + np.where(ii > 0, frac, 0.0)
        self.total += float(np.sum(np.maximum(leave - ti, 0.0)))
        self.count += int(done.sum())
        self.pending = times[~done]


def run(config: SimConfig) -> SimResult:
    """Simulate ``config.horizon_slots`` slots and count delay violations."""
    scheme, fb = config.scheme, config.fb
    if scheme.kind not in _SNR_KINDS + _RATE_KINDS:
        raise DomainError(f"scheme kind {scheme.kind.value!r} cannot be simulated")
    rho, B = config.arrival.rho, config.slot.B
    mean_service = mean_service_bits(scheme, config.slot, fb)
    if rho > 0.0 and mean_service <= rho and not config.allow_unstable:
        raise UnstableQueueError(
            f"mean service {mean_service:.6g} bits/slot does not exceed arrivals {rho:.6g} bits/slot")

    horizon, warmup = config.horizon_slots, config.warmup_slots
    ws = np.asarray(config.w_grid, dtype=float)
    thresholds = rho * ws
    # boundaries tau in [first, horizon] are counted for every w
    first = warmup + config.w_grid[-1]
    samples = horizon - first + 1
    batch_len = max(samples // BATCHES, 1)
    n_batches = -(-samples // batch_len)
    batch_counts = np.zeros((len(ws), n_batches))

    rng, err_rng = _generators(config.seed)
    tracker = _DelayTracker(rho, warmup)
    backlog = 0.0
    served = 0.0
    backlog_area = 0.0
    for a in range(0, horizon, CHUNK_SLOTS):
        n = min(CHUNK_SLOTS, horizon - a)
        service = B * _rate_nats(scheme, fb, rng, err_rng, n)
        path = backlog_path(service, rho, backlog)
        # path[j] is the backlog at boundary a + j + 1
        served += float(service[max(warmup - a, 0):].sum()) if a + n > warmup else 0.0
        if a + n > warmup:
            j0 = max(warmup - a, 0)
            prev = np.concatenate([[backlog], path[:-1]])
            backlog_area += float(np.sum(0.5 * (prev[j0:] + path[j0:])))
        tracker.update(a, backlog, path)
        j_first = max(first - (a + 1), 0)
        if j_first < n:
            seg = path[j_first:]
            batch = (np.arange(a + 1 + j_first, a + 1 + n) - first) // batch_len
            for k, thr in enumerate(thresholds):
                hit = seg > thr
                batch_counts[k] += np.bincount(batch[hit], minlength=n_batches)
        backlog = float(path[-1])

    violations = batch_counts.sum(axis=1)
    sizes = np.full(n_batches, float(batch_len))
    sizes[-1] = samples - batch_len * (n_batches - 1)
    p_hat, lows, highs, n_eff = [], [], [], []
    for k in range(len(ws)):
        p = violations[k] / samples
        full = sizes == batch_len
        if p <= 0.0 or p >= 1.0 or full.sum() < 2:
            ne = float(samples)
        else:
            var_b = float(np.var(batch_counts[k][full] / batch_len, ddof=1))
            ne = float(samples) if var_b == 0.0 else min(float(samples), p * (1 - p) * batch_len / var_b)
        lo, hi = _wilson(p * ne, ne)
        p_hat.append(float(p))
        lows.append(min(lo, p))
        highs.append(max(hi, p))
        n_eff.append(ne)
    measured = horizon - warmup
    mean_backlog = backlog_area / measured
    mean_delay = tracker.total / tracker.count if tracker.count else 0.0
    return SimResult(
        w_slots=list(config.w_grid),
        violations=[int(v) for v in violations],
        samples=int(samples),
        p_hat=p_hat,
        ci_low=lows,
        ci_high=highs,
        n_effective=n_eff,
        mean_service_bits=served / measured,
        utilization=rho / mean_service if mean_service > 0 else math.inf,
        mean_backlog_bits=mean_backlog,
        mean_delay_slots=mean_delay,
        seed=config.seed,
        horizon_slots=horizon,
        warmup_slots=warmup,
        extra={"mean_service_bits_exact": mean_service, "pending_at_end": int(len(tracker.pending))},
    )
